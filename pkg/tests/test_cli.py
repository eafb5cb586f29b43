"""
End-to-end tests of the dispel command line
"""

import pandas as pd
import pytest

import cli.experiments as experiment_commands
from core.experiments import FIGURE2_COLUMNS
from main import run
from services.manifest import file_digest, load_manifest, manifest_path


def _gen(out_dir, *extra):
    return run(["gen", "--out-dir", str(out_dir), "--n", "200", "--d", "8", "--m", "8", *extra])


def test_gen_is_reproducible(tmp_path):
    """Same flags twice give byte-identical files and a manifest with their digest"""
    for name in ("a", "b"):
        assert _gen(tmp_path / name, "--seed", "11") == 0
    first = (tmp_path / "a" / "data.csv").read_bytes()
    assert first == (tmp_path / "b" / "data.csv").read_bytes()
    manifest = load_manifest(manifest_path(tmp_path / "a" / "data.csv"))
    assert manifest["command"] == "gen"
    assert manifest["seed"] == 11
    assert manifest["sha256.data.csv"] == file_digest(tmp_path / "a" / "data.csv")


def test_gen_seed_changes_output(tmp_path):
    """Different seeds, different data"""
    _gen(tmp_path / "a", "--seed", "1")
    _gen(tmp_path / "b", "--seed", "2")
    assert (tmp_path / "a" / "data.csv").read_bytes() != (tmp_path / "b" / "data.csv").read_bytes()


def test_gen_bad_mu_is_usage_error(tmp_path):
    """mu outside [0, 1] exits 2 and writes nothing"""
    assert _gen(tmp_path, "--mu", "1.5") == 2
    assert not (tmp_path / "data.csv").exists()


def test_unknown_command_exits_2():
    """argparse rejects unknown subcommands"""
    with pytest.raises(SystemExit) as exc:
        run(["frobnicate"])
    assert exc.value.code == 2


def test_balanced_size_must_cover_groups(tmp_path):
    """Balanced n not divisible by the group count is a validation error"""
    assert _gen(tmp_path, "--kind", "balanced", "--n", "6") == 3


def test_binary_format(tmp_path):
    """--format bin writes a DSPL file"""
    assert _gen(tmp_path, "--format", "bin") == 0
    assert (tmp_path / "data.bin").read_bytes()[:4] == b"DSPL"


def test_ridge_then_eval(tmp_path):
    """Fit on generated data, then report per-group MSE"""
    assert _gen(tmp_path, "--n", "400") == 0
    data = str(tmp_path / "data.csv")
    assert run(["ridge", "--out-dir", str(tmp_path), "--data", data, "--lambda", "0.1"]) == 0
    weights = pd.read_csv(tmp_path / "weights.csv")
    assert list(weights.columns) == [f"w{j}" for j in range(8)] + ["b"]
    assert run([
        "eval", "--out-dir", str(tmp_path), "--weights", str(tmp_path / "weights.csv"),
        "--data", data, "--metric", "mse", "--restrict=-1|1,1|-1",
    ]) == 0
    report = pd.read_csv(tmp_path / "report.csv")
    assert list(report.columns) == ["group", "count", "value"]
    assert list(report["group"].iloc[-2:]) == ["worst", "avg"]
    assert report["count"].iloc[-1] == 400
    assert manifest_path(tmp_path / "report.csv").exists()


def test_eval_decision_needs_accuracy(tmp_path):
    """--decision with --metric mse is a usage error"""
    _gen(tmp_path)
    run(["ridge", "--out-dir", str(tmp_path), "--data", str(tmp_path / "data.csv"), "--lambda", "0.1"])
    code = run([
        "eval", "--out-dir", str(tmp_path), "--weights", str(tmp_path / "weights.csv"),
        "--data", str(tmp_path / "data.csv"), "--metric", "mse", "--decision", "threshold",
    ])
    assert code == 2


def test_mix_writes_trace(tmp_path):
    """Full mixing records a partner for every row"""
    _gen(tmp_path, "--out", "ft.csv")
    _gen(tmp_path, "--kind", "balanced", "--n", "8", "--out", "bal.csv")
    code = run([
        "mix", "--out-dir", str(tmp_path), "--ft", str(tmp_path / "ft.csv"), "--bal", str(tmp_path / "bal.csv"),
        "--alpha", "1", "--s", "0.5", "--out", "mixed.csv", "--trace", "trace.csv",
    ])
    assert code == 0
    trace = pd.read_csv(tmp_path / "trace.csv")
    assert len(trace) == 200
    assert trace["mixed"].all()
    manifest = load_manifest(manifest_path(tmp_path / "mixed.csv"))
    assert "sha256.trace.csv" in manifest


def test_mix_dimension_mismatch_exits_3(tmp_path):
    """Datasets of different width cannot be mixed"""
    _gen(tmp_path, "--out", "ft.csv")
    _gen(tmp_path, "--kind", "balanced", "--n", "8", "--d", "6", "--out", "bal.csv")
    code = run([
        "mix", "--out-dir", str(tmp_path), "--ft", str(tmp_path / "ft.csv"), "--bal", str(tmp_path / "bal.csv"),
        "--alpha", "1", "--s", "0.5", "--out", "mixed.csv",
    ])
    assert code == 3


def test_missing_input_exits_3(tmp_path):
    """Absent dataset file is a validation error"""
    assert run(["ridge", "--out-dir", str(tmp_path), "--data", str(tmp_path / "none.csv"), "--lambda", "1"]) == 3


def test_theory_table(tmp_path):
    """One row per (p, s) on the requested grid"""
    code = run(["theory", "--out-dir", str(tmp_path), "--p", "0.7,0.9", "--s-grid", "0:1:0.5", "--variant", "printed"])
    assert code == 0
    table = pd.read_csv(tmp_path / "theory.csv")
    assert list(table.columns) == ["p", "s", "loss"]
    assert len(table) == 6


def test_theory_rejects_uncorrelated_p(tmp_path):
    """p must exceed 1/2"""
    assert run(["theory", "--out-dir", str(tmp_path), "--p", "0.4"]) == 2


def test_simulate_small(tmp_path):
    """Explicit sizes override the scale preset"""
    code = run([
        "simulate", "--out-dir", str(tmp_path), "--p", "0.9", "--s-grid", "0:1:0.5",
        "--n", "200", "--d", "40", "--m", "8", "--runs", "2",
    ])
    assert code == 0
    table = pd.read_csv(tmp_path / "sim.csv")
    assert list(table.columns) == ["p", "s", "mean", "stderr", "runs"]
    assert (table["runs"] == 2).all()


def test_scenario2_alignment_file(tmp_path):
    """Per-epoch w2 for both arms, starting at epoch 0"""
    assert run(["scenario2", "--out-dir", str(tmp_path), "--epochs", "50"]) == 0
    table = pd.read_csv(tmp_path / "alignment.csv")
    assert list(table.columns) == ["epoch", "unmixed_w2", "mixed_w2"]
    assert table["epoch"].iloc[0] == 0
    assert (table["unmixed_w2"] == 1.0).all()


def test_retrain_from_pool(tmp_path):
    """Planted pool through split, mix and SGD retraining"""
    assert _gen(tmp_path, "--kind", "planted", "--n", "2000", "--d", "16", "--out", "pool.csv") == 0
    code = run([
        "retrain", "--out-dir", str(tmp_path), "--pool", str(tmp_path / "pool.csv"),
        "--alpha", "1", "--s", "0.5", "--epochs", "3", "--patience", "3",
    ])
    assert code == 0
    report = pd.read_csv(tmp_path / "report.csv")
    assert report["group"].iloc[-1] == "avg"
    assert manifest_path(tmp_path / "weights.csv").exists()


def test_sweep_needs_a_grid(tmp_path):
    """Neither a preset nor explicit values is a usage error"""
    _gen(tmp_path, "--kind", "planted", "--n", "400", "--d", "8", "--out", "pool.csv")
    assert run(["sweep", "--out-dir", str(tmp_path), "--pool", str(tmp_path / "pool.csv")]) == 2
    assert run(["sweep", "--out-dir", str(tmp_path), "--pool", str(tmp_path / "pool.csv"), "--preset", "nope"]) == 2


def _planted_pool(tmp_path, n="2000"):
    assert _gen(tmp_path, "--kind", "planted", "--n", n, "--d", "16", "--out", "pool.csv") == 0
    return str(tmp_path / "pool.csv")


def _group_values(path):
    report = pd.read_csv(path)
    rows = report[~report["group"].isin(["worst", "avg"])]
    return dict(zip(rows["group"], rows["value"]))


def test_eval_single_class_file_keeps_label_coding(tmp_path):
    """A file holding only y=1 rows of {0,1} data scores like those groups of the full file"""
    pool = _planted_pool(tmp_path)
    assert run([
        "retrain", "--out-dir", str(tmp_path), "--pool", pool,
        "--alpha", "1", "--s", "0.5", "--epochs", "3", "--patience", "3",
    ]) == 0
    lines = (tmp_path / "pool.csv").read_text().splitlines()
    (tmp_path / "pos.csv").write_text("\n".join([lines[0]] + [x for x in lines[1:] if x.split(",")[0] == "1"]) + "\n")
    weights = str(tmp_path / "weights.csv")

    def evaluate(data, out, *extra):
        return run(["eval", "--out-dir", str(tmp_path), "--weights", weights, "--data", data, "--out", out, *extra])

    assert evaluate(str(tmp_path / "pos.csv"), "ambiguous.csv") == 2
    assert evaluate(str(tmp_path / "pos.csv"), "pos_report.csv", "--classes", "0,1") == 0
    assert evaluate(pool, "full_report.csv") == 0
    single = _group_values(tmp_path / "pos_report.csv")
    full = _group_values(tmp_path / "full_report.csv")
    assert set(single) == {"0|1", "1|1"}
    assert single == {g: full[g] for g in single}


def test_eval_classes_flag_needs_two_labels(tmp_path):
    """--classes takes exactly NEG,POS"""
    with pytest.raises(SystemExit) as exc:
        run(["eval", "--weights", "w.csv", "--data", "d.csv", "--classes", "1"])
    assert exc.value.code == 2


def _figure1(out_dir, p="0.9"):
    return run([
        "figure1", "--out-dir", str(out_dir), "--p", p, "--s-grid", "0:1:0.5",
        "--n", "200", "--d", "40", "--m", "8", "--runs", "2", "--seed", "5",
    ])


def test_figure1_writes_three_tables(tmp_path):
    """theory.csv, sim.csv and fig1.csv share the (p, s) grid; the manifest covers all three"""
    assert _figure1(tmp_path) == 0
    theory = pd.read_csv(tmp_path / "theory.csv")
    sim = pd.read_csv(tmp_path / "sim.csv")
    fig = pd.read_csv(tmp_path / "fig1.csv")
    assert list(theory.columns) == ["p", "s", "loss"]
    assert list(sim.columns) == ["p", "s", "mean", "stderr", "runs"]
    assert list(fig.columns) == ["p", "s", "theory", "sim_mean", "sim_stderr"]
    assert list(fig["s"]) == [0.0, 0.5, 1.0]
    assert (sim["runs"] == 2).all()
    assert list(theory["loss"]) == list(fig["theory"])
    manifest = load_manifest(manifest_path(tmp_path / "fig1.csv"))
    assert manifest["partial"] is False
    for name in ("theory.csv", "sim.csv", "fig1.csv"):
        assert manifest[f"sha256.{name}"] == file_digest(tmp_path / name)


def test_figure1_interrupt_keeps_finished_p(tmp_path, monkeypatch):
    """An interrupt after the first p exits 130 and leaves that p under a partial manifest"""
    full = experiment_commands.iter_figure1

    def interrupted(*args, **kwargs):
        yield next(full(*args, **kwargs))
        raise KeyboardInterrupt

    monkeypatch.setattr(experiment_commands, "iter_figure1", interrupted)
    assert _figure1(tmp_path, p="0.7,0.9") == 130
    fig = pd.read_csv(tmp_path / "fig1.csv")
    assert set(fig["p"]) == {0.7}
    manifest = load_manifest(manifest_path(tmp_path / "fig1.csv"))
    assert manifest["partial"] is True
    assert manifest["sha256.fig1.csv"] == file_digest(tmp_path / "fig1.csv")


def test_figure2_decomposition_table(tmp_path):
    """One row per s with the decomposition columns"""
    code = run([
        "figure2", "--out-dir", str(tmp_path), "--s-values", "0,0.5,1",
        "--n", "200", "--d", "40", "--m", "8",
    ])
    assert code == 0
    table = pd.read_csv(tmp_path / "figure2.csv")
    assert list(table.columns) == FIGURE2_COLUMNS
    assert list(table["s"]) == [0.0, 0.5, 1.0]
    assert (table["full_norm"] > 0).all()
    assert manifest_path(tmp_path / "figure2.csv").exists()


def test_figure2_needs_three_dimensions(tmp_path):
    """Core, spurious and at least one noise coordinate"""
    assert run(["figure2", "--out-dir", str(tmp_path), "--n", "200", "--d", "2", "--m", "8"]) == 2


def _sweep(out_dir, pool):
    return run([
        "sweep", "--out-dir", str(out_dir), "--pool", pool, "--seed", "3",
        "--alphas", "1,0.5", "--s-values", "0.2,0.8", "--epochs", "3", "--patience", "3",
        "--heatmap", "heat.csv",
    ])


def test_sweep_writes_table_and_best_head(tmp_path):
    """sweep.csv has one row per cell; best_weights.csv is a binary head over the pool's width"""
    pool = _planted_pool(tmp_path)
    assert _sweep(tmp_path / "run", pool) == 0
    table = pd.read_csv(tmp_path / "run" / "sweep.csv")
    assert list(table.columns) == ["alpha", "s", "wg_acc"]
    assert len(table) == 4
    weights = pd.read_csv(tmp_path / "run" / "best_weights.csv")
    assert list(weights.columns) == [f"w{j}" for j in range(16)] + ["b"]
    heat = pd.read_csv(tmp_path / "run" / "heat.csv")
    assert list(heat["alpha"]) == [1.0, 0.5]
    manifest = load_manifest(manifest_path(tmp_path / "run" / "sweep.csv"))
    for name in ("sweep.csv", "best_weights.csv", "heat.csv"):
        assert manifest[f"sha256.{name}"] == file_digest(tmp_path / "run" / name)


def test_sweep_rerun_is_byte_identical(tmp_path):
    """The manifest parameters reproduce every output exactly"""
    pool = _planted_pool(tmp_path)
    assert _sweep(tmp_path / "a", pool) == 0
    assert _sweep(tmp_path / "b", pool) == 0
    first = load_manifest(manifest_path(tmp_path / "a" / "sweep.csv"))
    second = load_manifest(manifest_path(tmp_path / "b" / "sweep.csv"))
    params = {k: v for k, v in first.items() if k.startswith("param.") and k != "param.out_dir"}
    assert params == {k: v for k, v in second.items() if k.startswith("param.") and k != "param.out_dir"}
    for name in ("sweep.csv", "best_weights.csv", "heat.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert first[f"sha256.{name}"] == second[f"sha256.{name}"]


def test_figure2_rerun_is_byte_identical(tmp_path):
    """Same seed and sizes, same decomposition file"""
    for name in ("a", "b"):
        assert run([
            "figure2", "--out-dir", str(tmp_path / name), "--s-values", "0,1",
            "--n", "200", "--d", "40", "--m", "8", "--seed", "9",
        ]) == 0
    assert (tmp_path / "a" / "figure2.csv").read_bytes() == (tmp_path / "b" / "figure2.csv").read_bytes()


def test_benchmark_arms_file(tmp_path):
    """Three arms per seed with worst-group never above the average"""
    code = run([
        "benchmark", "--out-dir", str(tmp_path), "--seeds", "2", "--dim", "16",
        "--pool-size", "2000", "--test-size", "1000", "--l", "5", "--sigma-noise", "0.5",
        "--lr", "0.05", "--epochs", "3", "--patience", "3",
    ])
    assert code == 0
    table = pd.read_csv(tmp_path / "arms.csv")
    assert list(table.columns) == ["arm", "seed", "worst", "avg"]
    assert len(table) == 6
    assert set(table["arm"]) == {"ft_only", "bal_only", "dispel"}
    assert (table["worst"] <= table["avg"]).all()
    assert manifest_path(tmp_path / "arms.csv").exists()
