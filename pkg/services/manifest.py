"""
Dispel Run Manifests
One `<out>.manifest.json` per command run, with parameters and output digests
"""

import hashlib
import json
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from config import settings
from models.schemas import RunManifest
from utils.logger import get_logger

logger = get_logger("manifest")

PathLike = Union[str, Path]


def file_digest(path: PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_path(out: PathLike) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


class ManifestRecorder:
    """
    Tracks one command run.

    Features:
    - Wall-clock timing from construction
    - Output registration with sha256 digests at write time
    - Partial flag for interrupted runs
    """

    def __init__(self, command: str, params: Dict[str, Any], seed: Optional[int] = None):
        self.command = command
        self.params = params
        self.seed = seed
        self.outputs: List[Path] = []
        self._start = time.perf_counter()

    def add(self, path: PathLike):
        path = Path(path)
        if path not in self.outputs:
            self.outputs.append(path)

    def build(self, partial: bool = False) -> RunManifest:
        return RunManifest(
            command=self.command,
            params=self.params,
            seed=self.seed,
            version=settings.APP_VERSION,
            duration_s=time.perf_counter() - self._start,
            digests={p.name: file_digest(p) for p in self.outputs if p.exists()},
            partial=partial,
        )

    def write(self, anchor: PathLike, partial: bool = False) -> Path:
        """Write the manifest next to `anchor` (the primary output)"""
        manifest = self.build(partial=partial)
        target = manifest_path(anchor)
        target.write_text(json.dumps(manifest.flat(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info(
            "manifest_written",
            extra={"command": self.command, "path": str(target), "partial": partial, "outputs": len(manifest.digests)},
        )
        return target


def load_manifest(path: PathLike) -> Dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))
