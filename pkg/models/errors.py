"""
Dispel Error Types
Every failure the library raises, each mapped to a CLI exit code
"""

from typing import Optional, Tuple


class DispelError(Exception):
    """Base class for all library errors"""
    exit_code = 1


class UsageError(DispelError):
    """Bad flag values or flag combinations"""
    exit_code = 2


class ValidationError(DispelError, ValueError):
    """Input violates a documented precondition"""
    exit_code = 3


class EmptyGroupError(ValidationError):
    """A group named in the worst-group restriction has no rows"""

    def __init__(self, group):
        self.group = group
        super().__init__(f"group {group} has no rows; empty groups are never skipped")


class FormatError(ValidationError):
    """
    Malformed dataset or weights file.

    row counts file lines: the header is row 0, the first data line row 1.
    """

    def __init__(self, message: str, row: Optional[int] = None, byte_offset: Optional[int] = None):
        self.row = row
        self.byte_offset = byte_offset
        where = []
        if row is not None:
            where.append(f"row {row}")
        if byte_offset is not None:
            where.append(f"byte {byte_offset}")
        suffix = f" (at {', '.join(where)})" if where else ""
        super().__init__(message + suffix)


class NumericalError(DispelError, ArithmeticError):
    """A numerical procedure failed"""
    exit_code = 4


class FactorizationError(NumericalError):
    """Cholesky factorization of the regularized Gram failed"""

    def __init__(self, smallest_pivot: float):
        self.smallest_pivot = smallest_pivot
        super().__init__(
            f"Gram matrix is not positive definite (smallest pivot {smallest_pivot:.3e}); "
            "use lambda > 0"
        )


class DivergenceError(NumericalError):
    """Loss blew up during iterative training"""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss:.6g})")


class SingularityError(NumericalError):
    """psi1*psi3 - psi2^2 vanished in the closed form"""

    def __init__(self, psi: Tuple[float, float, float]):
        self.psi = psi
        super().__init__(
            "closed form is singular: psi1*psi3 - psi2^2 = 0 "
            f"(psi1={psi[0]:.6g}, psi2={psi[1]:.6g}, psi3={psi[2]:.6g})"
        )
