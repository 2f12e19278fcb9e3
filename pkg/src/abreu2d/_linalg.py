"""Shared sparse direct solve wrapper (deterministic SuperLU factorization)."""

import re

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularSystem(RuntimeError):
    """Raised when the sparse factorization hits an exactly singular pivot."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


def solve_sparse(A, b):
    A = sp.csc_matrix(A)
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:  # SuperLU reports the singular pivot in its message
        m = re.search(r"(\d+)", str(exc))
        pivot = int(m.group(1)) if m else None
        raise SingularSystem(f"singular linear system ({exc})", pivot=pivot) from exc
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SingularSystem("singular linear system (non-finite solution)", pivot=None)
    return x
