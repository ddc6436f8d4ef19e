import logging

import numpy as np
from scipy.linalg import lu_factor

from utils.errors import ValidationError

logger = logging.getLogger(__name__)


def lu_det(matrix):
    """Determinant of a square (complex) matrix from an LU factorisation with partial pivoting."""
    a = np.asarray(matrix)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"determinant needs a square matrix, got shape {a.shape}")
    if a.shape[0] == 0:
        return 1.0 + 0.0j
    if not np.all(np.isfinite(a)):
        raise ValidationError("matrix has non-finite entries")
    lu, piv = lu_factor(a, check_finite=False)
    swaps = np.count_nonzero(piv != np.arange(a.shape[0]))
    sign = -1.0 if swaps % 2 else 1.0
    return sign * np.prod(np.diag(lu))


def det_i_minus(matrix, lam):
    """det(I - lam * A)."""
    a = np.asarray(matrix)
    return lu_det(np.eye(a.shape[0], dtype=complex) - lam * a)
