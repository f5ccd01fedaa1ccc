"""Dense linear-algebra helpers shared by all modules.

Matrix exponentials of non-normal matrices are evaluated through an
eigendecomposition when the eigenvector basis is well conditioned and fall
back to scaling-and-squaring (scipy's degree-13 Pade) otherwise.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import expm as _expm_pade

# Eigenbasis condition number above which expm falls back to Pade.
EIG_COND_LIMIT = 1.0e6

# Default tolerances: plain linear-algebra identities vs. checks that go
# through matrix exponentials.
TOL_LINALG = 1.0e-10
TOL_EXP = 1.0e-8


def as_complex_matrix(M, name: str = "matrix") -> np.ndarray:
    A = np.asarray(M, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {A.shape}")
    return A


def is_hermitian(M: np.ndarray, tol: float = TOL_LINALG) -> bool:
    scale = 1.0 + np.abs(M).max() if M.size else 1.0
    return bool(np.abs(M - M.conj().T).max() <= tol * scale)


def min_eig_hermitian(M: np.ndarray) -> float:
    """Smallest eigenvalue of a Hermitian matrix."""
    return float(np.linalg.eigvalsh(M).min())


class Propagator:
    """Reusable evaluator for exp(z*M) at many scalars z.

    Diagonalizes M once; if the eigenvector matrix is ill conditioned the
    evaluator degrades to one Pade expm call per request.
    """

    def __init__(self, M):
        self.M = as_complex_matrix(M)
        self._diag = None
        self._memo: dict = {}
        if self.M.shape[0] == 0:
            return
        try:
            w, V = np.linalg.eig(self.M)
            cond = np.linalg.cond(V)
            if np.isfinite(cond) and cond < EIG_COND_LIMIT:
                self._diag = (w, V, np.linalg.inv(V))
        except np.linalg.LinAlgError:
            self._diag = None

    def __call__(self, z: complex) -> np.ndarray:
        key = complex(z)
        out = self._memo.get(key)
        if out is not None:
            return out
        if z == 0:
            out = np.eye(self.M.shape[0], dtype=complex)
        elif self._diag is not None:
            w, V, Vinv = self._diag
            out = (V * np.exp(z * w)) @ Vinv
        else:
            out = _expm_pade(z * self.M)
        if len(self._memo) < 4096:
            self._memo[key] = out
        return out


def expm_stable(M) -> np.ndarray:
    """exp(M) via eigendecomposition when safe, else scaling-and-squaring."""
    E = Propagator(M)(1.0)
    if not np.all(np.isfinite(E)):
        raise FloatingPointError("matrix exponential produced non-finite entries")
    return E


def matrix_to_json(M) -> dict:
    """Row-major [re, im] pair encoding shared by every report file."""
    A = np.atleast_2d(np.asarray(M, dtype=complex))
    return {
        "shape": list(A.shape),
        "data": [[[float(z.real), float(z.imag)] for z in row] for row in A],
    }


def matrix_from_json(obj) -> np.ndarray:
    data = obj["data"]
    A = np.array([[complex(re, im) for re, im in row] for row in data], dtype=complex)
    if list(A.shape) != list(obj["shape"]):
        raise ValueError(f"matrix payload shape {A.shape} != declared {obj['shape']}")
    return A
