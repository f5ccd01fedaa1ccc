"""System data: one-particle matrices, interaction vertices, preset builders.

Conventions
-----------
A one-particle model is the tuple (|X|, eps, A, B, Q, metric).  The basis is
normalized to <x|x> = 1/eps, so every operator exponential downstream acts
through the eps-scaled kernels eps*A, eps*B, eps*Q.  A and Q are Hermitian,
B is Hermitian positive semidefinite; the dissipative generator is A - iB.

An interaction is a finite family of vertex tensors v[(m, mbar)] of shape
(|X|,)*m + (|X|,)*mbar (row block = annihilation arguments x, column block =
creation arguments y), antisymmetric within each block, with m + mbar even
and no constant term.  A real coupling multiplies every vertex.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .linalg import TOL_LINALG, as_complex_matrix, is_hermitian, min_eig_hermitian

# Partial sums of sum_{n>=1} (1+n)^-2, used to pad the diagonal of the
# decaying-kernel preset so its spectral gap is volume independent.
_ZETA2_MINUS_1 = np.pi ** 2 / 6.0 - 1.0


class ModelError(ValueError):
    """Invalid one-particle data or interaction vertices."""


@dataclass(frozen=True)
class OneParticleModel:
    """Free data of the system: site count, basis scale and kernels."""

    n_sites: int
    epsilon: float
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    metric: Optional[Callable[[int, int], float]] = None

    def __post_init__(self):
        n = self.n_sites
        if n < 1:
            raise ModelError("n_sites must be a positive integer")
        if self.epsilon <= 0:
            raise ModelError("epsilon must be positive")
        for name in ("A", "B", "Q"):
            M = as_complex_matrix(getattr(self, name), name)
            if M.shape != (n, n):
                raise ModelError(f"{name} must be {n}x{n}, got {M.shape}")
            if not is_hermitian(M):
                raise ModelError(f"{name} must be Hermitian")
            object.__setattr__(self, name, M)
        if min_eig_hermitian(self.B) < -TOL_LINALG:
            raise ModelError("B must be positive semidefinite")
        if self.metric is not None:
            for x in range(n):
                if abs(self.metric(x, x)) > 0:
                    raise ModelError("metric must vanish on the diagonal")
                for y in range(n):
                    if abs(self.metric(x, y) - self.metric(y, x)) > 0:
                        raise ModelError("metric must be symmetric")

    # eps-scaled kernels; every propagator below is an exponential of these.
    @property
    def A_plus(self) -> np.ndarray:
        """eps*(A + iB), the backward-branch generator kernel."""
        return self.epsilon * (self.A + 1j * self.B)

    @property
    def A_minus(self) -> np.ndarray:
        """eps*(A - iB), the forward-branch generator kernel."""
        return self.epsilon * (self.A - 1j * self.B)

    @property
    def Q_scaled(self) -> np.ndarray:
        return self.epsilon * self.Q

    def is_dissipative(self, tol: float = TOL_LINALG) -> bool:
        return min_eig_hermitian(self.epsilon * self.B) > tol

    def distance(self, x: int, y: int) -> float:
        if self.metric is not None:
            return float(self.metric(x, y))
        return float(abs(x - y))


@dataclass
class Interaction:
    """Even polynomial in the ladder fields, given by its vertex tensors."""

    vertices: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    coupling: float = 1.0

    def __post_init__(self):
        clean = {}
        for (m, mbar), v in self.vertices.items():
            v = np.asarray(v, dtype=complex)
            if (m + mbar) % 2 != 0:
                raise ModelError(f"odd interaction vertex ({m},{mbar})")
            if m == 0 and mbar == 0:
                if np.any(v != 0):
                    raise ModelError("constant vertex v_(0,0) must vanish")
                continue
            if v.ndim != m + mbar:
                raise ModelError(
                    f"vertex ({m},{mbar}) must have {m + mbar} indices, got {v.ndim}"
                )
            _check_block_antisymmetry(v, m, mbar)
            if np.any(v != 0):
                clean[(m, mbar)] = v
        self.vertices = clean

    def scaled_vertices(self) -> Dict[Tuple[int, int], np.ndarray]:
        """Vertices with the coupling folded in."""
        return {k: self.coupling * v for k, v in self.vertices.items()}

    def is_zero(self) -> bool:
        return self.coupling == 0.0 or not self.vertices

    def max_degree(self) -> int:
        return max((m + mb for m, mb in self.vertices), default=0)

    def rescaled(self, coupling: float) -> "Interaction":
        return Interaction(vertices=dict(self.vertices), coupling=coupling)


def _check_block_antisymmetry(v: np.ndarray, m: int, mbar: int, tol: float = TOL_LINALG):
    scale = 1.0 + np.abs(v).max() if v.size else 1.0
    for i in range(m - 1):
        if np.abs(v + np.swapaxes(v, i, i + 1)).max() > tol * scale:
            raise ModelError(f"vertex ({m},{mbar}) not antisymmetric in x-block")
    for j in range(mbar - 1):
        if np.abs(v + np.swapaxes(v, m + j, m + j + 1)).max() > tol * scale:
            raise ModelError(f"vertex ({m},{mbar}) not antisymmetric in y-block")


def antisymmetrize_blocks(v: np.ndarray, m: int, mbar: int) -> np.ndarray:
    """Project a raw tensor onto the block-antisymmetric subspace."""
    from itertools import permutations

    v = np.asarray(v, dtype=complex)
    out = np.zeros_like(v)
    perms_x = list(permutations(range(m))) if m else [()]
    perms_y = list(permutations(range(mbar))) if mbar else [()]
    for px in perms_x:
        sx = _perm_sign(px)
        for py in perms_y:
            sy = _perm_sign(py)
            axes = list(px) + [m + j for j in py]
            out += sx * sy * np.transpose(v, axes)
    return out / (len(perms_x) * len(perms_y))


def _perm_sign(p) -> int:
    s = 1
    p = list(p)
    for i in range(len(p)):
        for j in range(i + 1, len(p)):
            if p[i] > p[j]:
                s = -s
    return s


def density_density(n_sites: int, pairs, lam: float = 1.0) -> Interaction:
    """Quartic vertex whose operator equals lam * sum n_i n_j at eps = 1.

    `pairs` is an iterable of site pairs (i, j), i != j.
    """
    v = np.zeros((n_sites,) * 4, dtype=complex)
    for (i, j) in pairs:
        if i == j:
            raise ModelError("density-density pair needs two distinct sites")
        # n_i n_j = a*(i) a*(j) a(j) a(i); matching the vertex ordering
        # a*(y1) a*(y2) a(x1) a(x2) gives raw entry v(j,i;i,j) = 1, and the
        # block sum over both orders of each index pair restores the factor
        # the antisymmetrization divides out.
        v[j, i, i, j] += lam
    v = antisymmetrize_blocks(v, 2, 2)
    return Interaction(vertices={(2, 2): v})


def random_antisymmetric_vertex(n_sites: int, m: int, mbar: int, rng,
                                scale: float = 1.0) -> np.ndarray:
    raw = rng.normal(size=(n_sites,) * (m + mbar)) + 1j * rng.normal(
        size=(n_sites,) * (m + mbar))
    return scale * antisymmetrize_blocks(raw, m, mbar)


# ---------------------------------------------------------------------------
# Presets


def preset_model(name: str, size: int = 1, **params) -> OneParticleModel:
    """Named model builders used by the command-line harness.

    - "single-mode":        1x1 with A = Q = [[q]], B = [[b]].
    - "chain-hermitian":    open chain, nearest-neighbour hopping A,
                            Q = A + mu*I, B = 0.
    - "dissipative-uniform": Q = A = B, a gapped kernel decaying like
                            (1 + |x-y|)^-nu; the gap is volume uniform.
    """
    if name == "single-mode":
        q = float(params.get("q", 1.0))
        b = float(params.get("b", 0.0))
        eps = float(params.get("epsilon", 1.0))
        A = np.array([[q]], dtype=complex)
        B = np.array([[b]], dtype=complex)
        return OneParticleModel(1, eps, A, B, A.copy())

    if name == "chain-hermitian":
        L = int(size)
        hopping = float(params.get("hopping", 1.0))
        mu = float(params.get("mu", 2.0))
        eps = float(params.get("epsilon", 1.0))
        A = np.zeros((L, L), dtype=complex)
        for i in range(L - 1):
            A[i, i + 1] = A[i + 1, i] = hopping
        Q = A + mu * np.eye(L)
        B = np.zeros((L, L), dtype=complex)
        return OneParticleModel(L, eps, A, B, Q, metric=lambda x, y: abs(x - y))

    if name == "dissipative-uniform":
        L = int(size)
        gap = float(params.get("gap", 0.5))
        nu = float(params.get("nu", 2.0))
        strength = float(params.get("strength", 0.3))
        eps = float(params.get("epsilon", 1.0))
        K = np.zeros((L, L), dtype=complex)
        for x in range(L):
            for y in range(L):
                if x != y:
                    K[x, y] = strength * (1.0 + abs(x - y)) ** (-nu)
        # Gershgorin pad: row sums are at most 2*strength*(zeta(nu)-1) for
        # nu = 2, so this diagonal keeps min eig >= gap at every volume.
        if nu == 2.0:
            pad = 2.0 * strength * _ZETA2_MINUS_1
        else:
            pad = 2.0 * strength * sum((1.0 + k) ** (-nu) for k in range(1, 10000))
        K += (gap + pad) * np.eye(L)
        model = OneParticleModel(L, eps, K, K.copy(), K.copy(),
                                 metric=lambda x, y: abs(x - y))
        if min_eig_hermitian(model.Q) < gap - TOL_LINALG:
            raise ModelError("dissipative-uniform preset lost its spectral gap")
        return model

    raise ModelError(f"unknown preset model '{name}'")


def random_model(n_sites: int, rng, epsilon: float = 1.0,
                 dissipative: bool = False, b_floor: float = 0.1) -> OneParticleModel:
    """Random Hermitian model, optionally with strictly positive B."""
    def herm(n):
        M = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        return (M + M.conj().T) / 2

    A = herm(n_sites)
    Q = herm(n_sites)
    if dissipative:
        w, U = np.linalg.eigh(herm(n_sites))
        B = U @ np.diag(np.abs(w) + b_floor) @ U.conj().T
    else:
        B = np.zeros((n_sites, n_sites), dtype=complex)
    return OneParticleModel(n_sites, epsilon, A, B, Q)
