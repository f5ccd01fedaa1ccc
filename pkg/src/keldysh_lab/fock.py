"""Exact finite-dimensional ground truth on the 2^|X| occupation space.

Basis convention: occupation bitstrings with site 0 in the least significant
bit and the sign string acting on lower-index sites, so the canonical ladder
matrix elements are

    c_x |b> = (-1)^{popcount(b & (2^x - 1))} |b - 2^x>      (bit x set).

The physical fields are a(x) = eps^{-1/2} c_x, which realizes the
anticommutator {a(x), a*(y)} = delta_xy / eps of the eps-normalized basis.
Every quadratic form (a*, K a) then equals c^dag (eps K) c.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .linalg import expm_stable
from .models import Interaction, ModelError, OneParticleModel

FOCK_SITE_CAP = 10
MOMENT_DEGREE_CAP = 6


class FockError(ValueError):
    pass


@dataclass
class FockSpace:
    n_sites: int
    epsilon: float
    dim: int
    annihilators: list  # dense a(x) matrices, x = 0..n_sites-1

    def creator(self, x: int) -> np.ndarray:
        return self.annihilators[x].conj().T

    def monomial_image(self, bits: int, creators: Sequence[int],
                       annihilators: Sequence[int]) -> Optional[Tuple[int, int]]:
        """Apply c^dag(creators[0])...c^dag(...)c(annihilators[0])... to |bits>.

        Operator strings act right to left, so annihilators[-1] hits first.
        Returns (sign, new_bits) or None when the state is killed.
        """
        sign = 1
        b = bits
        for y in reversed(annihilators):
            mask = 1 << y
            if not b & mask:
                return None
            sign *= -1 if bin(b & (mask - 1)).count("1") % 2 else 1
            b ^= mask
        for x in reversed(creators):
            mask = 1 << x
            if b & mask:
                return None
            sign *= -1 if bin(b & (mask - 1)).count("1") % 2 else 1
            b |= mask
        return sign, b

    def monomial_trace(self, creators: Sequence[int], annihilators: Sequence[int],
                       M: np.ndarray) -> complex:
        """Tr(a*(x_1)...a*(x_p) a(y_1)...a(y_q) M) with the given left-to-right
        site orders; includes the eps^{-(p+q)/2} field normalization."""
        total = 0.0 + 0.0j
        for b in range(self.dim):
            hit = self.monomial_image(b, creators, annihilators)
            if hit is not None:
                s, b2 = hit
                total += s * M[b, b2]
        k = len(creators) + len(annihilators)
        return total * self.epsilon ** (-0.5 * k)


def build_fock_space(model: OneParticleModel, cap: int = FOCK_SITE_CAP) -> FockSpace:
    n = model.n_sites
    if n > cap:
        raise FockError(f"{n} sites exceeds the Fock cap of {cap}")
    dim = 1 << n
    scale = model.epsilon ** -0.5
    ops = []
    for x in range(n):
        mask = 1 << x
        a = np.zeros((dim, dim), dtype=complex)
        for b in range(dim):
            if b & mask:
                sign = -1.0 if bin(b & (mask - 1)).count("1") % 2 else 1.0
                a[b ^ mask, b] = sign * scale
        ops.append(a)
    return FockSpace(n_sites=n, epsilon=model.epsilon, dim=dim, annihilators=ops)


def quadratic_operator(fock: FockSpace, kernel) -> np.ndarray:
    """(a*, K a)_X = sum over occupation states of c^dag (eps K) c."""
    K = np.asarray(kernel, dtype=complex)
    n = fock.n_sites
    if K.shape != (n, n):
        raise FockError(f"kernel must be {n}x{n}, got {K.shape}")
    Ks = fock.epsilon * K
    H = np.zeros((fock.dim, fock.dim), dtype=complex)
    for b in range(fock.dim):
        for y in range(n):
            ymask = 1 << y
            if not b & ymask:
                continue
            sy = -1.0 if bin(b & (ymask - 1)).count("1") % 2 else 1.0
            b1 = b ^ ymask
            for x in range(n):
                if Ks[x, y] == 0:
                    continue
                xmask = 1 << x
                if b1 & xmask:
                    continue
                sx = -1.0 if bin(b1 & (xmask - 1)).count("1") % 2 else 1.0
                H[b1 | xmask, b] += Ks[x, y] * sx * sy
    return H


def interaction_operator(fock: FockSpace, V: Interaction) -> np.ndarray:
    """Normal-ordered polynomial sum over the vertex tensors.

    Each vertex contributes eps^{m+mbar} * v(x; y) * a*(y_1)..a*(y_mbar)
    a(x_1)..a(x_m), i.e. eps^{(m+mbar)/2} times the canonical ladder string.
    """
    n = fock.n_sites
    H = np.zeros((fock.dim, fock.dim), dtype=complex)
    for (m, mbar), v in V.scaled_vertices().items():
        if (m + mbar) % 2 != 0:
            raise ModelError("odd interaction")
        weight = fock.epsilon ** (0.5 * (m + mbar))
        idx = np.nonzero(v)
        for flat in zip(*idx):
            xs = flat[:m]
            ys = flat[m:]
            coef = weight * v[flat]
            for b in range(fock.dim):
                hit = fock.monomial_image(b, list(ys), list(xs))
                if hit is not None:
                    s, b2 = hit
                    H[b2, b] += coef * s
    return H


@dataclass
class EvolutionState:
    """Hamiltonian, initial Gaussian state and total time, plus caches."""

    fock: FockSpace
    model: OneParticleModel
    interaction: Interaction
    beta: float
    T: float
    H0: np.ndarray = field(init=False)
    V_op: np.ndarray = field(init=False)
    H: np.ndarray = field(init=False)
    rho0: np.ndarray = field(init=False)
    Z0: float = field(init=False)
    _evolved: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.beta <= 0:
            raise FockError("beta must be positive")
        if self.T < 0:
            raise FockError("T must be nonnegative")
        self.H0 = quadratic_operator(self.fock, self.model.A - 1j * self.model.B)
        self.V_op = interaction_operator(self.fock, self.interaction)
        self.H = self.H0 + self.V_op
        self.rho0 = expm_stable(-self.beta * quadratic_operator(self.fock, self.model.Q))
        z0 = np.trace(self.rho0)
        self.Z0 = float(z0.real)
        closed = np.linalg.det(
            np.eye(self.fock.n_sites) + expm_stable(-self.beta * self.model.Q_scaled))
        if abs(z0 - closed) > 1e-8 * abs(closed):
            raise FockError("Tr(rho0) disagrees with det(1 + e^{-beta eps Q})")

    def evolved_matrix(self) -> np.ndarray:
        """e^{-iHT} rho0 e^{+iH^dag T}, cached."""
        if self._evolved is None:
            fwd = expm_stable(-1j * self.H * self.T)
            bwd = expm_stable(1j * self.H.conj().T * self.T)
            self._evolved = fwd @ self.rho0 @ bwd
        return self._evolved

    def Z_generating(self) -> complex:
        """Z(0,0) = Tr(e^{iH^dag T} e^{-iHT} rho0); equals Z0 when H is normal
        Hermitian but shrinks for dissipative evolution."""
        return complex(np.trace(self.evolved_matrix()))


def build_evolution_state(fock: FockSpace, model: OneParticleModel,
                          interaction: Interaction, beta: float, T: float) -> EvolutionState:
    return EvolutionState(fock=fock, model=model, interaction=interaction,
                          beta=beta, T=T)


def exact_expectation(state: EvolutionState, O: np.ndarray) -> complex:
    """<O>_T = Tr(e^{iH^dag T} O e^{-iHT} rho0) / Z0."""
    M = state.evolved_matrix()
    if not np.all(np.isfinite(M)):
        raise FloatingPointError("evolved state is not finite")
    return complex(np.trace(O @ M) / state.Z0)


def exact_moments(state: EvolutionState, cap: int = 4,
                  normalization: str = "generating") -> Dict[Tuple[int, int], np.ndarray]:
    """Ordered-monomial moment tensors gamma_{m,mbar} for m + mbar <= cap.

    Entry (x_1..x_m, y_1..y_mbar) is the normalized trace of
    a*(x_1)..a*(x_m) a(y_mbar)..a(y_1) against the evolved state.
    `normalization` picks the divisor: "generating" -> Z(0,0) (the value the
    covariance/Wick machinery reproduces), "initial" -> Z0.
    """
    if cap > MOMENT_DEGREE_CAP:
        raise FockError(f"moment degree cap {cap} exceeds {MOMENT_DEGREE_CAP}")
    if normalization == "generating":
        norm = state.Z_generating()
    elif normalization == "initial":
        norm = state.Z0
    else:
        raise ValueError("normalization must be 'generating' or 'initial'")
    M = state.evolved_matrix()
    n = state.fock.n_sites
    out: Dict[Tuple[int, int], np.ndarray] = {}
    for m in range(cap + 1):
        for mbar in range(cap + 1 - m):
            if m + mbar == 0 or m + mbar > cap:
                continue
            tensor = np.zeros((n,) * (m + mbar), dtype=complex)
            for flat in np.ndindex(*tensor.shape):
                xs = list(flat[:m])
                ys = list(flat[m:])
                if len(set(xs)) < m or len(set(ys)) < mbar:
                    continue
                # operator order: a*(x_1)..a*(x_m) a(y_mbar)..a(y_1)
                tensor[flat] = state.fock.monomial_trace(xs, ys[::-1], M) / norm
            out[(m, mbar)] = tensor
    return out


def trotter_generating(state: EvolutionState, V: Interaction, N: int
                       ) -> Tuple[complex, np.ndarray]:
    """Product-formula generating value and two-point table at step count N.

    Z_N = Tr((C_N^dag D_N^dag)^N (C_N D_N)^N rho0) with C_N = e^{-i(T/N)H0}
    and D_N = 1 - i(T/N)V; the returned gamma table divides the a*(x)a(y)
    traces by Z_N.
    """
    if N < 1:
        raise FockError("N must be >= 1")
    fock = state.fock
    H0 = state.H0
    V_op = interaction_operator(fock, V)
    dt = state.T / N
    I = np.eye(fock.dim, dtype=complex)
    C = expm_stable(-1j * dt * H0)
    D = I - 1j * dt * V_op
    fwd = np.linalg.matrix_power(C @ D, N)
    bwd = np.linalg.matrix_power(C.conj().T @ D.conj().T, N)
    core = fwd @ state.rho0 @ bwd
    Z_N = complex(np.trace(core))
    n = fock.n_sites
    gamma = np.zeros((n, n), dtype=complex)
    for x in range(n):
        for y in range(n):
            gamma[x, y] = fock.monomial_trace([x], [y], core) / Z_N
    return Z_N, gamma
