"""Contour covariance: continuum blocks and the time-discretized system.

Block conventions (all matrices are functions of the eps-scaled kernels):

    W        = e^{-beta eps Q} e^{+i eps A_+ T} e^{-i eps A_- T}
    f_minus  = (1 + W)^{-1},   f_plus = f_minus W,   f_minus + f_plus = 1

    C_-+(t,t') = e^{iA_+(T-t)} e^{-iA_-T} f_minus e^{iA_-t'}
    C_+-(t,t') = -e^{-iA_-t} f_minus e^{-beta eps Q} e^{iA_+t'}
    C_++(t,t') = [t >= t']  e^{-iA_-t} f_minus e^{iA_-t'}
               - [t <  t']  e^{-iA_-t} f_plus  e^{iA_-t'}
    C_--(t,t') = [t <= t']  e^{iA_+(T-t)} e^{-iA_-T} f_minus e^{iA_-T} e^{-iA_+(T-t')}
               - [t >  t']  e^{iA_+(T-t)} e^{-iA_-T} f_minus e^{-beta eps Q} e^{iA_+t'}

(indicators inclusive exactly as written; A_± shorthand for eps(A ± iB)).
The discrete matrix steps the forward (+) chain with U_N^dag and the
backward (-) chain with U_N, U_N = e^{i eps (A+iB) T/N}; with that
orientation its inverse equals the blocks above on the grid t_m =
(T/N)(m-1) to rounding error, and det equals det(1 + W) for every N.

Flat index layout of the discrete system: branch-major (+ block first),
then time slice m = 1..N+1, then site; fixed so serialized matrices are
bit-comparable across runs.

`block` returns plain matrices; `kernel` divides by eps, which is the
normalization whose determinants reproduce field moments.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .linalg import Propagator, expm_stable
from .models import OneParticleModel

FLAT_DIM_CAP = 4096

BRANCHES = ("+", "-")


class CovarianceError(ValueError):
    pass


@dataclass(frozen=True)
class KeldyshPoint:
    branch: str        # "+" or "-"
    time: float
    site: int
    order: int = 0     # discrete-slice tie break at equal times (see wick)

    def __post_init__(self):
        if self.branch not in BRANCHES:
            raise CovarianceError(f"branch must be '+' or '-', got {self.branch!r}")


def _later_eq(t, o, tp, op):
    """(t, o) >= (t', o') in the discrete-slice order."""
    if t != tp:
        return t > tp
    return o >= op


class ContinuumCovariance:
    """Evaluator for the four contour blocks of a one-particle model."""

    def __init__(self, model: OneParticleModel, beta: float, T: float):
        if beta <= 0 or T < 0:
            raise CovarianceError("need beta > 0 and T >= 0")
        self.model = model
        self.beta = float(beta)
        self.T = float(T)
        n = model.n_sites
        self.prop_plus = Propagator(model.A_plus)
        self.prop_minus = Propagator(model.A_minus)
        self.R = expm_stable(-beta * model.Q_scaled)
        self.W = self.R @ self.prop_plus(1j * T) @ self.prop_minus(-1j * T)
        one = np.eye(n, dtype=complex)
        try:
            # linear solve rather than explicit inversion, for conditioning
            self.f_minus = np.linalg.solve(one + self.W, one)
        except np.linalg.LinAlgError as exc:
            raise CovarianceError(
                "1 + e^{-beta eps Q} e^{i eps A_+ T} e^{-i eps A_- T} is "
                "singular; the model is pathological") from exc
        self.f_plus = self.f_minus @ self.W
        self._emT = self.prop_minus(-1j * T)
        self._epT = self.prop_plus(1j * T)

    def _check_time(self, t: float):
        if t < -1e-12 or t > self.T + 1e-12:
            raise CovarianceError(f"time {t} outside [0, {self.T}]")

    def block(self, bra: str, ket: str, t: float, tp: float,
              bra_order: int = 0, ket_order: int = 0) -> np.ndarray:
        """Matrix C_{bra,ket}(t, t'); `*_order` breaks equal-time ties."""
        self._check_time(t)
        self._check_time(tp)
        pm, pp = self.prop_minus, self.prop_plus
        if (bra, ket) == ("-", "+"):
            return pp(1j * (self.T - t)) @ self._emT @ self.f_minus @ pm(1j * tp)
        if (bra, ket) == ("+", "-"):
            return -pm(-1j * t) @ self.f_minus @ self.R @ pp(1j * tp)
        if (bra, ket) == ("+", "+"):
            if _later_eq(t, bra_order, tp, ket_order):
                return pm(-1j * t) @ self.f_minus @ pm(1j * tp)
            return -pm(-1j * t) @ self.f_plus @ pm(1j * tp)
        if (bra, ket) == ("-", "-"):
            head = pp(1j * (self.T - t)) @ self._emT @ self.f_minus
            if _later_eq(tp, ket_order, t, bra_order):
                return head @ pm(1j * self.T) @ pp(-1j * (self.T - tp))
            return -head @ self.R @ pp(1j * tp)
        raise CovarianceError(f"unknown branch pair ({bra},{ket})")

    def kernel(self, X: KeldyshPoint, Y: KeldyshPoint) -> complex:
        """Scalar kernel value C(X, Y) = block/eps at the two sites."""
        M = self.block(X.branch, Y.branch, X.time, Y.time, X.order, Y.order)
        return complex(M[X.site, Y.site]) / self.model.epsilon

    def kernel_block(self, bra: str, ket: str, t: float, tp: float,
                     bra_order: int = 0, ket_order: int = 0) -> np.ndarray:
        return self.block(bra, ket, t, tp, bra_order, ket_order) / self.model.epsilon


class CommutingCovariance(ContinuumCovariance):
    """Simplified blocks for [A,B] = [B,Q] = 0; same call surface.

    The Fermi factor is f = (1 + e^{-beta eps Q} e^{-2 T eps B})^{-1}, i.e.
    the usual Fermi function of -(eps Q + 2(T/beta) eps B), and every block
    factorizes into commuting A- and B-propagators.
    """

    def __init__(self, model: OneParticleModel, beta: float, T: float,
                 tol: float = 1e-8):
        nAB = np.abs(model.A @ model.B - model.B @ model.A).max()
        nBQ = np.abs(model.B @ model.Q - model.Q @ model.B).max()
        scale = 1.0 + max(np.abs(model.A).max(), np.abs(model.B).max(),
                          np.abs(model.Q).max()) ** 2
        if nAB > tol * scale or nBQ > tol * scale:
            raise CovarianceError(
                f"commuting covariance needs [A,B]=[B,Q]=0; got "
                f"|[A,B]|={nAB:.2e}, |[B,Q]|={nBQ:.2e}")
        super().__init__(model, beta, T)
        self.prop_A = Propagator(model.epsilon * model.A)
        self.prop_B = Propagator(model.epsilon * model.B)
        one = np.eye(model.n_sites, dtype=complex)
        self.f_comm = np.linalg.solve(one + self.R @ self.prop_B(-2.0 * T), one)

    def block(self, bra: str, ket: str, t: float, tp: float,
              bra_order: int = 0, ket_order: int = 0) -> np.ndarray:
        self._check_time(t)
        self._check_time(tp)
        pa, pb = self.prop_A, self.prop_B
        f, R, T = self.f_comm, self.R, self.T
        left = pa(-1j * t)
        right = pa(1j * tp)
        if (bra, ket) == ("-", "+"):
            return left @ f @ right @ pb(-2 * T + t + tp)
        if (bra, ket) == ("+", "-"):
            return -left @ f @ R @ right @ pb(-(t + tp))
        if (bra, ket) == ("+", "+"):
            if _later_eq(t, bra_order, tp, ket_order):
                return left @ f @ right @ pb(tp - t)
            return -left @ f @ R @ right @ pb(tp - t - 2 * T)
        if (bra, ket) == ("-", "-"):
            if _later_eq(tp, ket_order, t, bra_order):
                return left @ f @ right @ pb(t - tp)
            return -left @ f @ R @ right @ pb(t - tp - 2 * T)
        raise CovarianceError(f"unknown branch pair ({bra},{ket})")


def build_continuum_covariance(model: OneParticleModel, beta: float, T: float
                               ) -> ContinuumCovariance:
    return ContinuumCovariance(model, beta, T)


def commuting_covariance(model: OneParticleModel, beta: float, T: float
                         ) -> CommutingCovariance:
    return CommutingCovariance(model, beta, T)


@dataclass
class DiscreteKeldyshSystem:
    model: OneParticleModel
    beta: float
    T: float
    N: int
    U_N: np.ndarray                  # e^{i eps (A+iB) T/N}
    Minv: np.ndarray                 # the (2(N+1)|X|)^2 inverse-covariance matrix
    G: Optional[np.ndarray] = None   # filled by invert_system
    inversion_residual: Optional[float] = None

    @property
    def n_slices(self) -> int:
        return self.N + 1

    def flat_index(self, branch: str, m: int, site: int) -> int:
        """(branch, slice m in 1..N+1, site) -> row of the flat matrix."""
        if branch not in BRANCHES:
            raise CovarianceError(f"bad branch {branch!r}")
        if not 1 <= m <= self.n_slices:
            raise CovarianceError(f"slice {m} outside 1..{self.n_slices}")
        b = 0 if branch == "+" else 1
        return (b * self.n_slices + (m - 1)) * self.model.n_sites + site

    def slice_time(self, m: int) -> float:
        return self.T * (m - 1) / self.N

    def block_of(self, M: np.ndarray, bra: str, m: int, ket: str, n: int) -> np.ndarray:
        ns = self.model.n_sites
        i = self.flat_index(bra, m, 0)
        j = self.flat_index(ket, n, 0)
        return M[i:i + ns, j:j + ns]


def build_discrete_inverse(model: OneParticleModel, beta: float, T: float, N: int,
                           cap: int = FLAT_DIM_CAP) -> DiscreteKeldyshSystem:
    """Assemble the five-term inverse covariance on the discrete contour.

    Diagonal identity everywhere; the forward (+) chain couples slice m to
    m-1 with -U_N^dag, the backward (-) chain couples m to m+1 with -U_N;
    the corner blocks carry -1 at ((-,N+1),(+,N+1)) and +e^{-beta eps Q} at
    ((+,1),(-,1)).
    """
    if N < 1:
        raise CovarianceError("N must be >= 1")
    ns = model.n_sites
    nt = N + 1
    dim = 2 * nt * ns
    if dim > cap:
        raise CovarianceError(f"flat dimension {dim} exceeds cap {cap}")
    U = expm_stable(1j * model.A_plus * T / N)
    R = expm_stable(-beta * model.Q_scaled)
    M = np.zeros((dim, dim), dtype=complex)
    eye = np.eye(ns, dtype=complex)

    def sl(b, m):
        return slice((b * nt + m - 1) * ns, (b * nt + m - 1) * ns + ns)

    for b in (0, 1):
        for m in range(1, nt + 1):
            M[sl(b, m), sl(b, m)] += eye
    Ud = U.conj().T
    for m in range(1, nt):
        M[sl(0, m + 1), sl(0, m)] += -Ud    # forward chain, subdiagonal
        M[sl(1, m), sl(1, m + 1)] += -U     # backward chain, superdiagonal
    M[sl(1, nt), sl(0, nt)] += -eye
    M[sl(0, 1), sl(1, 1)] += R
    return DiscreteKeldyshSystem(model=model, beta=beta, T=T, N=N, U_N=U, Minv=M)


def invert_system(system: DiscreteKeldyshSystem) -> Tuple[np.ndarray, float]:
    """Dense LU inverse of the flat matrix, with a max-norm residual report."""
    try:
        G = np.linalg.inv(system.Minv)
    except np.linalg.LinAlgError as exc:
        raise CovarianceError("discrete inverse-covariance matrix is singular") from exc
    residual = float(np.abs(system.Minv @ G - np.eye(G.shape[0])).max())
    system.G = G
    system.inversion_residual = residual
    return G, residual


def determinant_identity(system: DiscreteKeldyshSystem) -> Tuple[complex, complex, float]:
    """det(Minv) against det(1 + W); returns (lhs, rhs, relative deviation).

    Uses slogdet so large flat dimensions cannot overflow.
    """
    sign_l, log_l = np.linalg.slogdet(system.Minv)
    model, beta, T = system.model, system.beta, system.T
    W = (expm_stable(-beta * model.Q_scaled)
         @ expm_stable(1j * model.A_plus * T)
         @ expm_stable(-1j * model.A_minus * T))
    sign_r, log_r = np.linalg.slogdet(np.eye(model.n_sites) + W)
    rel = abs(sign_l / sign_r * np.exp(log_l - log_r) - 1.0)
    return sign_l * np.exp(log_l), sign_r * np.exp(log_r), float(rel)


def grid_consistency(system: DiscreteKeldyshSystem,
                     continuum: ContinuumCovariance) -> float:
    """max |G^(N) - C(grid)| over every branch pair, slice pair and site pair.

    Slice indices are passed as tie-breaks so the indicator functions resolve
    by the discrete ordering; for T > 0 distinct slices have distinct times
    and the tie-break is inert.
    """
    if system.G is None:
        invert_system(system)
    dev = 0.0
    for bra in BRANCHES:
        for ket in BRANCHES:
            for m in range(1, system.n_slices + 1):
                t = system.slice_time(m)
                for n in range(1, system.n_slices + 1):
                    tp = system.slice_time(n)
                    got = system.block_of(system.G, bra, m, ket, n)
                    want = continuum.block(bra, ket, t, tp, m, n)
                    dev = max(dev, float(np.abs(got - want).max()))
    return dev


def equiv_block(system: DiscreteKeldyshSystem) -> np.ndarray:
    """(G^(N)_{+-})_{N+1,N+1}: the boundary block that feeds the reduced
    density matrices at zero potential.  Equals C_{+-}(T,T), hence
    -e^{-i eps A_- T} f_plus e^{+i eps A_- T}, independently of N."""
    if system.G is None:
        invert_system(system)
    return system.block_of(system.G, "+", system.n_slices, "-", system.n_slices)
