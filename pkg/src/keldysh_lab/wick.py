"""Gaussian expectations as determinants and first-order vertex corrections.

The pairing rule is the standard one for anticommuting Gaussian fields:

    < psi(X_1)..psi(X_n) psibar(Y_n)..psibar(Y_1) > = det[ C(X_i, Y_j) ]

with C the kernel-normalized covariance (block / eps).  An ordered product
of fields in any arrangement is evaluated by recursive contraction of the
first field against every later partner of opposite kind, with the parity
sign of the crossing; <psibar psi> picks up a minus relative to <psi psibar>.

Ordered-monomial moments at measurement time T correspond to the field list

    gamma_{m,mbar}(x_1..x_m, y_1..y_mbar)
        = < psibar^-_T(x_1).. psibar^-_T(x_m) psi^+_T(y_mbar).. psi^+_T(y_1) >,

creation legs on the backward branch, annihilation legs on the forward one.

Equal-time points inside a vertex keep the conjugate field one discrete
slice later along its branch; the slice that can collide with the external
time-T legs carries offset 0 so ties resolve through the covariance's
inclusive indicator, matching the discrete construction.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .covariance import ContinuumCovariance, KeldyshPoint
from .linalg import Propagator
from .models import Interaction, ModelError, OneParticleModel


@dataclass(frozen=True)
class WickQuery:
    psi_points: Tuple[KeldyshPoint, ...]
    psibar_points: Tuple[KeldyshPoint, ...]

    def __init__(self, psi_points: Sequence[KeldyshPoint],
                 psibar_points: Sequence[KeldyshPoint]):
        object.__setattr__(self, "psi_points", tuple(psi_points))
        object.__setattr__(self, "psibar_points", tuple(psibar_points))


class _KernelCache:
    """Memoizes kernel blocks keyed by branch pair, times and tie offsets."""

    def __init__(self, cov: ContinuumCovariance):
        self.cov = cov
        self._blocks: Dict[tuple, np.ndarray] = {}

    def value(self, X: KeldyshPoint, Y: KeldyshPoint) -> complex:
        key = (X.branch, Y.branch, X.time, Y.time, X.order, Y.order)
        blk = self._blocks.get(key)
        if blk is None:
            blk = self.cov.kernel_block(X.branch, Y.branch, X.time, Y.time,
                                        X.order, Y.order)
            self._blocks[key] = blk
        return complex(blk[X.site, Y.site])


def wick_moment(cov: ContinuumCovariance, query: WickQuery) -> complex:
    """Determinant of the kernel matrix C(X_i, Y_j) for the query points."""
    n = len(query.psi_points)
    if n != len(query.psibar_points):
        warnings.warn("unequal psi/psibar counts: Gaussian expectation is zero",
                      stacklevel=2)
        return 0.0 + 0.0j
    if n == 0:
        return 1.0 + 0.0j
    cache = _KernelCache(cov)
    M = np.array([[cache.value(X, Y) for Y in query.psibar_points]
                  for X in query.psi_points], dtype=complex)
    return complex(np.linalg.det(M))


def free_two_point(model: OneParticleModel, beta: float, T: float) -> np.ndarray:
    """Free ordered two-point table P[x, y] = gamma_{1,1}(x, y, T) at V = 0.

    P = (e^{-i eps A_- T} f_plus e^{+i eps A_- T})^T / eps: the evolved
    occupation matrix; for B = 0 its eigenvalues are the Fermi weights of
    eps*Q at every T.
    """
    cov = ContinuumCovariance(model, beta, T)
    prop = Propagator(model.A_minus)
    K = prop(-1j * T) @ cov.f_plus @ prop(1j * T)
    return K.T / model.epsilon


def free_moment_tensors(cov: ContinuumCovariance, cap: int = 4
                        ) -> Dict[Tuple[int, int], np.ndarray]:
    """Wick-determinant moments gamma_{m,mbar} built from covariance data.

    The (1,1) table is read from the equal-time C_{+-} block; higher equal-m
    tensors are its minors, and m != mbar tensors vanish for the
    charge-conserving Gaussian weight.
    """
    model, T = cov.model, cov.T
    n = model.n_sites
    # gamma_{1,1}(x,y) = -C_kernel((+,T,y), (-,T,x))
    P = -cov.kernel_block("+", "-", T, T).T
    out: Dict[Tuple[int, int], np.ndarray] = {}
    for m in range(cap + 1):
        for mbar in range(cap + 1 - m):
            if m + mbar == 0 or m + mbar > cap:
                continue
            tensor = np.zeros((n,) * (m + mbar), dtype=complex)
            if m == mbar:
                for flat in np.ndindex(*tensor.shape):
                    xs, ys = flat[:m], flat[m:]
                    if len(set(xs)) < m or len(set(ys)) < mbar:
                        continue
                    tensor[flat] = np.linalg.det(P[np.ix_(xs, ys)])
            out[(m, mbar)] = tensor
    return out


# ---------------------------------------------------------------------------
# Ordered-product contraction engine

_PSI, _PSIBAR = 0, 1


@dataclass(frozen=True)
class _Field:
    kind: int            # _PSI or _PSIBAR
    point: KeldyshPoint
    external: bool


def _contract(fields: List[_Field], cache: _KernelCache,
              connected: bool) -> complex:
    """Gaussian expectation of an ordered field product.

    With `connected`, matchings that pair two external fields are dropped,
    which for a single vertex insertion is exactly the joint cumulant.
    """
    if not fields:
        return 1.0 + 0.0j
    if len(fields) % 2:
        return 0.0 + 0.0j
    first = fields[0]
    total = 0.0 + 0.0j
    for j in range(1, len(fields)):
        other = fields[j]
        if other.kind == first.kind:
            continue
        if connected and first.external and other.external:
            continue
        if first.kind == _PSI:
            pair = cache.value(first.point, other.point)
        else:
            pair = -cache.value(other.point, first.point)
        if pair == 0:
            continue
        rest = fields[1:j] + fields[j + 1:]
        sign = -1.0 if (j - 1) % 2 else 1.0
        total += sign * pair * _contract(rest, cache, connected)
    return total


def _external_legs(xs: Sequence[int], ys: Sequence[int], T: float) -> List[_Field]:
    legs = [_Field(_PSIBAR, KeldyshPoint("-", T, x), True) for x in xs]
    legs += [_Field(_PSI, KeldyshPoint("+", T, y), True) for y in reversed(ys)]
    return legs


def gaussian_ordered_moment(cov: ContinuumCovariance, xs: Sequence[int],
                            ys: Sequence[int]) -> complex:
    """gamma_{m,mbar}(xs, ys) of the free theory via the contraction engine;
    cross-checks the determinant route."""
    cache = _KernelCache(cov)
    return _contract(_external_legs(xs, ys, cov.T), cache, connected=False)


def _vertex_fields(key: Tuple[int, int], sites: Tuple[int, ...], branch: str,
                   t: float) -> List[_Field]:
    """Fields of one vertex entry on the given branch at vertex time t.

    Forward branch: V(psibar_{k+1}, psi_k): conjugates one slice later; the
    conjugate slice is the one that can touch the external time, so it gets
    offset 0 and the partners offset -1.  Backward branch: the dagger vertex
    V^dag(psibar_{l-1}, psi_l) with the plain fields on the later slice.
    """
    m, mbar = key
    xs, ys = sites[:m], sites[m:]
    if branch == "+":
        fields = [_Field(_PSIBAR, KeldyshPoint("+", t, y, 0), False) for y in ys]
        fields += [_Field(_PSI, KeldyshPoint("+", t, x, -1), False) for x in xs]
    else:
        fields = [_Field(_PSIBAR, KeldyshPoint("-", t, x, -1), False)
                  for x in reversed(xs)]
        fields += [_Field(_PSI, KeldyshPoint("-", t, y, 0), False)
                   for y in reversed(ys)]
    return fields


def _simpson_weights(T: float, panels: int) -> Tuple[np.ndarray, np.ndarray]:
    if panels % 2:
        panels += 1
    ts = np.linspace(0.0, T, panels + 1)
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    w *= (T / panels) / 3.0
    return ts, w


def first_order_correction(cov: ContinuumCovariance, V: Interaction,
                           degree: Tuple[int, int], panels: int = 64
                           ) -> np.ndarray:
    """First-order interaction shift of the connected tensor gammaT_degree.

    Contour quadrature of the single-vertex joint cumulant:

        -i * int_0^T dt [ <V(t)+ legs>_conn - <V^dag(t)- legs>_conn ],

    composite Simpson with `panels` subintervals.  Linear in the vertex
    tensors (coupling included).  Quartic vertices only.
    """
    if degree not in ((1, 1), (2, 2)):
        raise ModelError(f"unsupported output degree {degree}")
    model = cov.model
    n = model.n_sites
    m, mbar = degree
    shape = (n,) * (m + mbar)
    out = np.zeros(shape, dtype=complex)
    verts = V.scaled_vertices()
    if not verts:
        return out
    for (vm, vmb) in verts:
        if vm + vmb != 4:
            raise ModelError("unsupported vertex degree (quartic scope only)")
    ts, w = _simpson_weights(cov.T, panels)
    cache = _KernelCache(cov)
    eps_w = {k: model.epsilon ** sum(k) for k in verts}
    entries = {k: list(zip(*np.nonzero(v))) for k, v in verts.items()}
    for flat in np.ndindex(*shape):
        xs, ys = flat[:m], flat[m:]
        if len(set(xs)) < m or len(set(ys)) < mbar:
            continue
        legs = _external_legs(xs, ys, cov.T)
        acc = 0.0 + 0.0j
        for ti, wi in zip(ts, w):
            step = 0.0 + 0.0j
            for key, v in verts.items():
                for sites in entries[key]:
                    coef = eps_w[key] * v[sites]
                    plus = _contract(_vertex_fields(key, sites, "+", ti) + legs,
                                     cache, connected=True)
                    minus = _contract(_vertex_fields(key, sites, "-", ti) + legs,
                                      cache, connected=True)
                    step += coef * plus - np.conj(coef) * minus
            acc += wi * step
        out[flat] = -1j * acc
    return out
