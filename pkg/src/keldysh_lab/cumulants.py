"""Generating polynomial over the source generators and cumulant tables.

Generator layout: indices 0..|X|-1 are the sources paired with a*(x)
("c+"), indices |X|..2|X|-1 those paired with a(x) ("c-").  The coefficient
of the canonical monomial c+(x_1)..c+(x_p) c-(y_1)..c-(y_q), all indices
ascending, is

    eps^{p+q} (-1)^{p(p-1)/2 + q(q-1)/2 + pq}
        * Tr(a*(x_1)..a*(x_p) a(y_1)..a(y_q) M_ev),

with M_ev = e^{-iHT} rho0 e^{iH^dag T}; the prefactor is what expanding
exp((c+,a*)) exp((c-,a)) in canonical order produces.  Moment and cumulant
tensors are read off by applying source derivatives in the exact order
delta^m/delta c+_{x_1}.. delta c+_{x_m} delta^mbar/delta c-_{y_mbar}..
delta c-_{y_1}, rightmost first.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .fock import EvolutionState, FockError, FockSpace
from .grassmann import (GrassmannPolynomial, coefficient_for_derivatives,
                        grassmann_log)

CUMULANT_SITE_CAP = 6


@dataclass
class CumulantTable:
    """Raw moments and truncated (connected) tensors at fixed beta, T, coupling.

    `gamma` divides by Z(0,0) (the generating value, what Wick determinants
    reproduce); `gammaT` comes from log(Z/Z0).  Both normalizations coincide
    for Hermitian dynamics and are recorded for the dissipative case.
    """

    n_sites: int
    epsilon: float
    beta: float
    T: float
    coupling: float
    gamma: Dict[Tuple[int, int], np.ndarray]
    gammaT: Dict[Tuple[int, int], np.ndarray]
    Z0: float
    Z_generating: complex

    def degrees(self):
        return sorted(set(self.gamma) | set(self.gammaT))


def generating_polynomial(state: EvolutionState, fock: Optional[FockSpace] = None,
                          cap: int = CUMULANT_SITE_CAP) -> GrassmannPolynomial:
    """Z(c-, c+) as a polynomial in the 2|X| source generators."""
    fock = fock or state.fock
    n = fock.n_sites
    if n > cap:
        raise FockError(f"{n} sites exceeds the cumulant site cap of {cap}")
    M = state.evolved_matrix()
    eps = fock.epsilon
    ng = 2 * n
    Z = GrassmannPolynomial.zeros(ng)
    site_lists = [[x for x in range(n) if mask >> x & 1] for mask in range(1 << n)]
    for sp in range(1 << n):
        xs = site_lists[sp]
        p = len(xs)
        for sm in range(1 << n):
            ys = site_lists[sm]
            q = len(ys)
            sign = -1.0 if ((p * (p - 1)) // 2 + (q * (q - 1)) // 2 + p * q) % 2 else 1.0
            # trace of a*(x_1)..a*(x_p) a(y_1)..a(y_q) against M, both ascending
            tr = fock.monomial_trace(xs, ys, M)
            Z.coeffs[sp | (sm << n)] = sign * eps ** (p + q) * tr
    return Z


def moment_tensors(Z: GrassmannPolynomial, n_sites: int, epsilon: float,
                   cap: int, normalizer: complex) -> Dict[Tuple[int, int], np.ndarray]:
    """Read tensors off Z/normalizer by source differentiation."""
    poly = Z / normalizer
    return _extract_tensors(poly, n_sites, epsilon, cap)


def cumulants_from_generating(Z: GrassmannPolynomial, Z0: float, n_sites: int,
                              epsilon: float, beta: float, T: float,
                              coupling: float, cap: int = 6) -> CumulantTable:
    """Full table: raw moments from Z/Z(0,0), cumulants from F = log(Z/Z0)."""
    if Z.body == 0:
        raise FockError("generating polynomial has zero body")
    F = grassmann_log(Z / Z0)
    gammaT = _extract_tensors(F, n_sites, epsilon, cap)
    gamma = _extract_tensors(Z / Z.body, n_sites, epsilon, cap)
    return CumulantTable(n_sites=n_sites, epsilon=epsilon, beta=beta, T=T,
                         coupling=coupling, gamma=gamma, gammaT=gammaT,
                         Z0=Z0, Z_generating=Z.body)


def cumulant_table(state: EvolutionState, cap: int = 6) -> CumulantTable:
    """Convenience pipeline from an evolution state."""
    Z = generating_polynomial(state)
    return cumulants_from_generating(
        Z, state.Z0, state.fock.n_sites, state.fock.epsilon,
        state.beta, state.T, state.interaction.coupling, cap=cap)


def _extract_tensors(poly: GrassmannPolynomial, n_sites: int, epsilon: float,
                     cap: int) -> Dict[Tuple[int, int], np.ndarray]:
    out: Dict[Tuple[int, int], np.ndarray] = {}
    for m in range(cap + 1):
        for mbar in range(cap + 1 - m):
            if m + mbar == 0 or m + mbar > cap:
                continue
            tensor = np.zeros((n_sites,) * (m + mbar), dtype=complex)
            for flat in np.ndindex(*tensor.shape):
                xs = flat[:m]
                ys = flat[m:]
                if len(set(xs)) < m or len(set(ys)) < mbar:
                    continue
                # rightmost derivative first: c-_{y_1}, .., c-_{y_mbar},
                # then c+_{x_m}, .., c+_{x_1}
                order = [n_sites + y for y in ys] + [x for x in reversed(xs)]
                tensor[flat] = coefficient_for_derivatives(poly, order, epsilon)
            out[(m, mbar)] = tensor
    return out
