"""Finite exterior algebra over anticommuting source generators.

A polynomial in n generators is stored as a dense coefficient array of
length 2^n indexed by the generator subset bitmask; the coefficient belongs
to the product of the chosen generators in ascending index order.  All signs
below are derived from bitmask parity counts, never hand-tuned per degree.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GrassmannError(ValueError):
    pass


def _merge_signs(n_generators: int, q: int) -> np.ndarray:
    """Sign table s[p] for appending monomial q to monomial p (disjoint masks).

    s[p] = (-1)^{#{(i in q, j in p): j > i}}, the parity of transpositions
    needed to sort the concatenated index sequence.
    """
    masks = np.arange(1 << n_generators, dtype=np.uint64)
    count = np.zeros(1 << n_generators, dtype=np.uint64)
    i = 0
    qq = q
    while qq:
        if qq & 1:
            count += np.bitwise_count(masks >> np.uint64(i + 1))
        qq >>= 1
        i += 1
    return np.where(count & np.uint64(1), -1.0, 1.0)


@dataclass
class GrassmannPolynomial:
    n_generators: int
    coeffs: np.ndarray

    @classmethod
    def zeros(cls, n_generators: int) -> "GrassmannPolynomial":
        return cls(n_generators, np.zeros(1 << n_generators, dtype=complex))

    @classmethod
    def scalar(cls, n_generators: int, value: complex) -> "GrassmannPolynomial":
        p = cls.zeros(n_generators)
        p.coeffs[0] = value
        return p

    @classmethod
    def generator(cls, n_generators: int, index: int) -> "GrassmannPolynomial":
        p = cls.zeros(n_generators)
        p.coeffs[1 << index] = 1.0
        return p

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != (1 << self.n_generators,):
            raise GrassmannError(
                f"coefficient table must have length 2^{self.n_generators}")

    @property
    def body(self) -> complex:
        """Coefficient of the empty monomial (value at zero sources)."""
        return complex(self.coeffs[0])

    def copy(self) -> "GrassmannPolynomial":
        return GrassmannPolynomial(self.n_generators, self.coeffs.copy())

    def degree_slice(self, degree: int) -> np.ndarray:
        masks = np.arange(1 << self.n_generators, dtype=np.uint64)
        return self.coeffs[np.bitwise_count(masks) == degree]

    def max_degree(self) -> int:
        nz = np.nonzero(self.coeffs)[0]
        if len(nz) == 0:
            return 0
        return int(np.bitwise_count(nz.astype(np.uint64)).max())

    def min_nonscalar_degree(self) -> int:
        nz = np.nonzero(self.coeffs)[0]
        nz = nz[nz != 0]
        if len(nz) == 0:
            return 0
        return int(np.bitwise_count(nz.astype(np.uint64)).min())

    def __add__(self, other):
        if isinstance(other, GrassmannPolynomial):
            self._check(other)
            return GrassmannPolynomial(self.n_generators, self.coeffs + other.coeffs)
        out = self.copy()
        out.coeffs[0] += other
        return out

    __radd__ = __add__

    def __sub__(self, other):
        return self + (other * -1.0 if isinstance(other, GrassmannPolynomial) else -other)

    def __mul__(self, other):
        if isinstance(other, GrassmannPolynomial):
            return grassmann_multiply(self, other)
        return GrassmannPolynomial(self.n_generators, self.coeffs * other)

    def __rmul__(self, scalar):
        return GrassmannPolynomial(self.n_generators, self.coeffs * scalar)

    def __truediv__(self, scalar):
        return GrassmannPolynomial(self.n_generators, self.coeffs / scalar)

    def _check(self, other: "GrassmannPolynomial"):
        if self.n_generators != other.n_generators:
            raise GrassmannError("generator-count mismatch")

    def is_zero(self) -> bool:
        return not np.any(self.coeffs)


def grassmann_multiply(p: GrassmannPolynomial, q: GrassmannPolynomial
                       ) -> GrassmannPolynomial:
    """Bilinear anticommutative product; iterates over the sparser factor."""
    p._check(q)
    n = p.n_generators
    a, b = p.coeffs, q.coeffs
    swap_sign = 1.0
    if np.count_nonzero(a) < np.count_nonzero(b):
        # g_p g_q = (-1)^{|p||q|} g_q g_p; handled mask by mask below.
        a, b = b, a
        swapped = True
    else:
        swapped = False
    masks = np.arange(1 << n, dtype=np.int64)
    out = np.zeros(1 << n, dtype=complex)
    for q_mask in np.nonzero(b)[0]:
        free = (masks & q_mask) == 0
        pm = masks[free]
        sign = _merge_signs(n, int(q_mask))[pm]
        if swapped:
            qdeg = int(q_mask).bit_count()
            pdeg = np.bitwise_count(pm.astype(np.uint64)).astype(np.int64)
            sign = sign * np.where((qdeg * pdeg) & 1, -1.0, 1.0)
        out[pm | q_mask] += sign * a[pm] * b[q_mask]
    return GrassmannPolynomial(n, out)


def grassmann_exp(p: GrassmannPolynomial) -> GrassmannPolynomial:
    """exp(body) * sum_k W^k / k! with W the nilpotent part."""
    n = p.n_generators
    W = p.copy()
    W.coeffs[0] = 0.0
    out = GrassmannPolynomial.scalar(n, 1.0)
    term = GrassmannPolynomial.scalar(n, 1.0)
    for k in range(1, n + 1):
        term = grassmann_multiply(term, W) / k
        if term.is_zero():
            break
        out = out + term
    return out * np.exp(p.body)


def grassmann_log(p: GrassmannPolynomial) -> GrassmannPolynomial:
    """log(b(1 + W)) = log b + sum_{k>=1} (-1)^{k+1} W^k / k; terminates by
    nilpotency.  Requires a nonzero body."""
    b = p.body
    if b == 0:
        raise GrassmannError("zero body: logarithm undefined")
    n = p.n_generators
    W = p / b
    W.coeffs[0] = 0.0
    out = GrassmannPolynomial.scalar(n, np.log(b))
    term = W.copy()
    for k in range(1, n + 1):
        if term.is_zero():
            break
        out = out + term * ((-1.0) ** (k + 1) / k)
        term = grassmann_multiply(term, W)
    return out


def left_derivative(p: GrassmannPolynomial, index: int, epsilon: float = 1.0
                    ) -> GrassmannPolynomial:
    """Source derivative delta/delta g_index = eps^-1 * (left partial)."""
    n = p.n_generators
    masks = np.arange(1 << n, dtype=np.int64)
    bit = 1 << index
    has = (masks & bit) != 0
    src = masks[has]
    below = (src & (bit - 1)).astype(np.uint64)
    sign = np.where(np.bitwise_count(below) & np.uint64(1), -1.0, 1.0)
    out = np.zeros(1 << n, dtype=complex)
    out[src ^ bit] = sign * p.coeffs[src] / epsilon
    return GrassmannPolynomial(n, out)


def coefficient_for_derivatives(p: GrassmannPolynomial, order, epsilon: float = 1.0
                                ) -> complex:
    """Body after applying delta/delta g_i for i in `order` (first entry acts
    first).  Walks a single monomial, so it is O(len(order)) per call."""
    mask = 0
    for i in order:
        mask |= 1 << i
    if len(set(order)) != len(order):
        return 0.0 + 0.0j
    coef = p.coeffs[mask]
    if coef == 0:
        return 0.0 + 0.0j
    sign = 1.0
    cur = mask
    for i in order:
        bit = 1 << i
        if (cur & (bit - 1)).bit_count() % 2:
            sign = -sign
        cur ^= bit
    return complex(sign * coef * epsilon ** (-float(len(order))))
