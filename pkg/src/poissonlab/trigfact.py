"""Spectral factorization of nonnegative trigonometric polynomials.

A trigonometric polynomial ``P(theta) = sum_{k=-m}^{m} a_k e^{ik theta}`` is
stored by its coefficient vector.  :func:`fejer_riesz` writes a nonnegative
``P`` as ``|Q|^2`` with ``Q`` supported on frequencies ``0..m``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TrigPoly", "RootMultiset", "FactorizationError", "NegativityError",
    "OddMultiplicityError", "RootFindingError",
    "laurent_lift", "roots", "aberth_roots", "fejer_riesz", "mean_bound",
    "from_angle_samples",
]


class FactorizationError(ValueError):
    pass


class NegativityError(FactorizationError):
    pass


class OddMultiplicityError(FactorizationError):
    pass


class RootFindingError(RuntimeError):
    pass


class TrigPoly:
    """Coefficients ``a_{lo}, ..., a_{lo + len - 1}`` of ``sum a_k e^{ik theta}``."""

    def __init__(self, coeffs, lo: int | None = None):
        c = np.atleast_1d(np.asarray(coeffs, dtype=complex))
        if lo is None:
            if len(c) % 2 == 0:
                raise ValueError("symmetric coefficient vector must have odd length")
            lo = -(len(c) // 2)
        # trim zero tails
        nz = np.flatnonzero(np.abs(c) > 0)
        if len(nz) == 0:
            c, lo = np.zeros(1, complex), 0
        else:
            lo += int(nz[0])
            c = c[nz[0]:nz[-1] + 1]
        self.coeffs = c
        self.lo = lo

    @classmethod
    def from_real(cls, a0: float, cos_coeffs=(), sin_coeffs=()) -> "TrigPoly":
        """``a0 + sum c_k cos(k theta) + s_k sin(k theta)``, k starting at 1."""
        m = max(len(cos_coeffs), len(sin_coeffs))
        c = np.zeros(2 * m + 1, complex)
        c[m] = a0
        for k in range(1, m + 1):
            ck = cos_coeffs[k - 1] if k <= len(cos_coeffs) else 0.0
            sk = sin_coeffs[k - 1] if k <= len(sin_coeffs) else 0.0
            c[m + k] = (ck - 1j * sk) / 2
            c[m - k] = (ck + 1j * sk) / 2
        return cls(c, -m)

    @property
    def hi(self) -> int:
        return self.lo + len(self.coeffs) - 1

    @property
    def degree(self) -> int:
        if self.is_zero:
            return 0
        return max(abs(self.lo), abs(self.hi))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.coeffs)

    def coeff(self, k: int) -> complex:
        j = k - self.lo
        return complex(self.coeffs[j]) if 0 <= j < len(self.coeffs) else 0j

    @property
    def is_real(self) -> bool:
        m = self.degree
        scale = max(1.0, float(np.max(np.abs(self.coeffs))))
        return all(abs(self.coeff(k) - np.conj(self.coeff(-k))) <= 1e-14 * scale
                   for k in range(0, m + 1))

    def __call__(self, theta):
        th = np.asarray(theta, float)
        k = np.arange(self.lo, self.hi + 1)
        vals = np.exp(1j * np.multiply.outer(th, k)) @ self.coeffs
        return vals

    def real_values(self, theta):
        return np.real(self(theta))

    def abs2(self) -> "TrigPoly":
        """|Q|^2 as a real trigonometric polynomial."""
        c = self.coeffs
        prod = np.convolve(c, np.conj(c[::-1]))
        return TrigPoly(prod, self.lo - self.hi)

    def mean(self) -> complex:
        return self.coeff(0)

    def __repr__(self):
        return f"TrigPoly(lo={self.lo}, coeffs={np.round(self.coeffs, 12).tolist()})"


def from_angle_samples(fn, degree: int) -> TrigPoly:
    """Interpolate a real trig polynomial of known degree from angle samples.

    Uses ``2*degree + 1`` equispaced angles and the discrete Fourier
    transform, which is exact for polynomials of that degree.
    """
    n = 2 * degree + 1
    th = 2 * np.pi * np.arange(n) / n
    vals = np.asarray(fn(th), float)
    c = np.fft.fft(vals) / n
    coeffs = np.concatenate([c[-degree:], c[:degree + 1]]) if degree else c[:1]
    coeffs = 0.5 * (coeffs + np.conj(coeffs[::-1]))
    return TrigPoly(coeffs, -degree)


# ---------------------------------------------------------------------------
# roots
# ---------------------------------------------------------------------------

@dataclass
class RootMultiset:
    values: np.ndarray  # distinct roots (cluster means)
    multiplicities: np.ndarray

    @property
    def total(self) -> int:
        return int(np.sum(self.multiplicities))

    def classify(self, tol: float = 1e-8) -> np.ndarray:
        """-1 inside the unit circle, 0 on it, +1 outside."""
        r = np.abs(self.values)
        out = np.where(r < 1 - tol, -1, np.where(r > 1 + tol, 1, 0))
        return out

    def expanded(self) -> np.ndarray:
        return np.repeat(self.values, self.multiplicities)


def aberth_roots(coeffs, max_iter: int = 200, tol: float = 1e-14, seed: int = 0) -> np.ndarray:
    """All roots of a polynomial by Aberth-Ehrlich simultaneous iteration.

    ``coeffs`` are in ascending order of power.  A stagnating run is
    restarted from a perturbed circle, at most three times.
    """
    c = np.trim_zeros(np.asarray(coeffs, complex), "b")
    n = len(c) - 1
    if n < 1:
        raise ValueError("polynomial degree must be >= 1")
    # strip zero roots
    nzero = 0
    while c[0] == 0:
        c = c[1:]
        nzero += 1
    n = len(c) - 1
    if n == 0:
        return np.zeros(nzero, complex)
    mon = c / c[-1]
    p = mon[::-1]  # descending for polyval
    dp = np.polyder(p)
    rng = np.random.default_rng(seed)
    # Cauchy-type radius bound for the initial circle
    radius = 1 + np.max(np.abs(mon[:-1]))
    rad0 = min(radius, max(np.abs(mon[0]) ** (1.0 / n), 1e-3) * 2)
    for attempt in range(4):
        ang = 2 * np.pi * (np.arange(n) + 0.25 + 0.5 * rng.random()) / n
        z = rad0 * (1 + 0.1 * rng.random()) * np.exp(1j * ang)
        for _ in range(max_iter):
            pv = np.polyval(p, z)
            dv = np.polyval(dp, z)
            with np.errstate(all="ignore"):
                ratio = pv / dv
                diff = z[:, None] - z[None, :]
                np.fill_diagonal(diff, 1.0)
                inv = 1.0 / diff
                np.fill_diagonal(inv, 0.0)
                s = inv.sum(axis=1)
                w = ratio / (1 - ratio * s)
            w = np.where(pv == 0, 0, w)
            if not np.all(np.isfinite(w)):
                break
            z = z - w
            if np.all(np.abs(w) <= tol * (1 + np.abs(z))):
                return np.concatenate([z, np.zeros(nzero, complex)])
        else:
            # multiple roots converge slowly; accept if residual is small
            if _residual_ok(mon, z):
                return np.concatenate([z, np.zeros(nzero, complex)])
        rad0 *= 1.3
    raise RootFindingError("Aberth iteration did not converge")


def _residual_ok(mon, z, rel: float = 1e-10) -> bool:
    scale = np.linalg.norm(mon) * np.maximum(1.0, np.abs(z)) ** (len(mon) - 1)
    return bool(np.all(np.abs(np.polyval(mon[::-1], z)) <= rel * scale))


def _polish(mon, z, mult):
    """Newton on the (mult-1)-th derivative, which has a simple root there."""
    p = mon[::-1]
    d = np.polyder(p, mult - 1) if mult > 1 else p
    dd = np.polyder(d)
    for _ in range(5):
        dv = np.polyval(dd, z)
        if dv == 0:
            break
        step = np.polyval(d, z) / dv
        z = z - step
        if abs(step) < 1e-16 * (1 + abs(z)):
            break
    return z


def roots(coeffs, cluster: float = 1e-6) -> RootMultiset:
    """Roots of a polynomial (ascending coefficients) merged into multiplicities."""
    c = np.trim_zeros(np.asarray(coeffs, complex), "b")
    if len(c) < 2:
        raise ValueError("polynomial degree must be >= 1")
    z = aberth_roots(c)
    # an m-fold root scatters into m points at distance ~ eps^(1/m), so try
    # the largest group first and accept it if it fits in that radius
    remaining = list(z)
    vals, mults = [], []
    while remaining:
        z0 = remaining[0]
        dist = np.abs(np.array(remaining) - z0)
        order = np.argsort(dist)
        for m in range(len(remaining), 0, -1):
            group = [remaining[i] for i in order[:m]]
            ctr = np.mean(group)
            rad = max(cluster, _spread(m)) * (1 + abs(ctr))
            if all(abs(w - ctr) <= rad for w in group):
                break
        vals.append(ctr)
        mults.append(m)
        for i in sorted(order[:m], reverse=True):
            remaining.pop(i)
    mon = c / c[-1]
    vals = [_polish(mon, v, m) if m > 1 else v for v, m in zip(vals, mults)]
    return RootMultiset(np.array(vals, complex), np.array(mults, int))


def _spread(m: int) -> float:
    return 0.0 if m <= 2 else 20 * 2.2e-16 ** (1.0 / m)


# ---------------------------------------------------------------------------
# factorization
# ---------------------------------------------------------------------------

def laurent_lift(P: TrigPoly):
    """Return (T ascending coefficients, r) with P(theta) = z^{-r} T(z), z = e^{i theta}."""
    if P.is_zero:
        raise FactorizationError("zero polynomial")
    r = -P.lo
    return P.coeffs.copy(), r


def fejer_riesz(P: TrigPoly, check_grid: bool = True, grid: int = 4096) -> TrigPoly:
    """Write a nonnegative real P as |Q|^2 with Q on frequencies 0..deg P.

    Raises :class:`NegativityError` if P is negative somewhere on the
    angle grid and :class:`OddMultiplicityError` if a unit-circle root has
    odd multiplicity (which means P changes sign).
    """
    if not P.is_real:
        raise FactorizationError("P is not real-valued")
    m = P.degree
    if P.is_zero:
        raise FactorizationError("zero polynomial")
    if check_grid:
        th = 2 * np.pi * np.arange(grid) / grid
        if np.min(P.real_values(th)) < -1e-9:
            raise NegativityError("P takes negative values")
    if m == 0:
        a0 = P.coeff(0).real
        if a0 < 0:
            raise NegativityError("negative constant")
        return TrigPoly([np.sqrt(a0)], 0)
    # symmetric representation: T(z) = z^m P, degree 2m, T(0) = a_{-m} != 0
    T = np.array([P.coeff(k) for k in range(-m, m + 1)], complex)
    rs = roots(T)
    cls = rs.classify()
    chosen = []
    for v, mult, c in zip(rs.values, rs.multiplicities, cls):
        if c < 0:
            chosen += [v] * mult
        elif c == 0:
            if mult % 2:
                raise OddMultiplicityError(
                    f"unit-circle root {v:.6g} has odd multiplicity {mult}")
            chosen += [v] * (mult // 2)
    if len(chosen) != m:
        raise FactorizationError(
            f"root pairing failed: {len(chosen)} roots assigned, expected {m}")
    beta = np.array(chosen)
    q = np.poly(beta)[::-1]  # ascending, monic
    # match scale: |q(z)|^2 = c'' P on the circle; take c'' from the mean
    qq = TrigPoly(q, 0).abs2()
    cpp = qq.coeff(0).real / P.coeff(0).real
    if not cpp > 0:
        raise FactorizationError("normalization constant is not positive")
    Q = TrigPoly(q / np.sqrt(cpp), 0)
    return Q


def mean_bound(P: TrigPoly, l: int, grid: int = 4096):
    """(max P, (2l+1) * mean P, holds) for a real P of degree <= 2l."""
    if P.degree > 2 * l:
        raise ValueError(f"degree {P.degree} exceeds 2l = {2 * l}")
    th = 2 * np.pi * np.arange(grid) / grid
    vals = P.real_values(th)
    k = int(np.argmax(vals))
    h = 2 * np.pi / grid
    fine = th[k] + np.linspace(-h, h, 201)
    maxp = float(max(vals[k], np.max(P.real_values(fine))))
    bound = (2 * l + 1) * P.coeff(0).real
    return maxp, float(bound), bool(maxp <= bound + 1e-9)
