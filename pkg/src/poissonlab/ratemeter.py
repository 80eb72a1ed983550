"""Rate tables, theoretical bands and the analytic bounds on the bracket drop."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .bracketops import (VectorFieldExpr, d_power, p_theta, p_theta_words, phi_invariant,
                         poisson)
from .fieldexpr import Box, FieldExpr, c1_seminorm, grid_max, sup_norm
from .perturber import local_perturbation

__all__ = [
    "RateTable", "DegenerateCriticalPointError", "MultiplicityError",
    "fit_loglog", "upsilon_upper_curve", "theoretical_band", "higher_bound",
    "truncated_jet_bound", "first_order_bound", "unicontinuity_criterion",
    "intermediate_bound", "signed_root", "check_multiplicity",
]


class DegenerateCriticalPointError(ValueError):
    pass


class MultiplicityError(ValueError):
    pass


def signed_root(s, k: int):
    """sign(s) |s|^(1/k) elementwise."""
    s = np.asarray(s, float)
    out = np.sign(s) * np.abs(s) ** (1.0 / k)
    return float(out) if out.ndim == 0 else out


def fit_loglog(eps, gaps):
    """OLS fit of log gap = slope log eps + intercept; returns (slope, intercept, rms)."""
    le, lg = np.log(np.asarray(eps, float)), np.log(np.asarray(gaps, float))
    slope, intercept = np.polyfit(le, lg, 1)
    resid = lg - (slope * le + intercept)
    return float(slope), float(intercept), float(np.sqrt(np.mean(resid ** 2)))


@dataclass
class RateTable:
    eps: np.ndarray
    gaps: np.ndarray
    band: tuple
    slope: float = float("nan")
    intercept: float = float("nan")
    residual: float = float("nan")
    fitted_mask: np.ndarray | None = None
    eps0: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.eps = np.asarray(self.eps, float)
        self.gaps = np.asarray(self.gaps, float)
        if len(self.eps) and np.any(np.diff(self.eps) >= 0):
            raise ValueError("eps must be strictly decreasing")

    @property
    def ratios(self) -> np.ndarray:
        return self.gaps / self.eps ** (2.0 / 3.0)

    def fit(self, eps0: float | None = None) -> "RateTable":
        mask = np.ones(len(self.eps), bool) if eps0 is None else self.eps <= eps0
        mask &= self.gaps > 0
        if mask.sum() < 4:
            raise ValueError("slope fit needs at least 4 points below eps0")
        self.slope, self.intercept, self.residual = fit_loglog(self.eps[mask], self.gaps[mask])
        self.fitted_mask = mask
        self.eps0 = eps0
        return self

    def in_band(self, slack: float = 1.0) -> np.ndarray:
        lo, hi = self.band
        return (self.ratios >= lo) & (self.ratios <= hi * slack)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("# ratetable v1 slope=%r intercept=%r residual=%r\n"
                     % (self.slope, self.intercept, self.residual))
            fh.write("eps,gap,ratio,band_lo,band_hi\n")
            for e, g, r in zip(self.eps, self.gaps, self.ratios):
                fh.write(",".join(repr(float(v)) for v in (e, g, r, self.band[0], self.band[1])) + "\n")


def _hessian(h: FieldExpr, x) -> np.ndarray:
    d = h.dim
    return np.array([[h.diff(i).diff(j).at(x) for j in range(d)] for i in range(d)])


def theoretical_band(f: FieldExpr, g: FieldExpr, points: Sequence, conv=None,
                     check: bool = True):
    """(C/3, 6C, flags) with C = min |Phi(x_k)|^(1/3) over the given extremizers.

    A vanishing Phi gives the band (0, 0) and the flag ``higher-multiplicity``.
    """
    if not len(points):
        raise ValueError("need at least one extremal point")
    h = poisson(f, g, conv)
    Phi = phi_invariant(f, g, conv)
    vals = []
    for x in points:
        if check:
            H = _hessian(h, x)
            if abs(np.linalg.det(H)) < 1e-10:
                raise DegenerateCriticalPointError(f"Hessian of h is singular at {list(x)}")
        vals.append(abs(Phi.at(x)))
    C = min(vals) ** (1.0 / 3.0)
    flags = []
    if C < 1e-12:
        flags.append("higher-multiplicity: use higher_bound")
        return 0.0, 0.0, flags
    return C / 3.0, 6.0 * C, flags


def upsilon_upper_curve(scenario, eps_list: Iterable[float], resolution=None,
                        eps0: float | None = None) -> RateTable:
    """Gap table from the explicit construction, with band and log-log slope.

    ``scenario`` supplies ``f, g, x, box, conv``.  The slope is fitted on
    the points with eps <= eps0 when eps0 is given.
    """
    eps = sorted((float(e) for e in eps_list), reverse=True)
    if not eps:
        raise ValueError("empty eps list")
    gaps, runs = [], []
    for e in eps:
        lp = local_perturbation(scenario.f, scenario.g, scenario.x, scenario.box, e,
                                scenario.conv, resolution=resolution)
        gaps.append(lp.gap)
        runs.append(lp)
    lo, hi, flags = theoretical_band(scenario.f, scenario.g, [scenario.x], scenario.conv)
    table = RateTable(np.array(eps), np.array(gaps), (lo, hi), eps0=eps0,
                      meta={"flags": flags, "runs": runs})
    if len(eps) >= 4:
        table.fit(eps0)
    return table


def check_multiplicity(h: FieldExpr, x, order: int, tol: float = 1e-8) -> float:
    """Largest |partial derivative| of h at x over orders 1..order-1."""
    worst = 0.0
    layer = {(): h}
    for _ in range(1, order):
        nxt = {}
        for idx, e in layer.items():
            start = idx[-1] if idx else 0
            for i in range(start, h.dim):
                nxt[idx + (i,)] = e.diff(i)
        layer = nxt
        for e in layer.values():
            worst = max(worst, abs(e.at(x)))
    if worst > tol:
        raise MultiplicityError(f"a derivative of order < {order} is {worst:.3g} at x")
    return worst


def higher_bound(l: int, f: FieldExpr, g: FieldExpr, x, conv=None, check: bool = True) -> float:
    """-9 * signed (2l+1)-th root of D^l(h)(x) / (2l)!."""
    if l < 1:
        raise ValueError("l must be >= 1")
    h = poisson(f, g, conv)
    if check:
        check_multiplicity(h, x, 2 * l)
    val = d_power(l, h, f, g, conv).at(x) / math.factorial(2 * l)
    out = -9.0 * signed_root(val, 2 * l + 1)
    if out < 0:
        warnings.warn("D^l(h)(x) > 0 contradicts maximality at x", RuntimeWarning)
    return out


def truncated_jet_bound(L: int, eps: float, f: FieldExpr, g: FieldExpr, box: Box, conv=None):
    """sup over the box grid of |h + 9 sum_l eps^(2l/(2l+1)) root(D^l h / (2l)!)|.

    Pointwise, a positive root argument is clamped to zero.  Returns
    ``(norm, signed_max, clamped_count, resolution)``.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    h = poisson(f, g, conv)
    Ds = []
    k = h
    for l in range(1, L + 1):
        k = d_power(1, k, f, g, conv)
        Ds.append((l, k))
    pts = box.grid()
    clamped = 0

    def series(p):
        nonlocal clamped
        val = h.evaluate(p)
        for l, D in Ds:
            arg = D.evaluate(p) / math.factorial(2 * l)
            pos = arg > 0
            clamped += int(np.count_nonzero(pos))
            arg = np.where(pos, 0.0, arg)
            val = val + 9.0 * eps ** (2 * l / (2 * l + 1)) * signed_root(arg, 2 * l + 1)
        return val

    vals = series(pts)
    grid_clamped = clamped
    norm = grid_max(lambda p: np.abs(series(p)), box).value
    smax = grid_max(series, box).value
    return norm, smax, grid_clamped, box.resolution


def first_order_bound(v: VectorFieldExpr, f: FieldExpr, x, eps: float, check: bool = True) -> float:
    """lambda(f)(x) - (9/2)^(1/3) (-lambda^3 f (x))^(1/3) eps^(2/3), lambda = d(.)(v)."""
    l1 = v.apply(f)
    if check:
        grad = np.array([c.at(x) for c in l1.gradient()])
        H = _hessian(l1, x)
        if np.max(np.abs(grad)) > 1e-8 or abs(np.linalg.det(H)) < 1e-10 \
                or np.max(np.linalg.eigvalsh(0.5 * (H + H.T))) >= 0:
            raise DegenerateCriticalPointError("lambda(f) has no nondegenerate max at x")
    l3 = v.apply(v.apply(l1)).at(x)
    return l1.at(x) - (4.5 ** (1 / 3)) * signed_root(-l3, 3) * eps ** (2 / 3)


def unicontinuity_criterion(f: FieldExpr, g: FieldExpr, f_seq: Callable[[int], FieldExpr],
                            g_seq: Callable[[int], FieldExpr], ns: Sequence[int], box: Box):
    """Per n: max(|f_n - f|, |g_n - g|) * |g_n|_1 over the box grid.

    Returns a list of dicts and a trend label (``vanishing`` when the last
    value is below a tenth of the first, ``non-vanishing`` otherwise).
    """
    rows = []
    for n in ns:
        fn, gn = f_seq(n), g_seq(n)
        df = sup_norm(fn - f, box).value
        dg = sup_norm(gn - g, box).value
        c1 = c1_seminorm(gn, box).value
        rows.append({"n": n, "dist": max(df, dg), "c1": c1, "product": max(df, dg) * c1})
    prods = [r["product"] for r in rows]
    trend = "vanishing" if prods[-1] <= 0.1 * max(prods[0], 1e-300) else "non-vanishing"
    return rows, trend


def intermediate_bound(f: FieldExpr, g: FieldExpr, x, conv=None, samples: int = 720):
    """(144^(1/3) (max P)^(1/3), 6 Phi(x)^(1/3)), P the second-order angle function."""
    words = p_theta_words(f, g, x, 1, conv)
    th = np.linspace(0.0, 2 * np.pi, samples, endpoint=False)
    maxP = float(np.max(p_theta(f, g, x, th, 1, conv, words=words)))
    Phi = phi_invariant(f, g, conv).at(x)
    return 144 ** (1 / 3) * signed_root(maxP, 3), 6 * signed_root(Phi, 3)
