"""Explicit perturbations that lower the sup of the bracket at rate eps^(2/3),
and the staircase pair that kills a first-order non-antisymmetric operator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial

from .bracketops import (BilinearForm, PairingConvention, ham_vector_field,
                         iterated_bracket, poisson)
from .fieldexpr import (Box, FieldExpr, Profile, SupNorm, constant, coordinate,
                        compose_profile, grid_max, plateau, sup_norm)

__all__ = [
    "InfeasibleError", "ChartError", "DegenerateMaximumError",
    "LocalPerturbation", "build_phi_profile", "local_perturbation",
    "find_eps0", "staircase_profile", "staircase_counterexample",
]


class InfeasibleError(ValueError):
    def __init__(self, message: str, limit_eps: float | None = None):
        super().__init__(message)
        self.limit_eps = limit_eps


class ChartError(ValueError):
    """The chart does not provide the flow-box coordinates the construction needs."""


class DegenerateMaximumError(ValueError):
    pass


# smoothstep polynomials on [0, 1]
_S3 = Polynomial([0.0, 0.0, 3.0, -2.0])
_S5 = Polynomial([0.0, 0.0, 0.0, 10.0, -15.0, 6.0])


def build_phi_profile(A: float, eps: float, b: float, hgap: float, name: str = "phi") -> Profile:
    """Odd profile: linear of slope A^(1/3) eps^(2/3) / 2 near 0, zero beyond 2b/3.

    On ``[0, a]`` with ``a = A^(-1/3) eps^(1/3)`` the profile is linear, so
    ``phi(a) = eps/2``.  Its slope then relaxes to zero over a width
    ``w = min(a, b/3 - a)`` (derivative ``c (1 - S3)``), the profile stays
    flat up to ``b/3`` and decays to zero on ``[b/3, 2b/3]`` by a quintic
    smoothstep.  The decay slope ``-45 P / (8 b)`` must stay above
    ``hgap / 2``; otherwise :class:`InfeasibleError` carries the largest
    admissible eps.
    """
    if A <= 0 or eps <= 0 or b <= 0:
        raise ValueError("A, eps and b must be positive")
    if hgap >= 0:
        raise ValueError("hgap must be negative")
    c = 0.5 * A ** (1 / 3) * eps ** (2 / 3)
    a = A ** (-1 / 3) * eps ** (1 / 3)
    third = b / 3.0
    if a >= third:
        raise InfeasibleError("linear segment does not fit in b/3", A * third ** 3)
    w = min(a, third - a)
    P = 0.5 * eps + 0.5 * c * w
    if -45.0 * P / (8.0 * b) < hgap / 2.0:
        # P grows like eps; solve 45 P(eps) / (8 b) = -hgap / 2 on the branch w = a
        lim = (-hgap / 2.0) * 8.0 * b / 45.0 / 0.75
        raise InfeasibleError("decay segment steeper than hgap / 2", lim)
    rise = Polynomial([0.0, 1.0, 0.0, -1.0 / w ** 2, 0.5 / w ** 3]) * c  # c w (s - s^3 + s^4/2)
    # pieces on [0, 2b/3]; mirrored oddly below
    right_breaks = [0.0, a, a + w]
    right_pieces = [Polynomial([0.0, c]), Polynomial([0.5 * eps]) + rise]
    if third > a + w + 1e-15 * b:
        right_breaks.append(third)
        right_pieces.append(Polynomial([P]))
    decay = Polynomial([P]) - P * _S5(Polynomial([0.0, 1.0 / third]))
    right_breaks.append(2 * third)
    right_pieces.append(decay)
    # odd extension: p(-t) = -p(t); the piece on [-r_{k+1}, -r_k] in local
    # variable s = t + r_{k+1} is -q(r_{k+1} - r_k - s)
    left_breaks, left_pieces = [], []
    for k in range(len(right_pieces) - 1, -1, -1):
        lo, hi = right_breaks[k], right_breaks[k + 1]
        q = right_pieces[k]
        left_breaks.append(-hi)
        left_pieces.append(-q(Polynomial([hi - lo, -1.0])))
    breaks = left_breaks + right_breaks
    pieces = left_pieces + right_pieces
    prof = Profile(breaks, pieces, name=name, bound=eps, monotone="odd-bump")
    prof.meta = {"slope": c, "a": a, "w": w, "plateau": P, "b": b, "hgap": hgap}
    return prof


def check_phi_profile(prof: Profile, eps: float, n: int = 10_000) -> dict:
    """Re-verify the four profile conditions on a grid of ``n`` points."""
    m = prof.meta
    b, hgap = m["b"], m["hgap"]
    t = np.linspace(-b, b, n)
    v = prof(t)
    d = prof(t, 1)
    inner = np.abs(t) <= b / 3
    mid = np.abs(t) <= 2 * b / 3
    outer = np.abs(t) >= 2 * b / 3
    lin = np.abs(t) <= m["a"]
    return {
        "linear": bool(np.allclose(d[lin], m["slope"], rtol=1e-12, atol=0)),
        "nondecreasing_inner": bool(np.min(d[inner]) >= -1e-15),
        "slope_floor": bool(np.min(d[mid]) >= hgap / 2 - 1e-15),
        "zero_outside": bool(np.max(np.abs(v[outer])) <= 1e-15),
        "bounded": bool(np.max(np.abs(v)) <= eps * (1 + 1e-12)),
        "c1_jump": prof.check_continuity(),
    }


@dataclass
class LocalPerturbation:
    F: FieldExpr
    G: FieldExpr
    eps: float
    A: float
    Phi: float
    b: float
    hgap: float
    phi: Profile | None
    psi: FieldExpr | None
    K: Box
    K_prime: Box
    K_third: Box
    swapped: bool
    forced: bool
    axis: int
    axis_sign: int
    gap: float
    sup_bracket: SupNorm | None
    checks: dict = field(default_factory=dict)
    resolution: tuple = ()

    @property
    def guaranteed(self) -> float:
        """The construction's own guarantee, A^(1/3) eps^(2/3) / 2."""
        return 0.5 * self.A ** (1 / 3) * self.eps ** (2 / 3)

    def to_json(self) -> dict:
        return {
            "eps": self.eps, "A": self.A, "Phi": self.Phi, "b": self.b, "hgap": self.hgap,
            "gap": self.gap, "guaranteed": self.guaranteed, "swapped": self.swapped,
            "forced_orientation": self.forced, "axis": self.axis, "axis_sign": self.axis_sign,
            "resolution": list(self.resolution),
            "refine_spacing": None if self.sup_bracket is None else self.sup_bracket.spacing.tolist(),
            "checks": {k: (float(v) if isinstance(v, (float, np.floating)) else v)
                       for k, v in self.checks.items()},
        }


def _flow_box_axis(gw: FieldExpr, conv, box: Box):
    """(j, sign) if X_gw = sign * e_j on the box grid, else None."""
    X = ham_vector_field(gw, conv)
    pts = box.with_resolution(tuple(min(r, 9) for r in box.resolution)).grid()
    vals = X.evaluate(pts)
    for j in range(gw.dim):
        for s in (1, -1):
            target = np.zeros(gw.dim)
            target[j] = s
            if np.max(np.abs(vals - target)) <= 1e-12:
                return j, s
    return None


def _second_bracket(h, k, x, conv):
    return iterated_bracket(h, [k, k], conv).at(x)


def _orientation(f, g, x, box, conv):
    """Choose the pair to perturb: returns (fw, gw, swapped, forced, axis, sign)."""
    h = poisson(f, g, conv)
    hff = _second_bracket(h, f, x, conv)
    hgg = _second_bracket(h, g, x, conv)
    want_swap = hff < hgg
    options = [(want_swap, False), (not want_swap, True)]
    for swap, forced in options:
        fw, gw = (-g, f) if swap else (f, g)
        ax = _flow_box_axis(gw, conv, box)
        if ax is not None:
            return fw, gw, swap, forced, ax[0], ax[1]
    raise ChartError("neither g nor f generates a constant coordinate field on the box")


def _largest_cube(x, box: Box) -> float:
    x = np.asarray(x, float)
    return float(np.min(np.minimum(x - np.array(box.lows), np.array(box.highs) - x)))


def local_perturbation(f: FieldExpr, g: FieldExpr, x, box: Box, eps: float, conv=None,
                       b: float | None = None, resolution: int | tuple | None = None,
                       verify: bool = True) -> LocalPerturbation:
    """Perturb one function of the pair inside a cube K around the max point x.

    Requires a chart in which one of the two Hamiltonian fields is a constant
    coordinate field, and h = {f,g} aligned with that axis at x (mixed second
    partials along it vanish).  Returns the perturbed pair and the measured
    drop ``gap = h(x) - sup_U {F, G}``.
    """
    x = np.asarray(x, float)
    conv = PairingConvention.standard(f.dim) if conv is None else conv
    box = box if resolution is None else box.with_resolution(resolution)
    h = poisson(f, g, conv)
    hx = h.at(x)
    Phi = -_second_bracket(h, f, x, conv) - _second_bracket(h, g, x, conv)
    fw, gw, swapped, forced, j, sgn = _orientation(f, g, x, box, conv)
    A = -_second_bracket(h, gw, x, conv)
    if A <= 1e-12:
        raise DegenerateMaximumError("second bracket along the flow-box field is not negative")
    # H-alignment: h_{x1 x_k}(x) = 0 for k != j
    hj = h.diff(j)
    cross = [abs(hj.diff(k).at(x)) for k in range(f.dim) if k != j]
    if cross and max(cross) > 1e-9:
        raise ChartError("h is not aligned with the flow-box axis at x")
    if abs(hj.at(x)) > 1e-9:
        raise DegenerateMaximumError("x is not a critical point of h")
    # cube size: largest b with K inside the box and max_{K \ K'} h < h(x)
    hfun = h
    bmax = _largest_cube(x, box) if b is None else float(b)
    if bmax <= 0:
        raise ChartError("x is not inside the box")
    bb = bmax
    for _ in range(60):
        K = Box.cube(x, bb, box.resolution)
        mask_out = lambda p, bb=bb: np.abs(p[:, j] - x[j]) >= bb / 3
        hs = grid_max(hfun.evaluate, K, mask=mask_out)
        if hs.value < hx - 1e-12:
            break
        if b is not None:
            raise InfeasibleError("given b does not isolate the maximum")
        bb *= 0.8
    else:
        raise DegenerateMaximumError("no cube isolates the maximum")
    hgap = hs.value - hx
    K = Box.cube(x, bb, box.resolution)
    Kp = Box(tuple(np.where(np.arange(f.dim) == j, x - bb / 3, x - bb)),
             tuple(np.where(np.arange(f.dim) == j, x + bb / 3, x + bb)), box.resolution)
    K3 = Box.cube(x, bb / 3, box.resolution)
    coords = f.coords
    if eps == 0:
        return LocalPerturbation(f, g, 0.0, A, Phi, bb, hgap, None, None, K, Kp, K3,
                                 swapped, forced, j, sgn, 0.0, None,
                                 {}, box.resolution)
    phi = build_phi_profile(A, eps, bb, hgap)
    x1 = sgn * (coordinate(j, coords) - float(x[j]))
    psi = constant(1.0, coords)
    for k in range(f.dim):
        if k != j:
            psi = psi * plateau((coordinate(k, coords) - float(x[k])) / bb, 1 / 3, 2 / 3)
    bumpterm = compose_profile(phi, x1) * psi
    Fw = fw - bumpterm
    if swapped:
        F, G = f, -Fw
    else:
        F, G = Fw, g
    FG = poisson(F, G, conv)
    sup = grid_max(FG.evaluate, box)
    gap = hx - sup.value
    out = LocalPerturbation(F, G, eps, A, Phi, bb, hgap, phi, psi, K, Kp, K3, swapped,
                            forced, j, sgn, gap, sup, {}, box.resolution)
    if verify:
        out.checks = verify_perturbation(out, f, g, box, conv)
    return out


def verify_perturbation(lp: LocalPerturbation, f, g, box: Box, conv) -> dict:
    """Grid checks of the construction's invariants."""
    chk = check_phi_profile(lp.phi, lp.eps)
    dF = sup_norm(lp.F - f, box).value
    dG = sup_norm(lp.G - g, box).value
    chk["sup_F_minus_f"] = dF
    chk["sup_G_minus_g"] = dG
    chk["within_eps"] = bool(max(dF, dG) <= lp.eps * (1 + 1e-12))
    # shell outside K: K scaled by 1.0..1.1, intersected with the box
    pts = box.grid()
    x0 = np.array(lp.K.lows) + lp.b
    outside = np.max(np.abs(pts - x0), axis=1) > lp.b
    if np.any(outside):
        shell = pts[outside]
        chk["outside_K"] = float(max(np.max(np.abs((lp.F - f).evaluate(shell))),
                                     np.max(np.abs((lp.G - g).evaluate(shell)))))
    else:
        chk["outside_K"] = 0.0
    h = poisson(f, g, conv)
    x1 = lp.axis_sign * (coordinate(lp.axis, f.coords) - float(x0[lp.axis]))
    dphi = compose_profile(lp.phi, x1, order=1)
    ident = poisson(lp.F, lp.G, conv) - (h - dphi * lp.psi)
    chk["identity"] = sup_norm(ident, box).value
    chk["gap_ge_guarantee"] = bool(lp.gap >= lp.guaranteed * (1 - 1e-9))
    return chk


def find_eps0(f, g, x, box: Box, conv=None, lo: float = 1e-12, hi: float = 1.0,
              iters: int = 30, resolution=None) -> float:
    """Largest eps (log bisection) for which the construction verifies.

    The predicate is: the profile is feasible and the measured gap reaches
    the guarantee A^(1/3) eps^(2/3) / 2.
    """
    def ok(e):
        try:
            lp = local_perturbation(f, g, x, box, e, conv, resolution=resolution, verify=False)
        except InfeasibleError:
            return False
        return lp.gap >= lp.guaranteed * (1 - 1e-9)

    if ok(hi):
        return hi
    if not ok(lo):
        raise InfeasibleError("construction fails even at the smallest eps", lo)
    a, b = math.log(lo), math.log(hi)
    for _ in range(iters):
        m = 0.5 * (a + b)
        if ok(math.exp(m)):
            a = m
        else:
            b = m
    return math.exp(a)


# ---------------------------------------------------------------------------
# staircase
# ---------------------------------------------------------------------------

def staircase_profile(width: float = 0.2, name: str = "stair") -> Profile:
    """Nondecreasing profile with value 2k on [2k, 2k+1] and rises of ``width``.

    Each rise is centred at 2k + 1.5, so the derivative supports of
    ``phi(t)`` and ``phi(t + 1)`` are disjoint.
    """
    lo = 1.5 - width / 2
    hi = 1.5 + width / 2
    rise = 2.0 * _S5(Polynomial([0.0, 1.0 / width]))
    return Profile([0.0, lo, hi, 2.0],
                   [Polynomial([0.0]), rise, Polynomial([2.0])],
                   name=name, period=2.0, step=2.0, monotone="nondecreasing")


def staircase_counterexample(B: BilinearForm, h: FieldExpr, n: int,
                             width: float = 0.2):
    """(f_n, g_n) = (phi(n h) / n, phi(n h + 1) / n) with the staircase phi."""
    if n < 1:
        raise ValueError("n must be >= 1")
    phi = staircase_profile(width)
    fn = compose_profile(phi, n * h) / n
    gn = compose_profile(phi, n * h + 1.0) / n
    return fn, gn
