"""Hamiltonian flows, transported point clouds and displacement bounds.

The integrator is the implicit midpoint rule, solved by Newton's method and
vectorised over a batch of initial points.  An optional fourth-order variant
composes three midpoint steps (triple jump).
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from .bracketops import VectorFieldExpr, ham_vector_field, box_seminorm
from .fieldexpr import Box, FieldBundle, FieldDomainError, FieldExpr, sup_norm

__all__ = [
    "Trajectory", "SlabSet", "PlanarDomain", "CriticalPointError",
    "integrate", "flow_points", "transport_set", "displacement_check",
    "hofer_upper", "energy_lower_product", "energy_lower_slab", "sample_slab",
    "displacement_margin", "COMPLETED", "LEFT_DOMAIN", "DIVERGED",
]

COMPLETED = "completed"
LEFT_DOMAIN = "left-domain"
DIVERGED = "diverged"

_TJ = 2.0 ** (1.0 / 3.0)
_TRIPLE_JUMP = (1.0 / (2.0 - _TJ), -_TJ / (2.0 - _TJ), 1.0 / (2.0 - _TJ))


class CriticalPointError(ValueError):
    pass


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("LAB_THREADS", "1")))
    except ValueError:
        return 1


class _Field:
    """Compiled right-hand side and Jacobian of a Hamiltonian vector field."""

    def __init__(self, H: FieldExpr, conv):
        self.X: VectorFieldExpr = ham_vector_field(H, conv)
        self.dim = d = H.dim
        self._rhs = FieldBundle(list(self.X))
        self._jac = FieldBundle([e for row in self.X.jacobian() for e in row])

    def rhs(self, Y):
        return self._rhs.evaluate(Y)

    def jac(self, Y):
        J = self._jac.evaluate(Y)
        return J.reshape(Y.shape[:-1] + (self.dim, self.dim))


def _midpoint_step(field: _Field, Y0, h, max_iter, tol):
    """One implicit midpoint step for a batch; returns (Y1, converged mask)."""
    Y = Y0 + h * field.rhs(Y0)
    d = Y0.shape[-1]
    eye = np.eye(d)
    for _ in range(max_iter):
        M = 0.5 * (Y0 + Y)
        R = Y - Y0 - h * field.rhs(M)
        Jm = eye - 0.5 * h * field.jac(M)
        dY = np.linalg.solve(Jm, R[..., None])[..., 0]
        Y = Y - dY
        if np.all(np.abs(dY) <= tol * (1 + np.abs(Y))):
            break
    R = Y - Y0 - h * field.rhs(0.5 * (Y0 + Y))
    ok = np.all(np.abs(R) <= 1e-12 * (1 + np.abs(Y)), axis=-1)
    return Y, ok


def _safe_step(field, Y0, h, order, max_iter, tol):
    """Step every row; rows that hit a domain error get NaN."""
    hs = (h,) if order == 2 else tuple(c * h for c in _TRIPLE_JUMP)

    def run(Y):
        ok = np.ones(len(Y), bool)
        for hh in hs:
            Y, ok1 = _midpoint_step(field, Y, hh, max_iter, tol)
            ok &= ok1
        return Y, ok

    try:
        return run(Y0)
    except FieldDomainError:
        out = np.full_like(Y0, np.nan)
        ok = np.zeros(len(Y0), bool)
        for k in range(len(Y0)):
            try:
                out[k:k + 1], ok[k:k + 1] = run(Y0[k:k + 1])
            except FieldDomainError:
                ok[k] = True  # domain exit, not a solver failure
        return out, ok


def flow_points(H: FieldExpr, points, t: float, step: float, box: Box, conv=None,
                order: int = 2, bound: float = 1e6, max_iter: int = 50,
                tol: float = 1e-14, record: bool = False):
    """Integrate a batch of points; returns (final, status, t_star[, history]).

    ``status`` holds one of :data:`COMPLETED`, :data:`LEFT_DOMAIN`,
    :data:`DIVERGED` per point and ``t_star`` the last valid time.  Points
    that stop early keep their last valid state.  A point whose implicit
    midpoint equation has no converged solution is reported as diverged.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    Y = np.array(points, dtype=float, ndmin=2)
    if Y.shape[-1] != H.dim:
        raise ValueError("points do not match the chart dimension")
    if not np.all(box.contains(Y)):
        raise ValueError("initial points must lie inside the box")
    n = max(1, math.ceil(abs(t) / step - 1e-12)) if t != 0 else 0
    h = t / n if n else 0.0
    field_ = _Field(H, conv)
    status = np.array([COMPLETED] * len(Y), dtype=object)
    tstar = np.full(len(Y), float(t))
    live = np.ones(len(Y), bool)
    hist = [Y.copy()] if record else None
    for k in range(n):
        idx = np.flatnonzero(live)
        if len(idx) == 0:
            break
        Ynew, ok = _safe_step(field_, Y[idx], h, order, max_iter, tol)
        bad_domain = ~np.all(np.isfinite(Ynew), axis=-1)
        # no midpoint solution: the step is too long for the local field,
        # which near a finite-time singularity means blow-up
        nosol = ~ok & ~bad_domain
        fin = np.where((bad_domain | nosol)[:, None], 0.0, Ynew)
        out_box = (~box.contains(fin) | bad_domain) & ~nosol
        big = (np.linalg.norm(fin, axis=-1) > bound) | nosol
        stop = out_box | big
        for j, gi in enumerate(idx):
            if stop[j]:
                live[gi] = False
                status[gi] = DIVERGED if (big[j] and not out_box[j]) else LEFT_DOMAIN
                tstar[gi] = k * h
        keep = idx[~stop]
        Y[keep] = Ynew[~stop]
        if record:
            hist.append(Y.copy())
    if record:
        return Y, status, tstar, np.array(hist), h
    return Y, status, tstar


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    status: str
    t_star: float
    energy: np.ndarray
    coords: tuple = ()

    @property
    def end(self) -> np.ndarray:
        return self.states[-1]

    @property
    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.energy - self.energy[0])))

    def to_csv(self, path) -> None:
        names = list(self.coords) or [f"x{i + 1}" for i in range(self.states.shape[1])]
        with open(path, "w") as fh:
            fh.write("# trajectory v1 status=%s t_star=%r\n" % (self.status, self.t_star))
            fh.write(",".join(["t", *names, "H"]) + "\n")
            for t, s, e in zip(self.times, self.states, self.energy):
                fh.write(",".join(repr(float(v)) for v in (t, *s, e)) + "\n")


def integrate(H: FieldExpr, x0, t_end: float, step: float, box: Box, conv=None,
              order: int = 2, bound: float = 1e6, max_iter: int = 50) -> Trajectory:
    """Implicit midpoint trajectory of X_H from x0 over [0, t_end].

    Negative ``t_end`` runs the flow backwards.  The trajectory stops early
    with status ``left-domain`` when it leaves ``box`` (or the domain of H)
    and ``diverged`` when the state norm exceeds ``bound``.
    """
    Y, status, tstar, hist, h = flow_points(H, [x0], t_end, step, box, conv, order,
                                           bound, max_iter, record=True)
    states = hist[:, 0, :]
    n_valid = len(states)
    if status[0] != COMPLETED:
        n_valid = int(round(tstar[0] / h)) + 1 if h else 1
        states = states[:n_valid]
    times = h * np.arange(n_valid)
    energy = H.evaluate(states)
    return Trajectory(times, states, str(status[0]), float(tstar[0]), energy, H.coords)


def transport_set(H: FieldExpr, cloud, t: float, step: float, box: Box, conv=None,
                  order: int = 2, chunk: int = 1024):
    """Flow every point of ``cloud`` for time t; returns (cloud', status)."""
    pts = np.array(cloud, dtype=float, ndmin=2)
    if t == 0:
        return pts.copy(), np.array([COMPLETED] * len(pts), dtype=object)
    parts = [pts[i:i + chunk] for i in range(0, len(pts), chunk)]

    def job(p):
        Y, st, _ = flow_points(H, p, t, step, box, conv, order)
        return Y, st

    nthreads = min(_threads(), len(parts))
    if nthreads > 1:
        with ThreadPoolExecutor(nthreads) as ex:
            res = list(ex.map(job, parts))
    else:
        res = [job(p) for p in parts]
    return np.concatenate([r[0] for r in res]), np.concatenate([r[1] for r in res])


def displacement_check(values_a, values_b):
    """(min(values_a) > max(values_b), min(values_a) - max(values_b))."""
    a = np.asarray(values_a, float)
    b = np.asarray(values_b, float)
    if a.size == 0 or b.size == 0:
        raise ValueError("both clouds must be nonempty")
    margin = float(a.min() - b.max())
    return margin > 0, margin


def hofer_upper(g: FieldExpr, G: FieldExpr, t: float, box: Box) -> float:
    """2 t sup|g - G| over the box grid."""
    return 2.0 * abs(t) * sup_norm(g - G, box).value


# ---------------------------------------------------------------------------
# displacement energy lower bounds
# ---------------------------------------------------------------------------

def _segments_cross(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < 1e-15 else (1 if v > 0 else -1)

    def on_seg(a, b, c):
        return (min(a[0], b[0]) - 1e-15 <= c[0] <= max(a[0], b[0]) + 1e-15
                and min(a[1], b[1]) - 1e-15 <= c[1] <= max(a[1], b[1]) + 1e-15)

    o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
    o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
    if o1 != o2 and o3 != o4:
        return True
    return ((o1 == 0 and on_seg(p1, p2, p3)) or (o2 == 0 and on_seg(p1, p2, p4))
            or (o3 == 0 and on_seg(p3, p4, p1)) or (o4 == 0 and on_seg(p3, p4, p2)))


class PlanarDomain:
    """Simple polygon (vertex list) or axis-aligned rectangle."""

    def __init__(self, vertices):
        v = np.asarray(vertices, float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("polygon needs at least three 2D vertices")
        self.vertices = v
        n = len(v)
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_cross(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                    raise ValueError("polygon is self-intersecting")
        if self.area <= 0:
            raise ValueError("degenerate polygon")

    @classmethod
    def rectangle(cls, x0, x1, y0, y1) -> "PlanarDomain":
        return cls([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])

    @classmethod
    def regular(cls, n: int, radius: float = 1.0) -> "PlanarDomain":
        a = 2 * np.pi * np.arange(n) / n
        return cls(np.stack([radius * np.cos(a), radius * np.sin(a)], axis=1))

    @property
    def area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def energy_lower_product(domains: Sequence[PlanarDomain]) -> float:
    """Half the smallest factor area of a product of planar domains."""
    if not domains:
        raise ValueError("need at least one domain")
    return 0.5 * min(d.area for d in domains)


def energy_lower_slab(f: FieldExpr, x, r: float, alpha: float, conv=None,
                      kappa: float = 0.05) -> float:
    """C r alpha with C = (1 - kappa) / |X_f(x)|."""
    X = ham_vector_field(f, conv).at(x)
    nx = float(np.linalg.norm(X))
    if nx < 1e-12:
        raise CriticalPointError("X_f vanishes at x")
    return (1.0 - kappa) / nx * r * alpha


# ---------------------------------------------------------------------------
# slabs
# ---------------------------------------------------------------------------

@dataclass
class SlabSet:
    center: np.ndarray
    r: float
    alpha: float
    f: FieldExpr
    points: np.ndarray
    drawn: int = 0
    seed: int = 42
    meta: dict = field(default_factory=dict)

    def contains(self, pts) -> np.ndarray:
        pts = np.asarray(pts, float)
        fx = self.f.at(self.center)
        fv = self.f.evaluate(pts)
        near = np.linalg.norm(pts - self.center, axis=-1) < self.r
        return near & (fv > fx) & (fv < fx + self.alpha)


def sample_slab(f: FieldExpr, x, r: float, alpha: float, n: int = 4096,
                seed: int = 42, max_draws: int = 1 << 22) -> SlabSet:
    """Quasi-random points of B_x(r) intersected with {f(x) < f < f(x) + alpha}.

    Sobol points are drawn in a box aligned with grad f(x) whose thickness
    covers the level band to second order, then filtered by exact membership.
    """
    x = np.asarray(x, float)
    d = f.dim
    grad = np.array([c.at(x) for c in f.gradient()])
    gn = float(np.linalg.norm(grad))
    if gn < 1e-12:
        raise CriticalPointError("slab needs grad f(x) != 0")
    u = grad / gn
    # orthonormal frame with u first
    Qm, _ = np.linalg.qr(np.column_stack([u, np.eye(d)]))
    frame = Qm[:, :d]
    if frame[:, 0] @ u < 0:
        frame[:, 0] *= -1
    local = Box.cube(x, r, 3)
    hmax = box_seminorm(f, local, 2).value * 2.0  # largest |Hessian eigenvalue|
    curv = 0.5 * hmax * r * r
    s_lo = max(-r, -1.1 * curv / gn)
    s_hi = min(r, 1.1 * (alpha + curv) / gn)
    lows = np.array([s_lo] + [-r] * (d - 1))
    highs = np.array([s_hi] + [r] * (d - 1))
    sob = qmc.Sobol(d, scramble=True, seed=seed)
    slab = SlabSet(x, r, alpha, f, np.empty((0, d)), 0, seed,
                   {"thickness": [float(s_lo), float(s_hi)]})
    got = []
    total = 0
    batch = 1 << max(10, int(math.ceil(math.log2(max(n, 2)))))
    while sum(len(g) for g in got) < n:
        if total >= max_draws:
            raise RuntimeError("slab acceptance rate too low")
        U = sob.random(batch)
        total += batch
        loc = lows + U * (highs - lows)
        pts = x + loc @ frame.T
        got.append(pts[slab.contains(pts)])
    slab.points = np.concatenate(got)[:n]
    slab.drawn = total
    return slab


def displacement_margin(delta: float, t: float, r: float, alpha: float, eps_f: float,
                        h_u2: float, xg_u: float):
    """Both sides of the sufficient condition for displacing the slab.

    Returns ``(lhs, rhs, holds)`` with ``lhs = delta t`` and
    ``rhs = (h_u2 / 3 xg_u) (r + t xg_u)^3 + 2 eps_f + alpha``.  ``eps_f`` is
    the uniform distance between f and F; ``h_u2`` the second-order
    seminorm of h = {f,g} over U; ``xg_u`` the sup of |X_g| over U.
    """
    rhs = h_u2 / (3.0 * xg_u) * (r + t * xg_u) ** 3 + 2.0 * eps_f + alpha
    lhs = delta * t
    return lhs, rhs, bool(lhs >= rhs)
