"""Poisson brackets, Hamiltonian vector fields and the bracket invariants.

Everything here is symbolic: brackets are built from exact partial
derivatives of :class:`~poissonlab.fieldexpr.FieldExpr` and only evaluated
at the end.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fieldexpr import DimensionError, FieldDomainError, FieldExpr, Box, SupNorm, constant, grid_max

__all__ = [
    "PairingConvention", "BilinearForm", "VectorFieldExpr",
    "poisson", "ham_vector_field", "iterated_bracket", "phi_invariant",
    "d_operator", "d_power", "h_k", "p_theta", "p_theta_words", "p_theta_direct",
    "directional_seminorm", "point_seminorm", "box_seminorm",
]


@dataclass(frozen=True)
class PairingConvention:
    """Constant symplectic bracket given by (position, momentum) index pairs.

    ``{f,g} = sign * sum_i (f_{q_i} g_{p_i} - f_{p_i} g_{q_i})``.
    """

    pairs: tuple
    sign: int = 1

    def __post_init__(self):
        pairs = tuple((int(q), int(p)) for q, p in self.pairs)
        flat = [i for pr in pairs for i in pr]
        if sorted(flat) != list(range(len(flat))):
            raise ValueError("pair indices must partition 0..2n-1")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def standard(cls, dim: int, sign: int = 1) -> "PairingConvention":
        """Pairs (0,1), (2,3), ...: (x, y) on R^2 and (x, y), (z, u) on R^4."""
        if dim % 2:
            raise DimensionError("symplectic chart needs even dimension")
        return cls(tuple((2 * i, 2 * i + 1) for i in range(dim // 2)), sign)

    @property
    def dim(self) -> int:
        return 2 * len(self.pairs)

    def matrix(self) -> np.ndarray:
        """Bivector P with {f,g} = grad f . P grad g."""
        P = np.zeros((self.dim, self.dim))
        for q, p in self.pairs:
            P[q, p] = self.sign
            P[p, q] = -self.sign
        return P


class BilinearForm:
    """First-order bilinear operator B(u, v) = sum a^{ij} u_i v_j.

    ``coeffs`` is a square nested list of FieldExpr or numbers.  This covers
    the scenario-specific brackets that are not of constant symplectic type.
    """

    def __init__(self, coeffs, coords: Sequence[str]):
        self.coords = tuple(coords)
        d = len(self.coords)
        rows = [[c if isinstance(c, FieldExpr) else constant(c, self.coords) for c in row]
                for row in coeffs]
        if len(rows) != d or any(len(r) != d for r in rows):
            raise DimensionError("coefficient matrix must be dim x dim")
        self.a = rows

    @property
    def dim(self) -> int:
        return len(self.coords)

    def __call__(self, u: FieldExpr, v: FieldExpr) -> FieldExpr:
        _check(u, v)
        du, dv = u.gradient(), v.gradient()
        out = constant(0.0, u.coords)
        for i in range(self.dim):
            for j in range(self.dim):
                a = self.a[i][j]
                if a.is_zero or du[i].is_zero or dv[j].is_zero:
                    continue
                out = out + a * du[i] * dv[j]
        return out

    def is_antisymmetric(self, samples: int = 64, tol: float = 1e-12) -> bool:
        """a^{ij} = -a^{ji}: symbolically, else on random points of [-1, 1]^d."""
        sums = [self.a[i][j] + self.a[j][i] for i in range(self.dim) for j in range(i, self.dim)]
        sums = [s for s in sums if not s.is_zero]
        if not sums:
            return True
        pts = np.random.default_rng(0).uniform(-1, 1, (samples, self.dim))
        try:
            return all(np.max(np.abs(s.evaluate(pts))) <= tol for s in sums)
        except FieldDomainError:
            return False


def _check(f: FieldExpr, g: FieldExpr):
    if f.coords != g.coords:
        raise DimensionError(f"chart mismatch: {f.coords} vs {g.coords}")


def _conv(conv, dim):
    if conv is None:
        return PairingConvention.standard(dim)
    if isinstance(conv, (PairingConvention, BilinearForm)):
        if conv.dim != dim:
            raise DimensionError("convention and chart dimensions differ")
        return conv
    raise TypeError(f"not a bracket convention: {conv!r}")


def poisson(f: FieldExpr, g: FieldExpr, conv=None) -> FieldExpr:
    """The bracket {f, g} (standard pairing by default)."""
    _check(f, g)
    conv = _conv(conv, f.dim)
    if isinstance(conv, BilinearForm):
        return conv(f, g)
    out = constant(0.0, f.coords)
    for q, p in conv.pairs:
        term = f.diff(q) * g.diff(p) - f.diff(p) * g.diff(q)
        out = out + term
    return out if conv.sign == 1 else -out


class VectorFieldExpr:
    """Vector field with one FieldExpr component per chart coordinate."""

    def __init__(self, components: Sequence[FieldExpr]):
        comps = list(components)
        if not comps or any(c.coords != comps[0].coords for c in comps):
            raise DimensionError("components must share a chart")
        if len(comps) != comps[0].dim:
            raise DimensionError("need one component per coordinate")
        self.components = comps

    @property
    def coords(self):
        return self.components[0].coords

    @property
    def dim(self) -> int:
        return len(self.components)

    def __getitem__(self, i) -> FieldExpr:
        return self.components[i]

    def __iter__(self):
        return iter(self.components)

    def evaluate(self, points) -> np.ndarray:
        """Array of shape ``(..., dim)``."""
        return np.stack([c.evaluate(points) for c in self.components], axis=-1)

    def at(self, point) -> np.ndarray:
        return self.evaluate(np.asarray(point, float)[None, :])[0]

    def apply(self, f: FieldExpr) -> FieldExpr:
        """The derivative df(X)."""
        _check(f, self.components[0])
        out = constant(0.0, f.coords)
        for i, c in enumerate(self.components):
            if not c.is_zero:
                out = out + f.diff(i) * c
        return out

    def jacobian(self) -> list[list[FieldExpr]]:
        return [[c.diff(j) for j in range(self.dim)] for c in self.components]

    def __repr__(self):
        return "VectorFieldExpr(" + ", ".join(str(c) for c in self.components) + ")"


def ham_vector_field(g: FieldExpr, conv=None) -> VectorFieldExpr:
    """X_g with df(X_g) = {f, g} for every f."""
    conv = _conv(conv, g.dim)
    if isinstance(conv, BilinearForm):
        comps = []
        for i in range(g.dim):
            c = constant(0.0, g.coords)
            for j in range(g.dim):
                c = c + conv.a[i][j] * g.diff(j)
            comps.append(c)
        return VectorFieldExpr(comps)
    comps = [constant(0.0, g.coords)] * g.dim
    s = conv.sign
    for q, p in conv.pairs:
        comps[q] = s * g.diff(p)
        comps[p] = -s * g.diff(q)
    return VectorFieldExpr(comps)


def iterated_bracket(h: FieldExpr, args: Sequence[FieldExpr], conv=None) -> FieldExpr:
    """Left-nested bracket {...{{h, a1}, a2}, ..., am}."""
    if not args:
        raise ValueError("iterated_bracket needs at least one argument")
    out = h
    for a in args:
        out = poisson(out, a, conv)
    return out


def phi_invariant(f: FieldExpr, g: FieldExpr, conv=None) -> FieldExpr:
    """-{{h,f},f} - {{h,g},g} with h = {f,g}."""
    h = poisson(f, g, conv)
    return -iterated_bracket(h, [f, f], conv) - iterated_bracket(h, [g, g], conv)


def d_operator(k: FieldExpr, f: FieldExpr, g: FieldExpr, conv=None) -> FieldExpr:
    """D(k) = {{k,f},f} + {{k,g},g}."""
    return iterated_bracket(k, [f, f], conv) + iterated_bracket(k, [g, g], conv)


def d_power(l: int, k: FieldExpr, f: FieldExpr, g: FieldExpr, conv=None) -> FieldExpr:
    if l < 1:
        raise ValueError("l must be >= 1")
    for _ in range(l):
        k = d_operator(k, f, g, conv)
    return k


def h_k(f: FieldExpr, g: FieldExpr, x, k: int, l: int, conv=None,
        order: Sequence[int] | None = None) -> float:
    """H_k(x): minus the 2l-fold bracket of h with (2l-k) copies of f and k of g.

    The canonical argument order puts all f's first.  ``order`` may give a
    different sequence of 0 (for f) and 1 (for g) with the same counts.
    """
    if not 0 <= k <= 2 * l:
        raise ValueError("need 0 <= k <= 2l")
    if order is None:
        order = [0] * (2 * l - k) + [1] * k
    elif sorted(order) != [0] * (2 * l - k) + [1] * k:
        raise ValueError("order must contain 2l-k zeros and k ones")
    h = poisson(f, g, conv)
    args = [(f, g)[w] for w in order]
    return -iterated_bracket(h, args, conv).at(x)


def p_theta_words(f: FieldExpr, g: FieldExpr, x, l: int, conv=None) -> dict[tuple, float]:
    """Values at x of every 2l-fold bracket word of h against f and g.

    Keys are tuples of 0 (f) and 1 (g).  Prefixes are shared, so the
    2^(2l) words cost about 2^(2l+1) bracket constructions.
    """
    if l < 1:
        raise ValueError("l must be >= 1")
    h = poisson(f, g, conv)
    out = {}
    layer = {(): h}
    for _ in range(2 * l):
        layer = {w + (c,): poisson(e, (f, g)[c], conv)
                 for w, e in layer.items() for c in (0, 1)}
    pt = np.asarray(x, float)[None, :]
    for w, e in layer.items():
        out[w] = float(e.evaluate(pt)[0])
    return out


def p_theta(f: FieldExpr, g: FieldExpr, x, theta, l: int = 1, conv=None, words=None):
    """P_{2l}(theta) = -(2l-fold bracket of h with k_theta = cos f + sin g)(x).

    Expanded by multilinearity over the bracket words, which is exact.
    ``theta`` may be an array.
    """
    if words is None:
        words = p_theta_words(f, g, x, l, conv)
    th = np.asarray(theta, float)
    c, s = np.cos(th), np.sin(th)
    out = np.zeros_like(th)
    for w, val in words.items():
        ng = sum(w)
        out = out - val * c ** (len(w) - ng) * s ** ng
    return float(out) if out.ndim == 0 else out


def p_theta_direct(f: FieldExpr, g: FieldExpr, x, theta: float, l: int = 1, conv=None) -> float:
    """Same value as :func:`p_theta`, built symbolically on k_theta for one angle."""
    k = math.cos(theta) * f + math.sin(theta) * g
    h = poisson(f, g, conv)
    return -iterated_bracket(h, [k] * (2 * l), conv).at(x)


# ---------------------------------------------------------------------------
# seminorms
# ---------------------------------------------------------------------------

def _line_derivative(h: FieldExpr, v, k: int) -> FieldExpr:
    e = h
    for _ in range(k):
        e2 = constant(0.0, h.coords)
        for i, vi in enumerate(v):
            if vi != 0.0:
                e2 = e2 + float(vi) * e.diff(i)
        e = e2
    return e


def directional_seminorm(h: FieldExpr, x, v, k: int) -> float:
    """|(1/k!) d^k/dt^k h(x + t v)| at t = 0 for a unit vector v."""
    v = np.asarray(v, float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise ValueError("direction must have unit Euclidean norm")
    return abs(_line_derivative(h, v, k).at(x)) / math.factorial(k)


def _sym_tensor_eval(h: FieldExpr, x, k: int):
    """All k-th partials of h at x, keyed by sorted index tuples."""
    pt = np.asarray(x, float)[None, :]
    out = {}
    for idx in itertools.combinations_with_replacement(range(h.dim), k):
        e = h
        for i in idx:
            e = e.diff(i)
        out[idx] = float(e.evaluate(pt)[0])
    return out


def _tensor_contract(tensor, V):
    """sum over sorted multi-indices with multinomial weights, for rows of V."""
    total = np.zeros(len(V))
    for idx, val in tensor.items():
        if val == 0.0:
            continue
        counts = np.bincount(idx, minlength=V.shape[1])
        mult = math.factorial(len(idx)) / np.prod([math.factorial(c) for c in counts])
        total += mult * val * np.prod(V[:, list(idx)], axis=1)
    return total


def point_seminorm(h: FieldExpr, x, k: int, samples: int | None = None, seed: int = 0):
    """max over unit v of the directional seminorm, with the method used.

    Returns ``(value, method)``: k = 1 is the exact gradient norm, k = 2 the
    exact largest absolute Hessian eigenvalue over 2, and k >= 3 a sampled
    maximum over ``256 (dim - 1)`` random directions plus a local refinement
    pass.
    """
    d = h.dim
    pt = np.asarray(x, float)[None, :]
    if k == 1:
        g = np.array([c.evaluate(pt)[0] for c in h.gradient()])
        return float(np.linalg.norm(g)), "exact"
    if k == 2:
        H = np.array([[h.diff(i).diff(j).evaluate(pt)[0] for j in range(d)] for i in range(d)])
        return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (H + H.T))))) / 2.0, "exact"
    tensor = _sym_tensor_eval(h, x, k)
    n = samples or 256 * (d - 1)
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((n, d))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    vals = np.abs(_tensor_contract(tensor, V))
    best = V[int(np.argmax(vals))]
    bestval = float(vals.max())
    step = 0.5
    for _ in range(40):
        W = best + step * rng.standard_normal((64, d))
        W /= np.linalg.norm(W, axis=1, keepdims=True)
        wv = np.abs(_tensor_contract(tensor, W))
        j = int(np.argmax(wv))
        if wv[j] > bestval:
            bestval, best = float(wv[j]), W[j]
        else:
            step *= 0.6
    return bestval / math.factorial(k), f"sampled:{n}"


def box_seminorm(h: FieldExpr, box: Box, k: int) -> SupNorm:
    """sup over the grid of ``box`` of the point seminorm, for k in {1, 2}."""
    if k == 1:
        grad = h.gradient()
        return grid_max(lambda p: np.sqrt(sum(c.evaluate(p) ** 2 for c in grad)), box)
    if k == 2:
        d = h.dim
        hess = [[h.diff(i).diff(j) for j in range(d)] for i in range(d)]

        def f(p):
            H = np.empty(p.shape[:-1] + (d, d))
            for i in range(d):
                for j in range(i, d):
                    H[..., i, j] = H[..., j, i] = hess[i][j].evaluate(p)
            return np.max(np.abs(np.linalg.eigvalsh(H)), axis=-1) / 2.0

        return grid_max(f, box)
    raise ValueError("box seminorm implemented for k = 1, 2")
