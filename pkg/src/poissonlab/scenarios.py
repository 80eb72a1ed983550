"""Built-in catalog of worked examples, each self-checked at load time."""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bracketops import (BilinearForm, PairingConvention, iterated_bracket, phi_invariant,
                         poisson)
from .fieldexpr import (Box, FieldExpr, apply, bump, constant, coordinate, parse_field,
                        grid_max, smoothstep, sup_norm)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

__all__ = ["Scenario", "Reference", "ScenarioError", "catalog", "get", "names",
           "load_toml", "scenario_from_dict"]


class ScenarioError(ValueError):
    pass


@dataclass
class Reference:
    """A declared value and the oracle that recomputes it."""

    name: str
    value: float
    compute: Callable[[], float]
    provenance: str
    tol: float = 1e-6

    def check(self) -> float:
        got = float(self.compute())
        if not abs(got - self.value) <= self.tol * max(1.0, abs(self.value)):
            raise ScenarioError(f"reference {self.name}: declared {self.value!r}, oracle {got!r}")
        return got


@dataclass
class Scenario:
    name: str
    f: FieldExpr
    g: FieldExpr
    x: np.ndarray
    box: Box
    conv: object = None
    families: dict = field(default_factory=dict)
    aux: dict = field(default_factory=dict)
    expectations: dict = field(default_factory=dict)
    references: list = field(default_factory=list)
    description: str = ""

    @property
    def dim(self) -> int:
        return self.f.dim

    @property
    def coords(self):
        return self.f.coords

    @property
    def h(self) -> FieldExpr:
        return poisson(self.f, self.g, self.conv)

    def bracket(self, a: FieldExpr, b: FieldExpr) -> FieldExpr:
        return poisson(a, b, self.conv)

    def verify(self) -> dict:
        return {r.name: r.check() for r in self.references}

    def summary(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "coords": list(self.coords),
            "f": str(self.f),
            "g": str(self.g),
            "x": [float(v) for v in self.x],
            "box": {"lows": list(self.box.lows), "highs": list(self.box.highs),
                    "resolution": list(self.box.resolution)},
            "references": {r.name: {"value": r.value, "provenance": r.provenance}
                           for r in self.references},
            "expectations": dict(self.expectations),
        }


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _at(e: FieldExpr, x):
    return lambda: e.at(x)


def _second(h, k, x, conv):
    return lambda: iterated_bracket(h, [k, k], conv).at(x)


def _bracket_refs(f, g, x, conv, h_val, phi_val, hff, hgg, prov):
    h = poisson(f, g, conv)
    return [
        Reference("h(x)", h_val, _at(h, x), prov),
        Reference("Phi(x)", phi_val, _at(phi_invariant(f, g, conv), x), prov),
        Reference("{{h,f},f}(x)", hff, _second(h, f, x, conv), prov),
        Reference("{{h,g},g}(x)", hgg, _second(h, g, x, conv), prov),
    ]


def _planar(f_text, g_text, name, box, refs, desc, coords=("x", "y"), x=(0.0, 0.0),
            expectations=None):
    f = parse_field(f_text, coords=coords)
    g = parse_field(g_text, coords=coords)
    conv = PairingConvention.standard(2)
    x = np.array(x, float)
    sc = Scenario(name, f, g, x, box, conv, description=desc,
                  expectations=expectations or {"rigidity": True, "complete_flow": True})
    sc.references = _bracket_refs(f, g, x, conv, *refs)
    return sc


def cubic_model() -> Scenario:
    return _planar("x - x^3/3 - x*y^2", "y", "cubic_model", Box((-1, -1), (1, 1), 201),
                   (1.0, 4.0, -2.0, -2.0, "DERIVED: bracket oracle"),
                   "h = 1 - x^2 - y^2 with a nondegenerate max at 0")


def cubic_model_dual() -> Scenario:
    """Same bracket as cubic_model with the roles of the two functions exchanged.

    (f, g) -> (g, -f) keeps h; the construction then perturbs the second
    function, so the two flows in the displacement experiment differ.
    """
    return _planar("y", "-x + x^3/3 + x*y^2", "cubic_model_dual", Box((-1, -1), (1, 1), 201),
                   (1.0, 4.0, -2.0, -2.0, "DERIVED: bracket oracle"),
                   "cubic_model with (f, g) replaced by (g, -f)")


def quadratic_model() -> Scenario:
    sc = _planar("x", "y*(1 - x^2 - y^2)", "quadratic_model", Box((-1, -1), (1, 1), 201),
                 (1.0, 8.0, -6.0, -2.0, "DERIVED: bracket oracle"),
                 "h = 1 - x^2 - 3 y^2, Phi(0) = 8")
    h = sc.h
    sc.references.append(Reference("h(0.5,0.5)", 0.0, _at(h, [0.5, 0.5]), "DERIVED: 1 - 1/4 - 3/4"))
    return sc


def quartic_model() -> Scenario:
    """h = 1 - x^4 - y^4: multiplicity 4 at the origin, Phi(0) = 0."""
    sc = _planar("x - x^5/5 - x*y^4", "y", "quartic_model", Box((-1, -1), (1, 1), 201),
                 (1.0, 0.0, 0.0, 0.0, "DERIVED: bracket oracle"),
                 "degenerate maximum of multiplicity 4")
    sc.expectations["multiplicity"] = 4
    return sc


def vanishing_pair(chi: FieldExpr | None = None, chi_norm: float = 1.0) -> Scenario:
    """F_n = chi(p) cos(n q) / sqrt(n), G_n = chi(p) sin(n q) / sqrt(n); limits f = g = 0."""
    coords = ("q", "p")
    q, p = coordinate("q", coords), coordinate("p", coords)
    if chi is None:
        chi = bump(p)

    def Fn(n):
        return chi * apply("cos", n * q) / math.sqrt(n)

    def Gn(n):
        return chi * apply("sin", n * q) / math.sqrt(n)

    zero = constant(0.0, coords)
    conv = PairingConvention.standard(2)
    box = Box((0.0, -1.5), (2 * math.pi, 1.5), (257, 301))
    chichi = chi * chi.diff("p")
    sc = Scenario("polterovich", zero, zero, np.array([0.0, 0.0]), box, conv,
                  families={"F": Fn, "G": Gn}, aux={"chi": chi, "chi_chi_prime": chichi},
                  expectations={"rigidity": False, "bracket_magnitude": "|chi chi'|",
                                "unicontinuity_limit": chi_norm ** 2},
                  description="uniformly vanishing pair with non-vanishing bracket")
    sc.references = [
        Reference("|chi|", chi_norm, lambda: sup_norm(chi, box).value, "SOURCE: bump normalized to 1"),
        Reference("{F_4,G_4}+chi chi'", 0.0,
                  lambda: sup_norm(poisson(Fn(4), Gn(4), conv) + chichi, box).value,
                  "SOURCE: bracket equals -chi chi' under the standard pairing", tol=1e-10),
    ]
    return sc


def _gcondition_fields(coords):
    x, y, z, u = (coordinate(c, coords) for c in coords)
    chi = apply("sqrt", 2 * z + 2)

    def fn(n):
        return x + chi * apply("cos", n * u) / math.sqrt(n)

    def gn(n):
        return y - chi * apply("sin", n * u) / math.sqrt(n)

    return x, y, chi, fn, gn


def incomplete_flow() -> Scenario:
    """Chart -1 < z < 1 of R^4 with f = x, g = y and the sqrt(2z+2) family.

    The source prints the manifold as 1 < z < 1; the sqrt forces z > -1.
    """
    coords = ("x", "y", "z", "u")
    x, y, chi, fn, gn = _gcondition_fields(coords)
    conv = PairingConvention.standard(4)
    box = Box((-1, -1, -0.999, -math.pi), (1, 1, 0.999, math.pi), (9, 9, 21, 21))
    sc = Scenario("incomplete_flow", x, y, np.zeros(4), box, conv,
                  families={"f": fn, "g": gn}, aux={"chi": chi},
                  expectations={"rigidity": False, "complete_flow": False,
                                "bracket_limit": 1.0, "bracket_sequence": 0.0},
                  description="flows of g_n leave the chart in finite time")
    sc.references = [
        Reference("chi(1)", 2.0, lambda: chi.at([0, 0, 1, 0]), "SOURCE: sqrt(2t+2) at t=1"),
        Reference("chi chi'", 1.0, lambda: (chi * chi.diff("z")).at([0, 0, 0.3, 0]),
                  "SOURCE: chi chi' = 1"),
        Reference("{f,g}", 1.0, lambda: poisson(x, y, conv).at([0, 0, 0, 0]), "SOURCE: {f,g} = 1"),
        Reference("{f_3,g_3}", 0.0, lambda: sup_norm(poisson(fn(3), gn(3), conv), box).value,
                  "SOURCE: {f_n,g_n} = 0", tol=1e-10),
    ]
    return sc


def nonlocal_psi(s: FieldExpr) -> FieldExpr:
    """1 on |s| <= 1/4, 0 on |s| >= 1/3, s psi'(s) <= 0."""
    return smoothstep(12 * (s + 1.0 / 3.0)) * smoothstep(12 * (1.0 / 3.0 - s))


def nonlocal_cutoff() -> Scenario:
    coords = ("x", "y", "z", "u")
    x, y, chi, fn, gn = _gcondition_fields(coords)
    phi = constant(1.0, coords)
    for c in coords:
        phi = phi * nonlocal_psi(coordinate(c, coords))
    F, G = x * phi, y * phi
    conv = PairingConvention.standard(4)
    box = Box((-0.5,) * 4, (0.5,) * 4, 21)
    K = Box((-0.25,) * 4, (0.25,) * 4, 11)

    def Fn(n):
        return fn(n) * phi

    def Gn(n):
        return gn(n) * phi

    FG = poisson(F, G, conv)
    sc = Scenario("nonlocal_cutoff", F, G, np.zeros(4), box, conv,
                  families={"F": Fn, "G": Gn}, aux={"phi": phi, "K": K, "x": x, "y": y},
                  expectations={"rigidity": False, "locality": False, "sup_bracket": 1.0},
                  description="compactly supported cut-offs of the incomplete-flow example")
    sc.references = [
        Reference("{F,G}(0)", 1.0, _at(FG, [0, 0, 0, 0]), "SOURCE: {F,G} = 1 in K"),
        Reference("max {F,G}", 1.0, lambda: grid_max(FG.evaluate, box).value, "SOURCE: {F,G} <= 1"),
    ]
    return sc


def staircase() -> Scenario:
    coords = ("x", "y")
    B = BilinearForm([[1.0, 0.0], [0.0, 0.0]], coords)
    h = coordinate("x", coords)
    box = Box((-3, -3), (3, 3), 121)
    sc = Scenario("staircase", h, h, np.zeros(2), box, B, aux={"h": h, "B": B},
                  expectations={"antisymmetric": False},
                  description="B(u,v) = u_x v_x, h = x")
    sc.references = [Reference("B(h,h)", 1.0, lambda: B(h, h).at([0.0, 0.0]), "DERIVED: h_x^2")]
    return sc


def torus_B() -> Scenario:
    coords = ("x", "y", "z")
    z = coordinate("z", coords)
    H = apply("sin", z) ** 2 + 1.0
    zero = constant(0.0, coords)
    B = BilinearForm([[zero, H, zero], [-H, zero, zero], [zero, zero, zero]], coords)
    f, g = coordinate("x", coords), coordinate("y", coords)
    box = Box((0, 0, 0), (2 * math.pi,) * 3, 33)
    sc = Scenario("torus_B", f, g, np.array([0.0, 0.0, math.pi / 2]), box, B,
                  aux={"B": B, "H": H},
                  expectations={"antisymmetric": True, "degenerate": True},
                  description="(sin^2 z + 1)(f_x g_y - f_y g_x) on the 3-torus")
    sc.references = [
        Reference("B(x,y) at z=pi/2", 2.0, lambda: B(f, g).at([0, 0, math.pi / 2]),
                  "DERIVED: sin^2 + 1 = 2"),
        Reference("sup B(x,y)", 2.0, lambda: sup_norm(B(f, g), box).value, "DERIVED"),
    ]
    return sc


_BUILDERS = {
    "cubic_model": cubic_model,
    "cubic_model_dual": cubic_model_dual,
    "quadratic_model": quadratic_model,
    "quartic_model": quartic_model,
    "polterovich": vanishing_pair,
    "incomplete_flow": incomplete_flow,
    "nonlocal_cutoff": nonlocal_cutoff,
    "staircase": staircase,
    "torus_B": torus_B,
}


def names() -> list[str]:
    return list(_BUILDERS)


def get(name: str, verify: bool = True) -> Scenario:
    try:
        sc = _BUILDERS[name]()
    except KeyError:
        raise ScenarioError(f"unknown scenario {name!r}") from None
    if verify:
        sc.verify()
    return sc


def catalog(verify: bool = True) -> list[Scenario]:
    return [get(n, verify) for n in _BUILDERS]


# ---------------------------------------------------------------------------
# TOML scenarios
# ---------------------------------------------------------------------------

_REF_ORACLES = {
    "h": lambda sc: _at(sc.h, sc.x),
    "Phi": lambda sc: _at(phi_invariant(sc.f, sc.g, sc.conv), sc.x),
    "hff": lambda sc: _second(sc.h, sc.f, sc.x, sc.conv),
    "hgg": lambda sc: _second(sc.h, sc.g, sc.x, sc.conv),
}


def scenario_from_dict(d: dict) -> Scenario:
    """Build a scenario from a mapping with keys name, dim, f, g, x, box, ...

    ``convention`` is ``"standard"`` (default), ``{sign = -1}`` or
    ``{pairs = [[0, 1]], sign = 1}``.  ``references`` maps one of
    h, Phi, hff, hgg to a declared value, re-verified here.
    """
    try:
        name = d["name"]
        dim = int(d["dim"])
        coords = tuple(d.get("coords") or ()) or None
        f = parse_field(d["f"], dim=dim, coords=coords)
        g = parse_field(d["g"], dim=dim, coords=coords)
        conv_spec = d.get("convention", "standard")
        if conv_spec == "standard":
            conv = PairingConvention.standard(dim)
        elif isinstance(conv_spec, dict):
            pairs = conv_spec.get("pairs")
            sign = int(conv_spec.get("sign", 1))
            conv = (PairingConvention(tuple(map(tuple, pairs)), sign) if pairs
                    else PairingConvention.standard(dim, sign))
        else:
            raise ScenarioError(f"bad convention {conv_spec!r}")
        x = np.array(d.get("x", [0.0] * dim), float)
        b = d["box"]
        box = Box(tuple(b["lows"]), tuple(b["highs"]), b.get("resolution", 101))
    except KeyError as e:
        raise ScenarioError(f"missing key {e.args[0]!r}") from None
    if len(x) != dim or box.dim != dim:
        raise ScenarioError("x and box must match dim")
    sc = Scenario(name, f, g, x, box, conv, expectations=dict(d.get("expectations", {})),
                  description=d.get("description", ""))
    for key, val in d.get("references", {}).items():
        if key not in _REF_ORACLES:
            raise ScenarioError(f"unknown reference {key!r}")
        sc.references.append(Reference(key, float(val), _REF_ORACLES[key](sc), "USER"))
    sc.verify()
    return sc


def load_toml(path) -> Scenario:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return scenario_from_dict(data.get("scenario", data))
