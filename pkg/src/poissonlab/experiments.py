"""Named experiments: each returns a report of checks and writes its artifacts."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, plotting
from . import scenarios as scen
from .bracketops import (BilinearForm, d_power, h_k, ham_vector_field, p_theta,
                         p_theta_words, phi_invariant, poisson, box_seminorm)
from .fieldexpr import Box, FieldExpr, grid_max, sup_norm
from .hamflow import (COMPLETED, displacement_check, displacement_margin, energy_lower_slab,
                      hofer_upper, integrate, sample_slab, transport_set)
from .perturber import find_eps0, local_perturbation, staircase_counterexample
from .ratemeter import (first_order_bound, higher_bound, intermediate_bound,
                        theoretical_band, truncated_jet_bound, unicontinuity_criterion,
                        upsilon_upper_curve)
from .trigfact import FactorizationError, fejer_riesz, from_angle_samples, mean_bound

__all__ = ["ConfigError", "Report", "EXPERIMENTS", "run_experiment", "DEFAULTS"]

CSV_VERSION = "poissonlab-csv v1"


class ConfigError(ValueError):
    pass


@dataclass
class Report:
    experiment: str
    scenario: str
    config: dict
    checks: list = field(default_factory=list)
    values: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)

    def check(self, name: str, passed: bool, value=None, threshold=None, resolution=None):
        self.checks.append({
            "name": name, "pass": bool(passed), "value": _jsonable(value),
            "threshold": _jsonable(threshold), "resolution": _jsonable(resolution),
        })
        return passed

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks)

    def failures(self) -> list[str]:
        return [c["name"] for c in self.checks if not c["pass"]]

    def to_json(self) -> dict:
        return {"version": __version__, "experiment": self.experiment, "scenario": self.scenario,
                "config": _jsonable(self.config), "passed": self.passed,
                "checks": self.checks, "values": _jsonable(self.values),
                "artifacts": self.artifacts}


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def write_csv(path, header: list[str], rows, comment: str = "") -> None:
    with open(path, "w") as fh:
        fh.write(f"# {CSV_VERSION} {comment}".rstrip() + "\n")
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(_cell(v) for v in r) + "\n")


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


DEFAULTS = {
    "rate-sweep": {"scenario": "cubic_model", "eps": [1e-3, 1e-4, 1e-5, 1e-6]},
    "displacement-sim": {"scenario": "cubic_model_dual", "eps": [1e-3],
                         "triples": [[0.02, 0.005, 5e-5], [0.03, 0.004, 8e-5],
                                     [0.01, 0.003, 2e-5]],
                         "u_half_width": 0.2, "samples": 4096, "step": 1e-3},
    "factorize": {"scenario": "cubic_model", "l": 1},
    "counterexample": {"scenario": "incomplete_flow", "n": [1, 4, 16, 64]},
    "unicontinuity": {"scenario": "polterovich", "n": [1, 4, 16, 64]},
    "bounds-report": {"scenario": "cubic_model", "eps": [1e-3, 1e-4, 1e-5, 1e-6], "l": 1},
}


def _scenario(cfg) -> scen.Scenario:
    name = cfg.get("scenario")
    if not name:
        raise ConfigError("no scenario given")
    if isinstance(name, scen.Scenario):
        return name
    if isinstance(name, dict):
        try:
            return scen.scenario_from_dict(name)
        except (scen.ScenarioError, ValueError) as e:
            raise ConfigError(str(e)) from None
    if isinstance(name, str) and (name.endswith(".toml") or os.path.sep in name):
        try:
            return scen.load_toml(name)
        except (OSError, scen.ScenarioError) as e:
            raise ConfigError(str(e)) from None
    try:
        return scen.get(name)
    except scen.ScenarioError as e:
        raise ConfigError(str(e)) from None


def _res(cfg, sc):
    r = cfg.get("resolution")
    return sc.box.resolution if r is None else (r if isinstance(r, (list, tuple)) else int(r))


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def rate_sweep(cfg, out: Path) -> Report:
    sc = _scenario(cfg)
    rep = Report("rate-sweep", sc.name, cfg)
    eps = [float(e) for e in cfg["eps"]]
    if len(eps) < 1:
        raise ConfigError("eps list is empty")
    res = _res(cfg, sc)
    eps0 = cfg.get("eps0")
    if cfg.get("find_eps0"):
        eps0 = find_eps0(sc.f, sc.g, sc.x, sc.box, sc.conv, resolution=51)
    table = upsilon_upper_curve(sc, eps, resolution=res, eps0=eps0)
    lo, hi = table.band
    rep.values.update({"band": [lo, hi], "slope": table.slope, "eps0": eps0,
                       "Phi": phi_invariant(sc.f, sc.g, sc.conv).at(sc.x)})
    path = out / "rate.csv"
    rows = []
    for e, g, r, lp in zip(table.eps, table.gaps, table.ratios, table.meta["runs"]):
        rows.append((e, g, r, lo, hi, lp.guaranteed, lp.b, lp.A))
        ck = lp.checks
        rep.check(f"eps={e:g}: band", lo <= r <= hi * 1.1, r, [lo, hi * 1.1], res)
        rep.check(f"eps={e:g}: |F-f|,|G-g| <= eps", ck["within_eps"],
                  max(ck["sup_F_minus_f"], ck["sup_G_minus_g"]), e, res)
        rep.check(f"eps={e:g}: unchanged outside K", ck["outside_K"] <= 1e-12, ck["outside_K"],
                  1e-12, res)
        rep.check(f"eps={e:g}: bracket identity", ck["identity"] <= 1e-10, ck["identity"],
                  1e-10, res)
        rep.check(f"eps={e:g}: gap >= construction guarantee", ck["gap_ge_guarantee"], g,
                  lp.guaranteed, res)
    write_csv(path, ["eps", "gap", "ratio", "band_lo", "band_hi", "guaranteed", "b", "A"], rows,
              f"scenario={sc.name} resolution={list(np.atleast_1d(res))}")
    rep.artifacts.append(path.name)
    if len(eps) >= 4:
        rep.check("slope = 2/3 +- 0.02", abs(table.slope - 2 / 3) <= 0.02, table.slope,
                  [2 / 3 - 0.02, 2 / 3 + 0.02])
        plotting.rate_plot(table, out / "rate.svg", f"{sc.name}: gap vs eps")
        rep.artifacts.append("rate.svg")
    rep.values["runs"] = [lp.to_json() for lp in table.meta["runs"]]
    return rep


def displacement_sim(cfg, out: Path) -> Report:
    sc = _scenario(cfg)
    rep = Report("displacement-sim", sc.name, cfg)
    eps = float(np.atleast_1d(cfg["eps"])[0])
    step = float(cfg.get("step", 1e-3))
    nsamp = int(cfg.get("samples", 4096))
    seed = int(cfg.get("seed", 42))
    hw = float(cfg.get("u_half_width", 0.2))
    lp = local_perturbation(sc.f, sc.g, sc.x, sc.box, eps, sc.conv, resolution=_res(cfg, sc))
    F, G = lp.F, lp.G
    U = Box.cube(sc.x, hw, 41)
    h = sc.h
    eps_f = sup_norm(F - sc.f, sc.box).value
    eps_g = sup_norm(G - sc.g, sc.box).value
    h2 = box_seminorm(h, U, 2).value
    Xg = ham_vector_field(sc.g, sc.conv)
    xg = grid_max(lambda p: np.linalg.norm(Xg.evaluate(p), axis=-1), U).value
    delta = lp.gap * (1 - 1e-6)
    rep.values.update({"eps": eps, "gap": lp.gap, "delta": delta, "eps_F": eps_f, "eps_G": eps_g,
                       "h_U2": h2, "Xg_U": xg, "swapped": lp.swapped})
    rows = []
    fx = sc.f.at(sc.x)
    for k, (t, r, alpha) in enumerate(cfg["triples"]):
        lhs, rhs, ok4 = displacement_margin(delta, t, r, alpha, eps_f, h2, xg)
        slab = sample_slab(sc.f, sc.x, r, alpha, nsamp, seed)
        A_img, sa = transport_set(sc.g, slab.points, t, step, U, sc.conv)
        B_img, sb = transport_set(G, slab.points, t, step, U, sc.conv)
        complete = bool(np.all(sa == COMPLETED) and np.all(sb == COMPLETED))
        sep, margin = displacement_check(sc.f.evaluate(A_img), sc.f.evaluate(B_img))
        hof = hofer_upper(sc.g, G, t, sc.box)
        elow = energy_lower_slab(sc.f, sc.x, r, alpha, sc.conv)
        rows.append((t, r, alpha, lhs, rhs, int(ok4), int(sep), margin, hof, elow, len(slab.points)))
        tag = f"(t,r,alpha)=({t:g},{r:g},{alpha:g})"
        rep.check(f"{tag}: condition holds", ok4, lhs - rhs, 0.0)
        rep.check(f"{tag}: flows stay in U", complete, None, None, nsamp)
        rep.check(f"{tag}: images separated", sep, margin, 0.0, nsamp)
        if sep:
            rep.check(f"{tag}: hofer upper > slab energy lower", hof > elow, hof, elow,
                      U.resolution)
        if k == 0:
            plotting.cloud_plot({"W": slab.points, "g-image": A_img, "G-image": B_img},
                                out / "clouds.svg", f"{sc.name}: t={t:g}")
            rep.artifacts.append("clouds.svg")
            write_csv(out / "clouds.csv", ["set", *sc.coords, "f"],
                      [(name, *p, fv) for name, P in (("W", slab.points), ("g", A_img),
                                                      ("G", B_img))
                       for p, fv in zip(P, sc.f.evaluate(P))], f"t={t!r} samples={nsamp}")
            rep.artifacts.append("clouds.csv")
    write_csv(out / "displacement.csv",
              ["t", "r", "alpha", "lhs", "rhs", "condition", "separated", "margin",
               "hofer_upper", "energy_lower", "samples"], rows, f"scenario={sc.name} eps={eps!r}")
    rep.artifacts.append("displacement.csv")
    return rep


def factorize(cfg, out: Path) -> Report:
    sc = _scenario(cfg)
    rep = Report("factorize", sc.name, cfg)
    l = int(cfg.get("l", 1))
    words = p_theta_words(sc.f, sc.g, sc.x, l, sc.conv)
    P = from_angle_samples(lambda th: p_theta(sc.f, sc.g, sc.x, th, l, sc.conv, words=words), 2 * l)
    th = np.linspace(0, 2 * np.pi, 720, endpoint=False)
    vals = P.real_values(th)
    rep.check("P >= 0 on 720 angles", np.min(vals) >= -1e-9, float(np.min(vals)), -1e-9, 720)
    try:
        Q = fejer_riesz(P)
    except FactorizationError as e:
        rep.check("factorization", False, str(e))
        return rep
    resid = float(np.max(np.abs(np.abs(Q(th)) ** 2 - vals)))
    maxp, bound, holds = mean_bound(P, l)
    rep.check("|Q|^2 = P", resid <= 1e-8 * (1 + np.max(vals)), resid, 1e-8, 720)
    rep.check("max P <= (2l+1) mean P", holds, maxp, bound, 4096)
    rep.values.update({"P_coeffs": [[k, P.coeff(k).real, P.coeff(k).imag]
                                    for k in range(-2 * l, 2 * l + 1)],
                       "Q_coeffs": [[k, Q.coeff(k).real, Q.coeff(k).imag] for k in range(0, 2 * l + 1)]})
    write_csv(out / "factorize.csv", ["poly", "k", "re", "im"],
              [("P", k, P.coeff(k).real, P.coeff(k).imag) for k in range(-2 * l, 2 * l + 1)]
              + [("Q", k, Q.coeff(k).real, Q.coeff(k).imag) for k in range(0, 2 * l + 1)],
              f"scenario={sc.name} l={l}")
    plotting.curve_plot(th, {"P": vals, "|Q|^2": np.abs(Q(th)) ** 2}, out / "factorize.svg",
                        f"{sc.name}: P_{2 * l}", "theta")
    rep.artifacts += ["factorize.csv", "factorize.svg"]
    return rep


def _grid_sup(e: FieldExpr, box: Box) -> float:
    return sup_norm(e, box).value


def counterexample(cfg, out: Path) -> Report:
    sc = _scenario(cfg)
    rep = Report("counterexample", sc.name, cfg)
    ns = [int(n) for n in cfg.get("n", [1, 4, 16, 64])]
    rows = []
    if sc.name == "incomplete_flow":
        fn, gn = sc.families["f"], sc.families["g"]
        v = _grid_sup(sc.h - 1.0, sc.box)
        rep.check("{f,g} = 1 on grid", v <= 1e-12, v, 1e-12, sc.box.resolution)
        for n in ns:
            b = _grid_sup(sc.bracket(fn(n), gn(n)), sc.box)
            d = max(_grid_sup(fn(n) - sc.f, sc.box), _grid_sup(gn(n) - sc.g, sc.box))
            rep.check(f"n={n}: {{f_n,g_n}} = 0 on grid", b <= 1e-10, b, 1e-10, sc.box.resolution)
            rep.check(f"n={n}: |f_n - f|, |g_n - g| <= 2/sqrt(n)", d <= 2 / math.sqrt(n) + 1e-12,
                      d, 2 / math.sqrt(n), sc.box.resolution)
            x0 = [0.0, 0.0, -0.9, 0.0]
            tr = integrate(gn(n), x0, 2.0, 1e-3, sc.box, sc.conv)
            # z + 1 = w obeys d sqrt(w)/dt = -sqrt(n/2) until the box face z = lows[2]
            w_end = sc.box.lows[2] + 1.0
            t_pred = math.sqrt(2.0 / n) * (math.sqrt(0.1) - math.sqrt(w_end))
            rep.check(f"n={n}: g_n flow leaves the domain", tr.status == "left-domain"
                      and abs(tr.t_star - t_pred) <= 0.05 * t_pred, tr.t_star, t_pred)
            rows.append((n, b, d, tr.status, tr.t_star, t_pred))
        write_csv(out / "counterexample.csv",
                  ["n", "sup_bracket", "dist", "status", "t_star", "t_predicted"], rows,
                  f"scenario={sc.name}")
    elif sc.name == "nonlocal_cutoff":
        FG = poisson(sc.f, sc.g, sc.conv)
        K = sc.aux["K"]
        mx = grid_max(FG.evaluate, sc.box)
        rep.check("{F,G} <= 1", mx.value <= 1 + 1e-12, mx.value, 1.0, sc.box.resolution)
        onK = float(np.max(np.abs(FG.evaluate(K.grid()) - 1.0)))
        rep.check("{F,G} = 1 on K", onK <= 1e-12, onK, 1e-12, K.resolution)
        phi, x, y = sc.aux["phi"], sc.aux["x"], sc.aux["y"]
        leib = phi * phi + phi * y * poisson(x, phi, sc.conv) + phi * x * poisson(phi, y, sc.conv)
        lv = _grid_sup(FG - leib, sc.box)
        rep.check("Leibniz decomposition", lv <= 1e-10, lv, 1e-10, sc.box.resolution)
        for n in ns:
            b = float(np.max(np.abs(poisson(sc.families["F"](n), sc.families["G"](n),
                                            sc.conv).evaluate(K.grid()))))
            rep.check(f"n={n}: {{F_n,G_n}} = 0 on K", b <= 1e-10, b, 1e-10, K.resolution)
            rows.append((n, b))
        write_csv(out / "counterexample.csv", ["n", "sup_bracket_on_K"], rows,
                  f"scenario={sc.name}")
    elif sc.name == "staircase":
        B, h = sc.aux["B"], sc.aux["h"]
        rep.check("B(h,h) != 0", abs(B(h, h).at(sc.x)) > 0, B(h, h).at(sc.x))
        for n in ns:
            fn, gn = staircase_counterexample(B, h, n)
            b = _grid_sup(B(fn, gn), sc.box)
            df, dg = _grid_sup(fn - h, sc.box), _grid_sup(gn - h, sc.box)
            rep.check(f"n={n}: B(f_n,g_n) = 0", b == 0.0, b, 0.0, sc.box.resolution)
            rep.check(f"n={n}: |f_n - h| <= 2/n", df <= 2 / n, df, 2 / n, sc.box.resolution)
            rep.check(f"n={n}: |g_n - h| <= 3/n", dg <= 3 / n, dg, 3 / n, sc.box.resolution)
            rows.append((n, b, df, dg))
        write_csv(out / "counterexample.csv", ["n", "sup_B", "dist_f", "dist_g"], rows,
                  f"scenario={sc.name}")
    elif sc.name == "polterovich":
        chichi = sc.aux["chi_chi_prime"]
        cn = _grid_sup(sc.aux["chi"], sc.box)
        for n in ns:
            Fn, Gn = sc.families["F"](n), sc.families["G"](n)
            FG = poisson(Fn, Gn, sc.conv)
            pts = sc.box.grid()
            dev = float(np.max(np.abs(np.abs(FG.evaluate(pts)) - np.abs(chichi.evaluate(pts)))))
            nf, ng = _grid_sup(Fn, sc.box), _grid_sup(Gn, sc.box)
            rep.check(f"n={n}: |{{F_n,G_n}}| = |chi chi'|", dev <= 1e-10, dev, 1e-10,
                      sc.box.resolution)
            rep.check(f"n={n}: |F_n|,|G_n| <= |chi|/sqrt(n)",
                      max(nf, ng) <= cn / math.sqrt(n) * (1 + 1e-12), max(nf, ng),
                      cn / math.sqrt(n), sc.box.resolution)
            rows.append((n, dev, nf, ng))
        write_csv(out / "counterexample.csv", ["n", "bracket_dev", "sup_F", "sup_G"], rows,
                  f"scenario={sc.name}")
    elif sc.name == "torus_B":
        B = sc.aux["B"]
        rep.check("B antisymmetric", B.is_antisymmetric(), None)
        M = np.array([[B.a[i][j].at(sc.x) for j in range(3)] for i in range(3)])
        rk = int(np.linalg.matrix_rank(M))
        rep.check("B degenerate (rank < dim)", rk < 3, rk, 3)
        lo = -grid_max(lambda p: -B(sc.f, sc.g).evaluate(p), sc.box).value
        rep.check("B(x,y) >= 1 everywhere", lo >= 1 - 1e-12, lo, 1.0, sc.box.resolution)
        write_csv(out / "counterexample.csv", ["rank", "min_B_xy"], [(rk, lo)], f"scenario={sc.name}")
    else:
        raise ConfigError(f"no counterexample checks for scenario {sc.name!r}")
    rep.artifacts.append("counterexample.csv")
    return rep


def unicontinuity(cfg, out: Path) -> Report:
    sc = _scenario(cfg)
    rep = Report("unicontinuity", sc.name, cfg)
    ns = [int(n) for n in cfg.get("n", [1, 4, 16, 64])]
    if "F" in sc.families:
        fs, gs = sc.families["F"], sc.families["G"]
    elif "f" in sc.families:
        fs, gs = sc.families["f"], sc.families["g"]
    else:
        raise ConfigError(f"scenario {sc.name!r} has no sequence family")
    box = sc.box
    if cfg.get("resolution") is not None:
        box = box.with_resolution(_res(cfg, sc))
    rows, trend = unicontinuity_criterion(sc.f, sc.g, fs, gs, ns, box)
    rep.values["trend"] = trend
    limit = sc.expectations.get("unicontinuity_limit")
    if limit is not None:
        last = rows[-1]["product"]
        rep.check(f"product at n={ns[-1]} within 5% of limit", abs(last - limit) <= 0.05 * limit,
                  last, limit, box.resolution)
    write_csv(out / "unicontinuity.csv", ["n", "dist", "c1", "product"],
              [(r["n"], r["dist"], r["c1"], r["product"]) for r in rows],
              f"scenario={sc.name} resolution={list(box.resolution)}")
    plotting.curve_plot(ns, {"product": [r["product"] for r in rows]},
                        out / "unicontinuity.svg", f"{sc.name}: trend {trend}", "n")
    rep.artifacts += ["unicontinuity.csv", "unicontinuity.svg"]
    return rep


def bounds_report(cfg, out: Path) -> Report:
    sc = _scenario(cfg)
    rep = Report("bounds-report", sc.name, cfg)
    l = int(cfg.get("l", 1))
    eps = [float(e) for e in cfg.get("eps", [])]
    h = sc.h
    Phi = phi_invariant(sc.f, sc.g, sc.conv).at(sc.x)
    lo, hi, flags = theoretical_band(sc.f, sc.g, [sc.x], sc.conv, check=(l == 1))
    hb = higher_bound(l, sc.f, sc.g, sc.x, sc.conv)
    rep.values.update({"Phi": Phi, "band": [lo, hi], "flags": flags, "higher_bound": hb})
    # binomial identity between H_{2m} and D^l h
    s = sum(math.comb(l, m) * h_k(sc.f, sc.g, sc.x, 2 * m, l, sc.conv) for m in range(l + 1))
    dl = d_power(l, h, sc.f, sc.g, sc.conv).at(sc.x)
    rep.check(f"sum binom(l,m) H_2m = -D^l h (l={l})", abs(s + dl) <= 1e-6, s, -dl)
    if l == 1:
        ib, six = intermediate_bound(sc.f, sc.g, sc.x, sc.conv)
        rep.values["intermediate_bound"] = ib
        rep.check("144^(1/3) (max P)^(1/3) <= 6 Phi^(1/3)", ib <= six + 1e-9, ib, six, 720)
        rep.check("higher_bound(1) within factor 3 of 6C", hb > 0 and hi > 0
                  and max(hb, hi) <= 3 * min(hb, hi), hb, hi)
    rows = []
    Xg = ham_vector_field(sc.g, sc.conv)
    for e in eps:
        jet, smax, clamped, res = truncated_jet_bound(l, e, sc.f, sc.g, sc.box, sc.conv)
        row = [e, jet, smax, clamped]
        if l == 1:
            fb = first_order_bound(Xg, sc.f, sc.x, e)
            lp = local_perturbation(sc.f, sc.g, sc.x, sc.box, e, sc.conv)
            lamF = grid_max(Xg.apply(lp.F).evaluate, sc.box).value
            rep.check(f"eps={e:g}: sup lambda(F) >= first-order bound", lamF >= fb, lamF, fb,
                      sc.box.resolution)
            row += [fb, lamF]
        rows.append(row)
    header = ["eps", "jet_norm", "jet_max", "clamped"] + (["first_order_bound", "sup_lambda_F"]
                                                          if l == 1 else [])
    write_csv(out / "bounds.csv", header, rows, f"scenario={sc.name} l={l}")
    rep.artifacts.append("bounds.csv")
    return rep


EXPERIMENTS = {
    "rate-sweep": rate_sweep,
    "displacement-sim": displacement_sim,
    "factorize": factorize,
    "counterexample": counterexample,
    "unicontinuity": unicontinuity,
    "bounds-report": bounds_report,
}


def run_experiment(kind: str, cfg: dict, out) -> Report:
    """Run one experiment, write its CSV/SVG files and ``report.json`` into ``out``."""
    if kind not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {kind!r}")
    merged = dict(DEFAULTS[kind])
    merged.update({k: v for k, v in cfg.items() if v is not None})
    merged.setdefault("seed", 42)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    np.random.seed(int(merged["seed"]))
    try:
        rep = EXPERIMENTS[kind](merged, out)
    except KeyError as e:
        raise ConfigError(f"missing parameter {e.args[0]!r}") from None
    with open(out / "report.json", "w") as fh:
        json.dump(rep.to_json(), fh, indent=2, sort_keys=True)
    return rep
