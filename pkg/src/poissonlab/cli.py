"""``lab`` command line: run experiments and list the scenario catalog."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import scenarios as scen
from .experiments import EXPERIMENTS, ConfigError, run_experiment

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated list of numbers: {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated list of integers: {text!r}")


def _resolution(text: str):
    vals = _ints(text)
    return vals[0] if len(vals) == 1 else vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("config", nargs="?", help="experiment TOML file")
    r.add_argument("--scenario", help="built-in scenario name or scenario TOML path")
    r.add_argument("--experiment", choices=sorted(EXPERIMENTS))
    r.add_argument("--eps", type=_floats, help="comma separated eps values")
    r.add_argument("--t", type=float)
    r.add_argument("--r", type=float)
    r.add_argument("--alpha", type=float)
    r.add_argument("--l", type=int)
    r.add_argument("--n", type=_ints, help="comma separated sequence indices")
    r.add_argument("--resolution", type=_resolution, help="grid points per axis")
    r.add_argument("--samples", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="output directory")
    sub.add_parser("list", help="print the scenario catalog")
    return p


def _config_from_file(path: str) -> tuple[str, dict, str | None]:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    data = dict(data.get("experiment", {}), **{k: v for k, v in data.items() if k != "experiment"})
    kind = data.pop("kind", None)
    if kind is None:
        raise ConfigError("config needs an experiment kind")
    sc = data.get("scenario")
    if isinstance(sc, str) and sc.endswith(".toml"):
        data["scenario"] = str(Path(path).parent / sc)
    out = data.pop("out", None)
    data.update(data.pop("params", {}))
    return kind, data, out


def cmd_run(args) -> int:
    if args.config:
        kind, cfg, out = _config_from_file(args.config)
    else:
        if not args.experiment:
            raise ConfigError("give a config file or --experiment")
        kind, cfg, out = args.experiment, {}, None
    cli = {"scenario": args.scenario, "eps": args.eps, "l": args.l, "n": args.n,
           "resolution": args.resolution, "samples": args.samples, "seed": args.seed}
    if args.t is not None or args.r is not None or args.alpha is not None:
        if None in (args.t, args.r, args.alpha):
            raise ConfigError("--t, --r and --alpha must be given together")
        cli["triples"] = [[args.t, args.r, args.alpha]]
    cfg.update({k: v for k, v in cli.items() if v is not None})
    out = args.out or out or f"lab-out/{kind}"
    rep = run_experiment(kind, cfg, out)
    for c in rep.checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']}  value={c['value']}")
    print(f"{kind} on {rep.scenario}: {'all checks passed' if rep.passed else 'FAILED'}"
          f" -> {out}")
    if not rep.passed:
        print("failing: " + "; ".join(rep.failures()), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_list() -> int:
    print(f"{'name':<18} {'reference':<22} {'value':>12}  provenance")
    for sc in scen.catalog(verify=False):
        print(f"{sc.name:<18} {'':<22} {'':>12}  {sc.description}")
        for ref in sc.references:
            print(f"{'':<18} {ref.name:<22} {ref.value:>12.6g}  {ref.provenance}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list":
            return cmd_list()
        return cmd_run(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
