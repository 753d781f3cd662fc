"""Command line harness: ``fractalcap {generate,sweep,exact,boxcover,verify}``.

Configs are flat ``key = value`` text files with ``#`` comments; list
values are comma separated (``n = 1024,2048,4096``).  Every output file is
written next to a JSON manifest holding the config text, the seed and the
seeding scheme, which is enough to rerun the command.

Exit codes: 0 success, 1 invalid input, 2 acceptance failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .capacity import DestinationRule, exact_mean_hops_small
from .experiment import SEEDING_SCHEME, SweepConfig, run_sweep
from .grid import GridSpec
from .netgen import STRICT, NetworkConfig, SocialNetwork, generate_network

log = logging.getLogger("fractalcap")

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2

_NETWORK_KEYS = {"n": int, "gamma": float, "epsilon": float, "seed": int,
                 "tie_rule": str}
_GRID_KEYS = {"c1": float, "range_const": float, "delta": float}
_SWEEP_KEYS = {"n": "ints", "beta": "floats", "gamma": float, "epsilon": float,
               "trials": int, "replicates": int, "seed": int, "bandwidth": float,
               "normalization": str, "distance": str, "ensemble": str,
               "tie_rule": str, **_GRID_KEYS}
_EXACT_KEYS = {**_NETWORK_KEYS, **_GRID_KEYS, "beta": "floats",
               "normalization": str, "distance": str, "network": str}


class ConfigError(ValueError):
    pass


def parse_config(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def format_config(values: dict) -> str:
    lines = []
    for k, v in values.items():
        if isinstance(v, (list, tuple)):
            v = ",".join(_num(x) for x in v)
        else:
            v = _num(v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def _num(v) -> str:
    return format(v, ".17g") if isinstance(v, float) else str(v)


def _typed(raw: dict[str, str], schema: dict) -> dict:
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)} "
                          f"(allowed: {', '.join(sorted(schema))})")
    out = {}
    for key, value in raw.items():
        kind = schema[key]
        try:
            if kind == "ints":
                out[key] = [int(v) for v in value.split(",") if v.strip()]
            elif kind == "floats":
                out[key] = [float(v) for v in value.split(",") if v.strip()]
            else:
                out[key] = kind(value)
        except ValueError:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from None
    return out


def load_config(path: str | None, schema: dict) -> tuple[dict, str]:
    """Typed config from a key=value file or a previous run's manifest."""
    if path is None:
        return {}, ""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if p.suffix == ".json":
        try:
            text = json.loads(text)["config_text"]
        except (ValueError, KeyError):
            raise ConfigError(f"{path}: not a manifest with a config_text entry") from None
    return _typed(parse_config(text), schema), text


def _write_manifest(path: Path, command: str, config: dict, seed: int,
                    outputs: list[Path], started: str, status=None) -> None:
    manifest = {
        "tool": "fractalcap",
        "version": __version__,
        "command": command,
        "config": config,
        "config_text": format_config(config),
        "seed": seed,
        "seeding": SEEDING_SCHEME,
        "started": started,
        "finished": _now(),
        "outputs": [str(o) for o in outputs],
        "status": status or {},
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands ------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg, _ = load_config(args.config, _NETWORK_KEYS)
    if args.seed is not None:
        cfg["seed"] = args.seed
    missing = {"n", "gamma", "epsilon"} - set(cfg)
    if missing:
        raise ConfigError(f"generate needs {', '.join(sorted(missing))}")
    cfg.setdefault("seed", 0)
    cfg.setdefault("tie_rule", STRICT)
    started = _now()
    net_cfg = NetworkConfig(cfg["n"], cfg["gamma"], cfg["epsilon"], cfg["seed"])
    network = generate_network(net_cfg, tie_rule=cfg["tie_rule"])
    out = _out_dir(args)
    path = out / "network.txt"
    network.save(path)
    _write_manifest(out / "network.manifest.json", "generate", cfg, cfg["seed"],
                    [path], started,
                    {"truncated": len(network.truncated),
                     "fallback": len(network.fallback)})
    print(f"wrote {path} ({network.n} nodes, {len(network.truncated)} truncated, "
          f"{len(network.fallback)} fallback)")
    return EXIT_OK


def sweep_config(cfg: dict) -> SweepConfig:
    kw = dict(cfg)
    if "n" in kw:
        kw["ns"] = tuple(kw.pop("n"))
    if "beta" in kw:
        kw["betas"] = tuple(kw.pop("beta"))
    return SweepConfig(**kw)


def cmd_sweep(args) -> int:
    cfg, _ = load_config(args.config, _SWEEP_KEYS)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.replicates is not None:
        cfg["replicates"] = args.replicates
    sweep = sweep_config(cfg)
    started = _now()
    result = run_sweep(sweep, workers=args.workers)
    out = _out_dir(args)
    results, fits = out / "results.csv", out / "fits.csv"
    results.write_text(result.to_csv())
    fits.write_text(result.fits_csv())
    snap = {"n": list(sweep.ns), "beta": list(sweep.betas),
            **{k: v for k, v in sweep.snapshot().items() if k not in ("ns", "betas")}}
    _write_manifest(out / "manifest.json", "sweep", snap, sweep.seed,
                    [results, fits], started, result.status)
    print(result.fits_csv(), end="")
    failed = [k for k, v in result.status.items() if v != "ok"]
    if failed:
        print(f"{len(failed)} point(s) failed, see manifest", file=sys.stderr)
    return EXIT_OK


def cmd_exact(args) -> int:
    cfg, _ = load_config(args.config, _EXACT_KEYS)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if "network" in cfg:
        network = SocialNetwork.load(cfg["network"], cfg.get("tie_rule", STRICT))
    else:
        missing = {"n", "gamma", "epsilon"} - set(cfg)
        if missing:
            raise ConfigError(f"exact needs a network file or {', '.join(sorted(missing))}")
        net_cfg = NetworkConfig(cfg["n"], cfg["gamma"], cfg["epsilon"], cfg.get("seed", 0))
        network = generate_network(net_cfg, tie_rule=cfg.get("tie_rule", STRICT))
    grid = GridSpec(network.n, cfg.get("c1", 1.0), cfg.get("range_const", 1.0),
                    cfg.get("delta", 1.0))
    print("beta,rule,exact_mean_hops")
    for beta in cfg.get("beta", [0.0]):
        if beta == 0:
            rule = DestinationRule()
        else:
            rule = DestinationRule.powerlaw(beta, normalization=cfg.get("normalization", "pool"),
                                            distance=cfg.get("distance", "ring"))
        label = "uniform" if rule.is_uniform else f"powerlaw-{rule.normalization}-{rule.distance}"
        value = exact_mean_hops_small(network, grid, rule)
        print(f"{beta:.17g},{label},{value:.17g}")
    return EXIT_OK


def cmd_boxcover(args) -> int:
    from .fractal import estimate_exponents, read_graph

    try:
        sizes = [int(v) for v in args.lb.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad box size list {args.lb!r}") from None
    if len(set(sizes)) < 3:
        raise ConfigError("need at least 3 distinct box sizes (--lb) for the fits")
    try:
        graph = read_graph(args.graph)
    except OSError as exc:
        raise ConfigError(f"cannot read graph {args.graph}: {exc}") from None
    seed = 0 if args.seed is None else args.seed
    rng = np.random.default_rng(seed)
    exps = estimate_exponents(graph, sizes, orderings=args.orderings, rng=rng,
                              per_component=args.per_component)
    text = exps.to_csv() + exps.summary() + "\n"
    if args.out:
        out = _out_dir(args)
        path = out / "boxcover.csv"
        path.write_text(text)
        _write_manifest(out / "boxcover.manifest.json", "boxcover",
                        {"graph": str(args.graph), "lb": sizes,
                         "orderings": args.orderings,
                         "per_component": args.per_component}, seed, [path], _now())
    print(text, end="")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .checks import CHECKS, run_checks

    only = None
    if args.only:
        try:
            only = [int(v) for v in args.only.split(",")]
        except ValueError:
            raise ConfigError(f"bad --only list {args.only!r}") from None
        bad = sorted(set(only) - set(CHECKS))
        if bad:
            raise ConfigError(f"unknown criteria {bad}")
    results = run_checks(only, inject_fault=args.inject_fault, workers=args.workers)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return EXIT_FAILED if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fractalcap", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", metavar="PATH", help="key = value config file or manifest")
        p.add_argument("--out", metavar="DIR", default=".", help="output directory")
        p.add_argument("--seed", type=int, metavar="U64", help="override the master seed")
        p.add_argument("--workers", type=int, default=1, metavar="N")
        p.add_argument("--replicates", type=int, metavar="N")

    p = sub.add_parser("generate", help="build a network and write it in text form")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("sweep", help="E[X] and throughput bound over n and beta")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("exact", help="exact mean hop count on a small network")
    common(p)
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("boxcover", help="box covering and fractal exponents")
    p.add_argument("graph", help="network file or 'u v' edge list")
    p.add_argument("--lb", default="1,2,3,4", help="comma separated box sizes")
    p.add_argument("--orderings", type=int, default=10)
    p.add_argument("--per-component", action="store_true",
                   help="allow disconnected graphs, covering each component")
    common(p, config=False)
    p.set_defaults(func=cmd_boxcover, out=None)

    p = sub.add_parser("verify", help="run the acceptance checks")
    p.add_argument("--only", help="comma separated criterion numbers")
    p.add_argument("--inject-fault", action="store_true",
                   help="negative control: lower the TDMA reuse factor by one")
    common(p, config=False)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
