"""Seeded sweeps over (n, beta) with network replicates.

Random streams are keyed by tuples.  A key is hashed with 64-bit BLAKE2b
of its ``repr`` and used as the spawn key of a ``SeedSequence`` rooted at
the master seed, so any stream can be rebuilt from (master seed, key)
alone, whatever the worker count or execution order:

* ``("network", n, replicate)`` builds one network,
* ``("trials", n, beta, replicate)`` drives the trials on it.
"""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .capacity import (POOL, QUENCHED, RING, CapacityPoint, DestinationRule,
                       ExperimentConfig, HopEstimate, ScalingFit, capacity_point,
                       estimate_mean_hops, expected_hop_slope, fit_scaling)
from .grid import GridSpec
from .netgen import STRICT, NetworkConfig, generate_network

log = logging.getLogger(__name__)

SEEDING_SCHEME = ("SeedSequence(master_seed, spawn_key=(blake2b_64(repr(key)),)); "
                  "key = ('network', n, replicate) or ('trials', n, beta, replicate)")

CSV_FIELDS = ("n", "beta", "gamma", "epsilon", "trials", "mean_hops", "stderr",
              "lambda_max", "theory_order", "seed")
FIT_FIELDS = ("beta", "slope", "intercept", "r_squared", "slope_stderr",
              "expected_slope", "points")


def stream_key(key: tuple) -> int:
    digest = hashlib.blake2b(repr(tuple(key)).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream(master_seed: int, *key) -> np.random.Generator:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(stream_key(key),))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class SweepConfig:
    ns: tuple[int, ...] = tuple(2 ** k for k in range(10, 16))
    betas: tuple[float, ...] = (0.0, 2.5, 4.0)
    gamma: float = 2.5
    epsilon: float = 2.6
    trials: int = 10_000            # per (n, beta, replicate)
    replicates: int = 8
    seed: int = 0
    c1: float = 1.0
    range_const: float = 1.0
    delta: float = 1.0
    bandwidth: float = 1.0
    normalization: str = POOL
    distance: str = RING
    ensemble: str = QUENCHED
    tie_rule: str = STRICT

    def __post_init__(self):
        if len(set(self.ns)) != len(self.ns):
            raise ValueError("n values must be distinct")
        if self.replicates < 1 or self.trials < 1:
            raise ValueError("replicates and trials must be >= 1")
        # raise early on bad gamma/epsilon/beta
        NetworkConfig(min(self.ns), self.gamma, self.epsilon)
        for b in self.betas:
            self.rule(b)
        for n in self.ns:
            self.grid(n)

    def rule(self, beta: float) -> DestinationRule:
        # beta = 0 is the uniform rule
        if beta == 0:
            return DestinationRule()
        return DestinationRule.powerlaw(beta, normalization=self.normalization,
                                        distance=self.distance)

    def grid(self, n: int) -> GridSpec:
        return GridSpec(n, self.c1, self.range_const, self.delta)

    def snapshot(self) -> dict:
        d = asdict(self)
        d["ns"] = list(self.ns)
        d["betas"] = list(self.betas)
        return d


@dataclass
class SweepResult:
    config: SweepConfig
    points: dict[tuple[int, float], CapacityPoint]
    estimates: dict[tuple[int, float], HopEstimate]
    fits: dict[float, ScalingFit]
    status: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(v == "ok" for v in self.status.values())

    def rows(self) -> list[dict]:
        cfg = self.config
        out = []
        for (n, beta) in sorted(self.points):
            p = self.points[n, beta]
            est = self.estimates[n, beta]
            out.append({"n": n, "beta": beta, "gamma": cfg.gamma,
                        "epsilon": cfg.epsilon, "trials": est.trials,
                        "mean_hops": p.e_hops, "stderr": p.e_hops_stderr,
                        "lambda_max": p.lambda_max,
                        "theory_order": p.theory_order, "seed": cfg.seed})
        return out

    def to_csv(self) -> str:
        return _write_csv(CSV_FIELDS, self.rows())

    def fits_csv(self) -> str:
        rows = []
        for beta in sorted(self.fits):
            f = self.fits[beta]
            rows.append({"beta": beta, "slope": f.slope, "intercept": f.intercept,
                         "r_squared": f.r_squared, "slope_stderr": f.slope_stderr,
                         "expected_slope": expected_hop_slope(beta),
                         "points": len(f.points)})
        return _write_csv(FIT_FIELDS, rows)


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _write_csv(fields, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(r[f]) for f in fields])
    return buf.getvalue()


def read_csv(text: str) -> list[dict]:
    """Parse a results or fits CSV back into numbers."""
    out = []
    for r in csv.DictReader(io.StringIO(text)):
        out.append({k: (int(v) if k in ("n", "trials", "seed", "points") else float(v))
                    for k, v in r.items()})
    return out


def _run_replicate(cfg: SweepConfig, n: int, rep: int):
    """All betas on one network; returns {beta: HopEstimate or error text}."""
    net_cfg = NetworkConfig(n, cfg.gamma, cfg.epsilon, cfg.seed)
    network = generate_network(net_cfg, substream(cfg.seed, "network", n, rep),
                               tie_rule=cfg.tie_rule)
    grid = cfg.grid(n)
    out = {}
    for beta in cfg.betas:
        exp = ExperimentConfig(net_cfg, grid, cfg.rule(beta), cfg.trials,
                               cfg.seed, cfg.ensemble)
        try:
            out[beta] = estimate_mean_hops(
                exp, network, substream(cfg.seed, "trials", n, float(beta), rep))
        except Exception as exc:      # recorded per point, the sweep goes on
            out[beta] = f"{type(exc).__name__}: {exc}"
    return n, rep, out


def _run_replicate_star(args):
    return _run_replicate(*args)


def run_sweep(cfg: SweepConfig, workers: int = 1) -> SweepResult:
    tasks = [(cfg, n, rep) for n in cfg.ns for rep in range(cfg.replicates)]
    # big networks first keeps the pool busy
    tasks.sort(key=lambda t: (-t[1], t[2]))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_replicate_star, tasks))
    else:
        results = [_run_replicate(*t) for t in tasks]
    parts: dict[tuple[int, float], dict[int, HopEstimate]] = {}
    status: dict[str, str] = {}
    for n, rep, out in results:
        for beta, est in out.items():
            key = f"n={n},beta={beta:g},replicate={rep}"
            if isinstance(est, str):
                status[key] = est
                log.warning("point %s failed: %s", key, est)
                continue
            status[key] = "ok"
            parts.setdefault((n, beta), {})[rep] = est
    points, estimates = {}, {}
    for (n, beta), reps in parts.items():
        est = HopEstimate.merge(reps[r] for r in sorted(reps))
        estimates[n, beta] = est
        points[n, beta] = capacity_point(n, beta, est, cfg.grid(n), cfg.bandwidth)
    fits = {}
    for beta in cfg.betas:
        pts = [(n, estimates[n, beta].mean) for n in cfg.ns if (n, beta) in estimates]
        if len(pts) >= 3:
            fits[beta] = fit_scaling(pts, range_const=cfg.range_const)
    return SweepResult(cfg, points, estimates, fits, dict(sorted(status.items())))


def combined_sigma(a: CapacityPoint, b: CapacityPoint) -> float:
    """How many combined standard errors separate two lambda_max values."""
    se = math.hypot(a.lambda_stderr, b.lambda_stderr)
    return math.inf if se == 0 else (a.lambda_max - b.lambda_max) / se
