"""Acceptance checks shared by ``fractalcap verify`` and the test suite.

Every check returns a :class:`CheckResult` with the measured value next to
the expected one.  Oracles are independent of the code under test: subset
enumeration for the ESPs, exact hop sums for the Monte Carlo, and BFS for
box coverings.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable

import networkx as nx
import numpy as np

from . import capacity, fractal, grid, sympoly
from .capacity import ANNEALED, DestinationRule, ExperimentConfig
from .experiment import SweepConfig, SweepResult, combined_sigma, run_sweep
from .netgen import NetworkConfig, generate_network


@dataclass(frozen=True)
class CheckResult:
    number: int
    name: str
    passed: bool
    measured: str
    expected: str

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number:>2}. {self.name}: {self.measured} (expected {self.expected})"


# -- shared helpers ------------------------------------------------------------

def random_weights(rng: np.random.Generator, n: int) -> np.ndarray:
    """Mixed test weights: uniform, log-spread, degree-like and some zeros."""
    kind = rng.integers(4)
    if kind == 0:
        w = rng.random(n)
    elif kind == 1:
        w = np.exp(rng.normal(0.0, 4.0, n))
    elif kind == 2:
        w = rng.integers(1, 50, n).astype(float) ** -rng.uniform(2.0, 4.0)
    else:
        w = rng.random(n)
        w[rng.random(n) < 0.25] = 0.0
    return w


@functools.lru_cache(maxsize=None)
def _subset_bits(n: int) -> tuple[np.ndarray, np.ndarray]:
    masks = np.arange(1 << n, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(n)) & 1).astype(float)
    return bits, bits.sum(axis=1).astype(np.int64)


def brute_force_esp(w: np.ndarray, *, leave_one_out: bool = False):
    """sigma_p for p = 0..N by summing over all 2^N subsets.

    With ``leave_one_out=True`` also returns an (N, N) array whose row k
    holds sigma_p without item k, p = 0..N-1, from the same enumeration.
    """
    w = np.asarray(w, dtype=float)
    n = w.size
    if n == 0:
        return (np.ones(1), np.zeros((0, 0))) if leave_one_out else np.ones(1)
    bits, size = _subset_bits(n)
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    # zero weights: a huge negative log that underflows to an exact 0
    logw = np.where(np.isfinite(logw), logw, -1e4)
    prod = np.exp(bits @ logw)
    full = np.bincount(size, weights=prod, minlength=n + 1)
    if not leave_one_out:
        return full
    loo = np.empty((n, n))
    for k in range(n):
        # masks with bit k clear, as a strided view of the enumeration
        keep = (slice(None), 0, slice(None))
        pk = prod.reshape(-1, 2, 1 << k)[keep].ravel()
        sk = size.reshape(-1, 2, 1 << k)[keep].ravel()
        loo[k] = np.bincount(sk, weights=pk, minlength=n + 1)[:n]
    return full, loo


def _rel_err(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.where(b == 0, 1.0, np.abs(b))
    err = np.where((a == 0) & (b == 0), 0.0, np.abs(a - b) / scale)
    return float(err.max()) if err.size else 0.0


# -- criteria --------------------------------------------------------------------

def check_esp_exact(seed: int = 1, instances: int = 1000, tol: float = 1e-9) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(1, 21))
        w = random_weights(rng, n)
        wv = sympoly.WeightVector(w)
        bf, bf_loo = brute_force_esp(w, leave_one_out=True)
        table = sympoly.esp_table(wv, n)
        worst = max(worst, _rel_err([table.value(p) for p in range(n + 1)], bf))
        for k in range(n):
            dp_k = [sympoly.esp_leave_one_out(wv, k, p) for p in range(n)]
            worst = max(worst, _rel_err(dp_k, bf_loo[k]))
    return CheckResult(1, "ESP and leave-one-out vs subset enumeration",
                       worst <= tol, f"max rel err {worst:.2e}", f"<= {tol:g}")


def check_sandwich(seed: int = 2, instances: int = 1000, tol: float = 1e-9) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_id = 0.0
    worst_sw = 0.0
    for _ in range(instances):
        n = int(rng.integers(2, 65))
        w = random_weights(rng, n)
        if not np.any(w > 0):
            w[0] = 1.0
        wv = sympoly.WeightVector(w)
        logs = np.array([sympoly.log_esp(wv, p) for p in range(n + 1)])
        loo = np.array([sympoly.log_esp_leave_one_out_all(wv, p) for p in range(n)])  # (p, k)
        logx = wv.log_weights
        # sigma_p = loo_p + x_k loo_{p-1}
        for p in range(1, n):
            rhs = np.logaddexp(loo[p], logx + loo[p - 1])
            fin = np.isfinite(logs[p])
            if fin:
                worst_id = max(worst_id, float(np.max(np.abs(np.expm1(rhs - logs[p])))))
            elif np.any(np.isfinite(rhs)):
                worst_id = math.inf
        q = int(rng.integers(2, n + 1))
        if not np.isfinite(logs[q - 1]):
            continue
        mid = np.exp(loo[q - 1] - logs[q - 1])
        lower = 1.0 - np.exp(logx + logs[q - 2] - logs[q - 1])
        worst_sw = max(worst_sw, float(np.max(lower - mid)), float(np.max(mid - 1.0)))
    ok = worst_id <= tol and worst_sw <= tol
    return CheckResult(2, "leave-one-out identity and sandwich bounds", ok,
                       f"identity err {worst_id:.2e}, bound excess {worst_sw:.2e}",
                       f"<= {tol:g}")


def check_equal_weights(tol: float = 1e-12) -> CheckResult:
    worst = 0.0
    for n in (2, 10, 100):
        wv = sympoly.WeightVector(np.ones(n))
        for q in range(1, min(n - 1, 20) + 1):
            expect = n / (n - q)
            worst = max(worst, abs(sympoly.lemma1_ratio(wv, q) - expect) / expect)
    return CheckResult(3, "equal-weight ratio collapses to N/(N-q)", worst <= tol,
                       f"max rel err {worst:.2e}", f"<= {tol:g}")


def check_sampler(seed: int = 4, draws: int = 1_000_000) -> CheckResult:
    rng = np.random.default_rng(seed)
    wv = sympoly.WeightVector([1.0, 0.5, 0.25])
    masks = sympoly.sample_fixed_size_subsets(wv, 2, rng, size=draws)
    code = masks @ np.array([1, 2, 4])
    # {1,2} -> 3, {1,3} -> 5, {2,3} -> 6
    counts = np.array([(code == c).sum() for c in (3, 5, 6)])
    p = np.array([4, 2, 1]) / 7
    z = (counts - draws * p) / np.sqrt(draws * p * (1 - p))
    ok = bool(np.all(np.abs(z) <= 4)) and counts.sum() == draws
    freq = ", ".join(f"{c / draws:.5f}" for c in counts)
    return CheckResult(4, "fixed-size sampler set frequencies", ok,
                       f"freq ({freq}), max |z| {np.abs(z).max():.2f}",
                       "(4/7, 2/7, 1/7) within 4 s.e.")


def oracle_cells(ns=(50, 100, 200), seeds=range(5), trials: int = 20_000,
                 rules=None):
    """(rule label, n, seed, mc mean, stderr, exact) for every cell."""
    rules = rules or {"uniform": DestinationRule(),
                      "powerlaw(2.5)": DestinationRule.powerlaw(2.5)}
    out = []
    for n in ns:
        for seed in seeds:
            cfg = NetworkConfig(n, 2.5, 2.6, seed)
            net = generate_network(cfg)
            g = grid.GridSpec(n)
            for label, rule in rules.items():
                exact = capacity.exact_mean_hops_small(net, g, rule)
                exp = ExperimentConfig(cfg, g, rule, trials, seed, ANNEALED)
                est = capacity.estimate_mean_hops(
                    exp, net, np.random.default_rng([seed, n, 17]))
                out.append((label, n, seed, est.mean, est.stderr, exact))
    return out


def check_oracle(**kw) -> CheckResult:
    cells = oracle_cells(**kw)
    by_rule: dict[str, list[bool]] = {}
    for label, n, seed, mean, se, exact in cells:
        by_rule.setdefault(label, []).append(abs(mean - exact) <= 3 * se)
    ok = all(sum(v) >= math.ceil(len(v) * 14 / 15) for v in by_rule.values())
    measured = ", ".join(f"{k} {sum(v)}/{len(v)}" for k, v in by_rule.items())
    return CheckResult(5, "Monte Carlo vs exact mean hops", ok, measured,
                       ">= 14/15 per rule within 3 s.e.")


ACCEPTANCE_SWEEP = SweepConfig(betas=(0.0, 1.0, 2.5, 4.0))


@functools.lru_cache(maxsize=4)
def acceptance_sweep(config: SweepConfig = ACCEPTANCE_SWEEP, workers: int = 1) -> SweepResult:
    return run_sweep(config, workers)


def _slope_check(number, name, sweep, beta, target, band=0.15) -> CheckResult:
    fit = sweep.fits.get(beta)
    if fit is None:
        return CheckResult(number, name, False, "no fit", f"{target} +/- {band}")
    ok = abs(fit.slope - target) <= band
    return CheckResult(number, name, ok,
                       f"slope {fit.slope:.3f} (r2 {fit.r_squared:.4f})",
                       f"{target} +/- {band}")


def check_uniform_slope(sweep: SweepResult | None = None) -> CheckResult:
    sweep = sweep or acceptance_sweep()
    return _slope_check(6, "uniform rule hop slope vs log(1/r)", sweep, 0.0, 1.0)


def check_powerlaw_slopes(sweep: SweepResult | None = None) -> CheckResult:
    sweep = sweep or acceptance_sweep()
    parts = [_slope_check(7, "", sweep, b, capacity.expected_hop_slope(b))
             for b in (1.0, 2.5, 4.0)]
    measured = "; ".join(f"beta={b:g}: {p.measured}" for b, p in zip((1.0, 2.5, 4.0), parts))
    return CheckResult(7, "power-law rule hop slopes", all(p.passed for p in parts),
                       measured, "1.0 / 0.5 / 0.0 +/- 0.15")


def check_beta_ordering(sweep: SweepResult | None = None, n: int = 2 ** 15) -> CheckResult:
    sweep = sweep or acceptance_sweep()
    try:
        hi, mid, lo = (sweep.points[n, b] for b in (4.0, 2.5, 0.0))
    except KeyError:
        return CheckResult(8, "lambda_max ordering in beta", False,
                           f"missing points at n={n}", ">= 3 s.e. separation")
    s1, s2 = combined_sigma(hi, mid), combined_sigma(mid, lo)
    return CheckResult(8, "lambda_max ordering in beta", s1 >= 3 and s2 >= 3,
                       f"beta 4 vs 2.5: {s1:.1f} s.e., 2.5 vs 0: {s2:.1f} s.e.",
                       ">= 3 s.e. each")


def check_schedule(max_side: int = 30, deltas=(0.5, 1.0, 2.0), c1: float = 1.0,
                   inject_fault: bool = False) -> CheckResult:
    total = 0
    for delta in deltas:
        reuse = grid.min_reuse(delta, c1)
        if inject_fault:
            reuse = max(1, reuse - 1)
        for side in range(1, max_side + 1):
            total += grid.schedule_violations(side, reuse, delta, c1)
    label = " (fault injected: T lowered by one)" if inject_fault else ""
    return CheckResult(9, "TDMA same-slot protocol-model soundness" + label,
                       total == 0, f"{total} violations", "0")


def _cover_graphs(seed: int):
    rng = np.random.default_rng(seed)
    net = generate_network(NetworkConfig(2000, 2.5, 2.6, seed)).to_graph()
    yield "path-300", nx.path_graph(300)
    yield "grid-40x40", nx.grid_2d_graph(40, 40)
    yield "tree-2000", nx.random_labeled_tree(2000, seed=int(rng.integers(1 << 31)))
    yield "ws-1000", nx.connected_watts_strogatz_graph(1000, 4, 0.05, seed=int(rng.integers(1 << 31)))
    yield "social-2000", net


def check_box_covering(seed: int = 10, sizes=(1, 2, 3)) -> CheckResult:
    bad = 0
    checked = 0
    for name, g in _cover_graphs(seed):
        for l_b in sizes:
            cov = fractal.box_cover(g, l_b, rng=np.random.default_rng(seed),
                                    per_component=True)
            bad += fractal.covering_violations(g, cov)
            bad += abs(sum(len(b) for b in cov.boxes) - g.number_of_nodes())
            checked += 1
    path = fractal.estimate_exponents(nx.path_graph(10_000), [1, 2, 3, 4])
    star = fractal.box_cover(nx.star_graph(50), 2).n_boxes
    complete = fractal.box_cover(nx.complete_graph(40), 1).n_boxes
    ok = bad == 0 and 0.8 <= path.d_B <= 1.2 and star == 1 and complete == 1
    return CheckResult(10, "box covering validity and path dimension", ok,
                       f"{bad} violations over {checked} coverings, path d_B {path.d_B:.3f}, "
                       f"star {star} box, complete {complete} box",
                       "0 violations, d_B in [0.8, 1.2], 1 box, 1 box")


def limit_weights(seed: int = 11, size: int = 500, gamma: float = 2.5,
                  epsilon: float = 2.6) -> sympoly.WeightVector:
    """Degree ** -epsilon for power-law degrees, as in a contact pool."""
    from .netgen import sample_degrees
    rng = np.random.default_rng(seed)
    degrees = sample_degrees(NetworkConfig(size, gamma, epsilon), rng)
    return sympoly.WeightVector(degrees.astype(float) ** -epsilon)


def check_large_pool_limit(seed: int = 11) -> CheckResult:
    w = limit_weights(seed)
    big = capacity.inclusion_limit_check(w, 64)
    small = capacity.inclusion_limit_check(w, 2)
    ok = 0.5 <= big.median <= 2.0 and not small.within(0.9, 1.1)
    return CheckResult(11, "large-q limit of destination probabilities", ok,
                       f"q=64 median {big.median:.3f}; q=2 range "
                       f"[{small.minimum:.3f}, {small.maximum:.3f}]",
                       "median in [0.5, 2]; q=2 leaves [0.9, 1.1]")


CHECKS: dict[int, Callable[..., CheckResult]] = {
    1: check_esp_exact,
    2: check_sandwich,
    3: check_equal_weights,
    4: check_sampler,
    5: check_oracle,
    6: check_uniform_slope,
    7: check_powerlaw_slopes,
    8: check_beta_ordering,
    9: check_schedule,
    10: check_box_covering,
    11: check_large_pool_limit,
}


def run_checks(numbers=None, *, inject_fault: bool = False, workers: int = 1,
               report: Callable[[str], None] | None = print) -> list[CheckResult]:
    numbers = sorted(numbers or CHECKS)
    results = []
    sweep = None
    for k in numbers:
        if k in (6, 7, 8):
            sweep = sweep or acceptance_sweep(ACCEPTANCE_SWEEP, workers)
            res = CHECKS[k](sweep)
        elif k == 9:
            res = CHECKS[k](inject_fault=inject_fault)
        else:
            res = CHECKS[k]()
        results.append(res)
        if report:
            report(res.line())
    return results
