"""Average hop counts, throughput bounds and scaling fits.

A transmission starts at a uniformly chosen source, goes to one of its
direct contacts and costs ``hop_count`` cell hops.  Two destination rules
are supported:

``uniform``
    every contact equally likely.
``powerlaw``
    contact ``k`` weighted by ``d_k ** -beta``.  With
    ``normalization="pool"`` (default) the distance weights are normalized
    by their expectation over the random contact set, i.e. the destination
    law is ``P(k in C) * d_k**-beta / sum_j P(j in C) * d_j**-beta`` over the
    whole eligible pool.  ``normalization="contacts"`` normalizes within
    each realized contact set instead.

Distances are either ring distances (hop count times the cell side, the
convention of the hop-geometry analysis) or true Euclidean distances.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from .grid import GridSpec, cells_of, hop_counts, transmission_range
from .netgen import (ALLOW_EQUAL, ContactModel, EmptyPoolError, NetworkConfig,
                     SocialNetwork, eligible_pool, generate_network, draw_from_pool)
from .sympoly import (DEFAULT_BUDGET, BudgetExceededError, WeightVector,
                      inclusion_probabilities, log_esp,
                      log_esp_leave_one_out_all)

UNIFORM = "uniform"
POWERLAW = "powerlaw"
POOL = "pool"
CONTACTS = "contacts"
RING = "ring"
EUCLIDEAN = "euclidean"
QUENCHED = "quenched"
ANNEALED = "annealed"

# floor on contact distances; co-located nodes have probability zero
MIN_DISTANCE = 1e-12


class NoDestinationError(ValueError):
    """The source has no contact to send to."""


@dataclass(frozen=True)
class DestinationRule:
    kind: str = UNIFORM
    beta: float = 0.0
    normalization: str = POOL
    distance: str = RING

    def __post_init__(self):
        if self.kind not in (UNIFORM, POWERLAW):
            raise ValueError(f"unknown destination rule {self.kind!r}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.normalization not in (POOL, CONTACTS):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.distance not in (RING, EUCLIDEAN):
            raise ValueError(f"unknown distance convention {self.distance!r}")

    @classmethod
    def powerlaw(cls, beta: float, **kw) -> "DestinationRule":
        return cls(POWERLAW, float(beta), **kw)

    @property
    def is_uniform(self) -> bool:
        return self.kind == UNIFORM


@dataclass(frozen=True)
class ExperimentConfig:
    network: NetworkConfig
    grid: GridSpec | None = None
    rule: DestinationRule = DestinationRule()
    trials: int = 10_000
    seed: int = 0
    ensemble: str = QUENCHED

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.ensemble not in (QUENCHED, ANNEALED):
            raise ValueError(f"unknown ensemble {self.ensemble!r}")
        if self.grid is None:
            object.__setattr__(self, "grid", GridSpec(self.network.n))
        elif self.grid.n != self.network.n:
            raise ValueError("grid and network disagree on n")


@dataclass
class HopEstimate:
    mean: float
    stderr: float
    trials: int
    truncated_count: int = 0
    samples: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_hops(cls, hops, skipped: int = 0, samples=None) -> "HopEstimate":
        hops = np.asarray(hops, dtype=float)
        if hops.size == 0:
            raise NoDestinationError("no trial reached a destination")
        se = float(hops.std(ddof=1) / math.sqrt(hops.size)) if hops.size > 1 else 0.0
        return cls(float(hops.mean()), se, int(hops.size), int(skipped), samples)

    @classmethod
    def merge(cls, parts) -> "HopEstimate":
        """Count-weighted pooling of independent estimates."""
        parts = list(parts)
        total = sum(p.trials for p in parts)
        mean = sum(p.mean * p.trials for p in parts) / total
        # pooled second moment from each part's mean and variance
        ss = 0.0
        for p in parts:
            var = p.stderr ** 2 * p.trials
            ss += var * (p.trials - 1) + p.trials * (p.mean - mean) ** 2
        se = math.sqrt(ss / (total - 1) / total) if total > 1 else 0.0
        return cls(mean, se, total, sum(p.truncated_count for p in parts))


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    r_squared: float
    points: tuple[tuple[float, float], ...]
    slope_stderr: float = 0.0
    degenerate: bool = False


@dataclass(frozen=True)
class CapacityPoint:
    n: int
    beta: float
    e_hops: float
    lambda_max: float
    theory_order: float
    e_hops_stderr: float = 0.0

    @property
    def lambda_stderr(self) -> float:
        return self.lambda_max * self.e_hops_stderr / self.e_hops


# -- distances and destination choice -------------------------------------

def _log_distance_weight(network: SocialNetwork, grid: GridSpec, cells,
                         source: int, ids: np.ndarray, rule: DestinationRule):
    if rule.beta == 0:
        return np.zeros(ids.size)
    if rule.distance == RING:
        d = hop_counts(cells[source], cells[ids]) * grid.cell_side
    else:
        diff = network.positions[ids] - network.positions[source]
        d = np.maximum(np.hypot(diff[:, 0], diff[:, 1]), MIN_DISTANCE)
    return -rule.beta * np.log(d)


def _categorical(logw: np.ndarray, rng: np.random.Generator) -> int:
    p = np.exp(logw - logw.max())
    cdf = np.cumsum(p)
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"),
                   logw.size - 1))


def pick_destination(network: SocialNetwork, source: int, contacts,
                     rule: DestinationRule, rng: np.random.Generator,
                     grid: GridSpec | None = None) -> int:
    """Choose the destination among a realized contact set."""
    contacts = np.asarray(contacts, dtype=np.int64)
    if contacts.size == 0:
        raise NoDestinationError(f"node {source} has no contacts")
    if rule.is_uniform or rule.beta == 0:
        return int(contacts[rng.integers(contacts.size)])
    grid = grid or GridSpec(network.n)
    cells = cells_of(network.positions, grid)
    logw = _log_distance_weight(network, grid, cells, source, contacts, rule)
    return int(contacts[_categorical(logw, rng)])


def contact_probabilities(network: SocialNetwork, source: int, contacts,
                          rule: DestinationRule,
                          grid: GridSpec | None = None) -> np.ndarray:
    """Destination law over a realized contact set (what
    :func:`pick_destination` samples from)."""
    contacts = np.asarray(contacts, dtype=np.int64)
    if contacts.size == 0:
        raise NoDestinationError(f"node {source} has no contacts")
    grid = grid or GridSpec(network.n)
    if rule.is_uniform:
        return np.full(contacts.size, 1.0 / contacts.size)
    cells = cells_of(network.positions, grid)
    logw = _log_distance_weight(network, grid, cells, source, contacts, rule)
    p = np.exp(logw - logw.max())
    return p / p.sum()


def _source_pool(network: SocialNetwork, source: int):
    """Element-wise eligible pool including the empty-pool fallback."""
    model = network.model
    if network.uses_fallback(source):
        model = ContactModel(model.epsilon, ALLOW_EQUAL)
    return eligible_pool(source, network, model)


def destination_distribution(network: SocialNetwork, source: int,
                             rule: DestinationRule, grid: GridSpec | None = None,
                             *, budget: int | None = DEFAULT_BUDGET):
    """Exact ensemble law of the destination of ``source``.

    Returns ``(ids, probs)`` over the eligible pool, averaging over the
    random contact set with the element-wise ESP machinery.  Raises
    :class:`NoDestinationError` when the pool is empty.
    """
    grid = grid or GridSpec(network.n)
    try:
        w, ids = _source_pool(network, source)
    except EmptyPoolError as exc:
        raise NoDestinationError(str(exc)) from exc
    q = min(int(network.degrees[source]), len(w))
    cells = cells_of(network.positions, grid)
    if rule.is_uniform:
        return ids, inclusion_probabilities(w, q, budget=budget) / q
    logd = _log_distance_weight(network, grid, cells, source, ids, rule)
    if rule.normalization == POOL:
        pi = inclusion_probabilities(w, q, budget=budget)
        with np.errstate(divide="ignore"):
            logp = np.log(pi) + logd
        p = np.exp(logp - logp.max())
        return ids, p / p.sum()
    return ids, _contacts_normalized_law(w, logd, q, budget)


def _contacts_normalized_law(w: WeightVector, log_dist_w: np.ndarray, q: int,
                             budget: int | None) -> np.ndarray:
    """E[1{k in C} * a_k / sum_{j in C} a_j] for product-weighted q-sets C.

    Uses 1/S = int_0^inf exp(-t S) dt, under which the expectation becomes
    a one-dimensional integral of leave-one-out ESPs of the tilted weights
    ``x_j * exp(-t a_j)``.
    """
    n = len(w)
    if q == n:
        a = np.exp(log_dist_w - log_dist_w.max())
        return a / a.sum()
    if n * (q + 1) * 2 > (budget or np.inf):
        raise BudgetExceededError("contact-normalized law exceeds budget")
    a = np.exp(log_dist_w - log_dist_w.max())          # scaled to max 1
    logx = w.log_weights
    log_norm = log_esp(w, q, budget=budget)
    loga = np.log(a)

    def integrand(t):
        y = WeightVector.from_log(logx - t * a)
        loo = log_esp_leave_one_out_all(y, q - 1, budget=budget)
        return np.exp(logx + loga - t * a + loo - log_norm)

    # t = exp(u): the integrand is a smooth bump in log-time
    t_lo = 1e-14
    t_hi = 80.0 / a.min()
    head = integrand(0.0) * t_lo
    body, _ = integrate.quad_vec(lambda u: integrand(math.exp(u)) * math.exp(u),
                                 math.log(t_lo), math.log(t_hi),
                                 epsabs=1e-14, epsrel=1e-11, limit=400)
    p = np.clip(head + body, 0.0, None)
    return p


def exact_source_hops(network: SocialNetwork, grid: GridSpec, source: int,
                      rule: DestinationRule, *,
                      budget: int | None = DEFAULT_BUDGET) -> float:
    """Exact expected hop count from one source."""
    ids, probs = destination_distribution(network, source, rule, grid, budget=budget)
    cells = cells_of(network.positions, grid)
    return float(hop_counts(cells[source], cells[ids]) @ probs)


def exact_mean_hops_small(network: SocialNetwork, grid: GridSpec | None,
                          rule: DestinationRule, *,
                          budget: int | None = DEFAULT_BUDGET) -> float:
    """Exact E[X] on a realized node set, averaged over contact-set draws.

    Sources are weighted uniformly (their degrees were drawn from P(k));
    sources without any eligible contact are skipped, as in the Monte
    Carlo estimator.
    """
    grid = grid or GridSpec(network.n)
    cost = int(np.sum(network.degrees.astype(float) + 1)) * network.n
    if budget is not None and cost > budget:
        raise BudgetExceededError(
            f"exact evaluation needs ~{cost} ESP cells, budget is {budget}")
    total, count = 0.0, 0
    for s in range(network.n):
        try:
            total += exact_source_hops(network, grid, s, rule, budget=budget)
        except NoDestinationError:
            continue
        count += 1
    if count == 0:
        raise NoDestinationError("no source has an eligible contact")
    return total / count


# -- Monte Carlo -------------------------------------------------------------

def _flat_contacts(network: SocialNetwork):
    lens = np.array([c.size for c in network.contacts], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lens)[:-1]])
    flat = (np.concatenate(network.contacts) if lens.sum()
            else np.empty(0, dtype=np.int64))
    return flat, offsets, lens


def _trials_uniform_quenched(network, sources, rng):
    flat, offsets, lens = _flat_contacts(network)
    u = rng.random(sources.size)
    ok = lens[sources] > 0
    pick = np.full(sources.size, -1, dtype=np.int64)
    s = sources[ok]
    pick[ok] = flat[offsets[s] + np.minimum((u[ok] * lens[s]).astype(np.int64),
                                            lens[s] - 1)]
    return pick


def _trials_uniform_annealed(network, sources, rng, budget):
    # uniform over a fresh contact set: pick a group with probability
    # m_g / q, then any member of that group is equally likely
    pick = np.full(sources.size, -1, dtype=np.int64)
    for s in np.unique(sources):
        rows = np.flatnonzero(sources == s)
        pool = network.pool_groups(int(s))
        q = min(int(network.degrees[s]), pool.size)
        if q == 0:
            continue
        counts = pool.weights.sample_counts(q, rng, rows.size, budget)
        for row, m in zip(rows, counts):
            g = int(np.searchsorted(np.cumsum(m), rng.integers(q), side="right"))
            pick[row] = pool.pick(g, rng.integers(pool.counts[g], size=1))[0]
    return pick


def _trials_contacts(network, grid, cells, rule, sources, rng, ensemble, budget):
    pick = np.full(sources.size, -1, dtype=np.int64)
    for row, s in enumerate(sources.tolist()):
        if ensemble == QUENCHED:
            contacts = network.contacts[s]
        else:
            pool = network.pool_groups(s)
            contacts = draw_from_pool(pool, min(int(network.degrees[s]), pool.size),
                                      rng, budget=budget)
        if contacts.size == 0:
            continue
        logw = _log_distance_weight(network, grid, cells, s, contacts, rule)
        pick[row] = contacts[_categorical(logw, rng)]
    return pick


def _pool_lookup(network: SocialNetwork, source: int, budget):
    """Per-node log inclusion probability for ``source``'s pool (``-inf``
    outside the pool), from the grouped ESP tables."""
    pool = network.pool_groups(source)
    q = min(int(network.degrees[source]), pool.size)
    lookup = np.full(int(network.degrees.max()) + 1, -np.inf)
    if q == 0:
        return lookup, pool
    with np.errstate(divide="ignore"):
        lookup[pool.degrees] = np.log(pool.weights.group_inclusion(q, budget))
    return lookup, pool


def _trials_pool(network, grid, cells, rule, sources, rng, budget,
                 max_cells: int = 1 << 21):
    n = network.n
    pick = np.full(sources.size, -1, dtype=np.int64)
    degs = network.degrees
    fallback = np.array([network.uses_fallback(int(s)) for s in sources])
    keys = degs[sources] * 2 + fallback
    ring = rule.distance == RING or rule.beta == 0
    if ring:
        m = grid.cells_per_side
        cell_id = cells[:, 0] * m + cells[:, 1]
        order = np.argsort(cell_id, kind="stable")
        starts = np.searchsorted(cell_id[order], np.arange(m * m + 1))
        grid_ij = np.stack(np.divmod(np.arange(m * m), m), axis=1)
    for key in np.unique(keys):
        rows = np.flatnonzero(keys == key)
        lookup, pool = _pool_lookup(network, int(sources[rows[0]]), budget)
        if pool.size == 0:
            continue
        base = np.exp(lookup[degs])                          # pi per node
        if ring:
            _pool_ring(rows, sources, base, cell_id, order, starts, grid_ij,
                       grid, rule, rng, pick, max_cells)
        else:
            _pool_euclidean(rows, sources, base, network, rule, rng, pick,
                            max(1, max_cells // n))
    return pick


def _pool_ring(rows, sources, base, cell_id, order, starts, grid_ij, grid,
               rule, rng, pick, max_cells):
    # ring weights depend on the destination cell only: aggregate the
    # inclusion mass per cell, draw a cell, then a member of that cell
    n_cells = grid_ij.shape[0]
    mass = np.bincount(cell_id, weights=base, minlength=n_cells)
    batch = max(1, max_cells // n_cells)
    for start in range(0, rows.size, batch):
        chunk = rows[start:start + batch]
        src = sources[chunk]
        w = np.broadcast_to(mass, (chunk.size, n_cells)).copy()
        own = cell_id[src]
        w[np.arange(chunk.size), own] -= base[src]
        np.maximum(w, 0.0, out=w)
        if rule.beta != 0:
            h = np.maximum(1, np.abs(grid_ij[own][:, None, :] - grid_ij[None, :, :]).sum(-1))
            w *= np.exp(-rule.beta * np.log(h * grid.cell_side)
                        + rule.beta * math.log(grid.cell_side))
        cdf = np.cumsum(w, axis=1)
        u = rng.random(chunk.size) * cdf[:, -1]
        chosen = np.minimum((cdf <= u[:, None]).sum(axis=1), n_cells - 1)
        for row, s, c in zip(chunk.tolist(), src.tolist(), chosen.tolist()):
            members = order[starts[c]:starts[c + 1]]
            mw = base[members] * (members != s)
            cm = np.cumsum(mw)
            j = np.searchsorted(cm, rng.random() * cm[-1], side="right")
            pick[row] = members[min(j, members.size - 1)]


def _pool_euclidean(rows, sources, base, network, rule, rng, pick, batch):
    n = network.n
    with np.errstate(divide="ignore"):
        logbase = np.log(base)
    for start in range(0, rows.size, batch):
        chunk = rows[start:start + batch]
        src = sources[chunk]
        logw = np.broadcast_to(logbase, (chunk.size, n)).copy()
        logw[np.arange(chunk.size), src] = -np.inf
        if rule.beta != 0:
            diff = network.positions[src][:, None, :] - network.positions[None, :, :]
            d = np.maximum(np.hypot(diff[..., 0], diff[..., 1]), MIN_DISTANCE)
            logw -= rule.beta * np.log(d)
        logw -= logw.max(axis=1, keepdims=True)
        cdf = np.cumsum(np.exp(logw), axis=1)
        u = rng.random(chunk.size) * cdf[:, -1]
        pick[chunk] = np.minimum((cdf <= u[:, None]).sum(axis=1), n - 1)


def sample_destinations(network: SocialNetwork, grid: GridSpec,
                        rule: DestinationRule, sources, rng: np.random.Generator,
                        *, ensemble: str = QUENCHED,
                        budget: int | None = DEFAULT_BUDGET) -> np.ndarray:
    """One destination per source (-1 where the source has no contact)."""
    sources = np.asarray(sources, dtype=np.int64)
    cells = cells_of(network.positions, grid)
    if rule.is_uniform or (rule.beta == 0 and rule.normalization == CONTACTS):
        if ensemble == QUENCHED:
            return _trials_uniform_quenched(network, sources, rng)
        return _trials_uniform_annealed(network, sources, rng, budget)
    if rule.normalization == CONTACTS:
        return _trials_contacts(network, grid, cells, rule, sources, rng,
                                ensemble, budget)
    return _trials_pool(network, grid, cells, rule, sources, rng, budget)


def estimate_mean_hops(config: ExperimentConfig,
                       network: SocialNetwork | None = None,
                       rng: np.random.Generator | None = None, *,
                       record: bool = False,
                       budget: int | None = DEFAULT_BUDGET) -> HopEstimate:
    """Monte Carlo E[X]: uniform source, destination per rule, cell hops.

    ``config.ensemble="quenched"`` reuses the network's contact sets;
    ``"annealed"`` redraws the source's contact set on every trial, which
    is the quantity :func:`exact_mean_hops_small` computes.  The pool
    normalization is an ensemble law and ignores the realized sets.
    With ``record=True`` the (source degree, hops) pairs are kept.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    if network is None:
        network = generate_network(config.network, rng)
    grid = config.grid
    sources = rng.integers(network.n, size=config.trials)
    dest = sample_destinations(network, grid, config.rule, sources, rng,
                               ensemble=config.ensemble, budget=budget)
    ok = dest >= 0
    cells = cells_of(network.positions, grid)
    hops = hop_counts(cells[sources[ok]], cells[dest[ok]])
    samples = None
    if record:
        samples = np.column_stack([network.degrees[sources[ok]], hops])
    return HopEstimate.from_hops(hops, int((~ok).sum()), samples)


# -- capacity bound and theory ----------------------------------------------

def throughput_upper_bound(n: int, e_hops: float, grid: GridSpec,
                           W: float = 1.0) -> float:
    """Per-node rate allowed by n * lambda * E[X] <= W / (T^2 C1^2 r^2)."""
    if e_hops < 1:
        raise ValueError("E[X] is at least one hop")
    return W / (grid.reuse ** 2 * grid.c1 ** 2 * grid.r ** 2 * n * e_hops)


def theory_reference(n: int, beta: float) -> float:
    """Order of lambda_max (unit constant) on the matching beta branch."""
    if n < 3:
        raise ValueError("n must be >= 3")
    if beta < 0:
        raise ValueError("beta must be >= 0")
    log_n = math.log(n)
    if beta <= 2:
        return 1.0 / math.sqrt(n * log_n)
    if beta <= 3:
        # (log n)^(beta-1): meets the outer branches at beta = 2 and 3
        return 1.0 / math.sqrt(n ** (3 - beta) * log_n ** (beta - 1))
    return 1.0 / log_n


def expected_hop_slope(beta: float) -> float:
    """Exponent of E[X] in 1/r(n) on each beta branch."""
    if beta <= 2:
        return 1.0
    if beta <= 3:
        return 3.0 - beta
    return 0.0


def fit_loglog(xs, ys) -> ScalingFit:
    """Least squares of log y on log x."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 3:
        raise ValueError(f"need at least 3 points, got {xs.size}")
    lx, ly = np.log(xs), np.log(ys)
    if np.ptp(lx) == 0:
        raise ValueError("predictor values must be distinct")
    pts = tuple(zip(lx.tolist(), ly.tolist()))
    if np.ptp(ly) == 0:
        return ScalingFit(0.0, float(ly[0]), 1.0, pts, 0.0, degenerate=True)
    res = stats.linregress(lx, ly)
    return ScalingFit(float(res.slope), float(res.intercept),
                      float(min(1.0, res.rvalue ** 2)), pts, float(res.stderr))


def fit_scaling(points, predictor: str = "inverse_range",
                range_const: float = 1.0) -> ScalingFit:
    """Slope of log E[X] against log(1/r(n)) (or log n)."""
    points = list(points)
    ns = [p[0] for p in points]
    if len(set(ns)) != len(ns):
        raise ValueError("points must have distinct n")
    if predictor == "inverse_range":
        xs = [1.0 / transmission_range(int(n), range_const) for n in ns]
    elif predictor == "n":
        xs = ns
    else:
        raise ValueError(f"unknown predictor {predictor!r}")
    return fit_loglog(xs, [p[1] for p in points])


def capacity_point(n: int, beta: float, estimate: HopEstimate, grid: GridSpec,
                   W: float = 1.0) -> CapacityPoint:
    lam = throughput_upper_bound(n, estimate.mean, grid, W)
    return CapacityPoint(n, beta, estimate.mean, lam, theory_reference(n, beta),
                         estimate.stderr)


# -- large-pool limit of the inclusion law -------------------------------------

@dataclass(frozen=True)
class LimitReport:
    ratios: np.ndarray
    median: float
    minimum: float
    maximum: float
    iqr: tuple[float, float]

    def within(self, lo: float, hi: float) -> bool:
        return bool(np.all((self.ratios >= lo) & (self.ratios <= hi)))


def inclusion_limit_check(weights: WeightVector, q: int, *,
                     budget: int | None = DEFAULT_BUDGET) -> LimitReport:
    """N times the uniform-rule destination probability of every item.

    For large pools and large q these ratios approach 1 (the destination
    is close to uniform over the pool); for small q they do not.
    """
    n = len(weights)
    ratios = n * inclusion_probabilities(weights, q, budget=budget) / q
    q25, q75 = np.percentile(ratios, [25, 75])
    return LimitReport(ratios, float(np.median(ratios)), float(ratios.min()),
                      float(ratios.max()), (float(q25), float(q75)))
