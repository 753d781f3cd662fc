"""Network generation: positions, power-law degrees and contact sets.

A node of degree ``q`` picks ``q`` direct contacts among the nodes of
strictly smaller degree.  A candidate set is drawn with probability
proportional to the product of ``degree ** -epsilon`` over its members.
When no smaller degree exists (the minimum-degree class), the node falls
back to candidates of equal or smaller degree, itself excluded.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .sympoly import (DEFAULT_BUDGET, GroupedWeights, WeightVector,
                      sample_fixed_size_subset)

STRICT = "strict"
ALLOW_EQUAL = "allow-equal"


class EmptyPoolError(ValueError):
    """The source has no eligible contact under the requested tie rule."""


@dataclass(frozen=True)
class NetworkConfig:
    n: int
    gamma: float
    epsilon: float
    seed: int = 0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n}")
        if not self.gamma > 1:
            raise ValueError(
                f"gamma={self.gamma} rejected: a fractal network needs "
                "gamma = 1 + d_B/d_g > 1")
        if not self.epsilon > 2:
            raise ValueError(
                f"epsilon={self.epsilon} rejected: a fractal network needs "
                "epsilon = 2 + d_e/d_g > 2")


@dataclass(frozen=True)
class Node:
    id: int
    position: tuple[float, float]
    degree: int


@dataclass(frozen=True)
class ContactModel:
    """Joint contact law ``P(k1, k2) ~ k1**-(gamma-1) * k2**-epsilon``.

    Its normalizer cancels from every conditional quantity used here, so it
    is only carried symbolically.
    """

    epsilon: float
    tie_rule: str = STRICT
    normalization: str = "M_{gamma,epsilon}"

    def __post_init__(self):
        if self.tie_rule not in (STRICT, ALLOW_EQUAL):
            raise ValueError(f"unknown tie rule {self.tie_rule!r}")

    def log_weight(self, degree):
        return -self.epsilon * np.log(degree)


def place_nodes(config: NetworkConfig, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. uniform points in the unit square, shape (n, 2)."""
    return rng.random((config.n, 2))


def degree_pmf(n: int, gamma: float) -> np.ndarray:
    """P(k) = k**-gamma / sum_{b<=n} b**-gamma for k = 1..n (index k-1)."""
    k = np.arange(1, n + 1, dtype=float)
    w = np.exp(-gamma * np.log(k))
    return w / w.sum()


def sample_degrees(config: NetworkConfig, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. truncated-zeta degrees on {1..n} by inverse CDF."""
    cdf = np.cumsum(degree_pmf(config.n, config.gamma))
    cdf[-1] = 1.0
    k = np.searchsorted(cdf, rng.random(config.n), side="right") + 1
    return np.minimum(k, config.n).astype(np.int64)


class PoolGroups:
    """The eligible pool of one source, grouped by degree.

    ``members[g]`` lists the ids of degree ``degrees[g]``, all weighted
    ``degrees[g] ** -epsilon``.  The source itself may appear in the last
    group under the allow-equal rule; it is then marked ``excluded`` and
    skipped by every draw rather than copied out of the member array.
    """

    def __init__(self, degrees, members, model: ContactModel, tie_rule: str,
                 excluded: int | None = None,
                 weights: GroupedWeights | None = None):
        self.tie_rule = tie_rule
        self.excluded = excluded
        counts = np.array([m.size for m in members], dtype=np.int64)
        self._skip = None
        if excluded is not None and len(members):
            pos = int(np.searchsorted(members[-1], excluded))
            if pos < members[-1].size and members[-1][pos] == excluded:
                self._skip = pos
                counts[-1] -= 1
        keep = counts > 0
        if weights is None:
            weights = GroupedWeights(None, counts,
                                     log_values=model.log_weight(np.asarray(degrees)))
        self.weights = weights
        self.degrees = np.asarray(degrees, dtype=np.int64)[keep]
        self.members = [m for m, k in zip(members, keep) if k]
        self.counts = counts[keep]
        if self._skip is not None and not keep[-1]:
            self._skip = None

    @property
    def size(self) -> int:
        return int(self.counts.sum())

    def pick(self, g: int, idx: np.ndarray) -> np.ndarray:
        """Map positions ``0..counts[g]-1`` of group ``g`` to node ids."""
        idx = np.asarray(idx, dtype=np.int64)
        if self._skip is not None and g == len(self.members) - 1:
            idx = idx + (idx >= self._skip)
        return self.members[g][idx]

    def ids(self) -> np.ndarray:
        if not self.members:
            return np.empty(0, dtype=np.int64)
        return np.concatenate([self.pick(g, np.arange(c))
                               for g, c in enumerate(self.counts)])

    def group_of_degree(self) -> dict[int, int]:
        return {int(d): g for g, d in enumerate(self.degrees)}


class SocialNetwork:
    """Positions, degrees and directed contact sets of one realization."""

    def __init__(self, config: NetworkConfig, positions, degrees, contacts,
                 model: ContactModel | None = None):
        self.config = config
        self.model = model or ContactModel(config.epsilon)
        self.positions = np.asarray(positions, dtype=float)
        self.degrees = np.asarray(degrees, dtype=np.int64)
        self.contacts = [np.asarray(c, dtype=np.int64) for c in contacts]
        for a in (self.positions, self.degrees):
            a.flags.writeable = False
        for c in self.contacts:
            c.flags.writeable = False
        if self.positions.shape != (config.n, 2) or self.degrees.shape != (config.n,):
            raise ValueError("positions/degrees do not match n")
        if len(self.contacts) != config.n:
            raise ValueError("need one contact list per node")
        # grouped pool weights depend only on (source degree, tie rule)
        self._pool_weights: dict[tuple[int, str], GroupedWeights] = {}

    @property
    def n(self) -> int:
        return self.config.n

    def node(self, i: int) -> Node:
        x, y = self.positions[i]
        return Node(int(i), (float(x), float(y)), int(self.degrees[i]))

    @property
    def nodes(self) -> list[Node]:
        return [self.node(i) for i in range(self.n)]

    @cached_property
    def truncated(self) -> frozenset[int]:
        """Nodes whose pool was smaller than their degree."""
        return frozenset(i for i, c in enumerate(self.contacts)
                         if c.size < self.degrees[i])

    @cached_property
    def fallback(self) -> frozenset[int]:
        """Nodes whose strict pool was empty (allow-equal rule used)."""
        return frozenset(i for i in range(self.n) if self.uses_fallback(i))

    @cached_property
    def _by_degree(self) -> tuple[np.ndarray, list[np.ndarray]]:
        order = np.argsort(self.degrees, kind="stable")
        values, starts = np.unique(self.degrees[order], return_index=True)
        groups = np.split(order, starts[1:])
        return values, [np.sort(g) for g in groups]

    def uses_fallback(self, source: int) -> bool:
        if self.model.tie_rule == ALLOW_EQUAL:
            return False
        values, _ = self._by_degree
        return not values[0] < self.degrees[source]

    def pool_groups(self, source: int, tie_rule: str | None = None) -> PoolGroups:
        """Eligible pool of ``source`` grouped by degree.

        With ``tie_rule=None`` the model's rule applies, switching to
        allow-equal when the strict pool is empty.
        """
        q = self.degrees[source]
        if tie_rule is None:
            tie_rule = ALLOW_EQUAL if self.uses_fallback(source) else self.model.tie_rule
        values, groups = self._by_degree
        keep = values < q if tie_rule == STRICT else values <= q
        degs = values[keep]
        members = [g for g, k in zip(groups, keep) if k]
        excluded = source if members and degs[-1] == q else None
        key = (int(q), tie_rule)
        cached = self._pool_weights.get(key)
        pool = PoolGroups(degs, members, self.model, tie_rule, excluded, cached)
        self._pool_weights[key] = pool.weights
        return pool

    def contact_pairs(self) -> np.ndarray:
        """Directed (selector, selected) pairs, shape (m, 2)."""
        src = np.repeat(np.arange(self.n), [c.size for c in self.contacts])
        dst = np.concatenate(self.contacts) if self.n else np.empty(0, np.int64)
        return np.column_stack([src, dst]).astype(np.int64)

    def to_graph(self):
        """Undirected networkx graph of the contact relation."""
        import networkx as nx

        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        g.add_edges_from(map(tuple, self.contact_pairs().tolist()))
        return g

    # -- serialization ---------------------------------------------------

    def to_text(self) -> str:
        c = self.config
        out = io.StringIO()
        out.write(f"{c.n} {c.gamma!r} {c.epsilon!r} {c.seed}\n")
        for i in range(self.n):
            x, y = self.positions[i]
            out.write(f"{i} {x:.17g} {y:.17g} {int(self.degrees[i])}\n")
        for i, cs in enumerate(self.contacts):
            out.write(" ".join([str(i)] + [str(int(v)) for v in cs]) + "\n")
        return out.getvalue()

    @classmethod
    def from_text(cls, text: str, tie_rule: str = STRICT) -> "SocialNetwork":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        head = lines[0].split()
        if len(head) != 4:
            raise ValueError("header must read 'n gamma epsilon seed'")
        n = int(head[0])
        config = NetworkConfig(n, float(head[1]), float(head[2]), int(head[3]))
        if len(lines) != 1 + 2 * n:
            raise ValueError(f"expected {1 + 2 * n} lines, found {len(lines)}")
        positions = np.empty((n, 2))
        degrees = np.empty(n, dtype=np.int64)
        for i, ln in enumerate(lines[1:n + 1]):
            parts = ln.split()
            if int(parts[0]) != i or len(parts) != 4:
                raise ValueError(f"bad node line {i + 2}: {ln!r}")
            positions[i] = float(parts[1]), float(parts[2])
            degrees[i] = int(parts[3])
        contacts = []
        for i, ln in enumerate(lines[n + 1:]):
            parts = [int(v) for v in ln.split()]
            if parts[0] != i:
                raise ValueError(f"bad contact line for node {i}: {ln!r}")
            contacts.append(parts[1:])
        return cls(config, positions, degrees, contacts,
                   ContactModel(config.epsilon, tie_rule))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path, tie_rule: str = STRICT) -> "SocialNetwork":
        return cls.from_text(Path(path).read_text(), tie_rule)


def eligible_pool(source: int, network: SocialNetwork,
                  model: ContactModel | None = None) -> tuple[WeightVector, np.ndarray]:
    """Element-wise pool of ``source``: weights ``degree ** -epsilon`` and ids.

    Raises :class:`EmptyPoolError` when nothing qualifies under the rule.
    """
    model = model or network.model
    q = network.degrees[source]
    if model.tie_rule == STRICT:
        mask = network.degrees < q
    else:
        mask = network.degrees <= q
    mask = mask.copy()
    mask[source] = False
    ids = np.flatnonzero(mask)
    if ids.size == 0:
        raise EmptyPoolError(
            f"node {source} (degree {q}) has no eligible contacts "
            f"under the {model.tie_rule} rule")
    w = WeightVector.from_log(model.log_weight(network.degrees[ids]))
    return w, ids


def draw_from_pool(pool: PoolGroups, q: int, rng: np.random.Generator, *,
                   budget: int | None = DEFAULT_BUDGET) -> np.ndarray:
    """One product-weighted q-subset of the pool (sorted ids)."""
    if q == 0 or pool.size == 0:
        return np.empty(0, dtype=np.int64)
    counts = pool.weights.sample_counts(q, rng, 1, budget)[0]
    picked = [pool.pick(g, rng.choice(int(pool.counts[g]), int(m), replace=False))
              for g, m in enumerate(counts) if m]
    return np.sort(np.concatenate(picked))


def build_contacts(config: NetworkConfig, positions, degrees,
                   model: ContactModel, rng: np.random.Generator, *,
                   method: str = "grouped",
                   budget: int | None = DEFAULT_BUDGET) -> SocialNetwork:
    """Draw every node's contact set; returns the finished network.

    ``method="grouped"`` samples per-degree counts then members uniformly,
    ``method="elementwise"`` runs the item-by-item sampler over the full
    pool.  Both give the product-weighted set law.
    """
    if method not in ("grouped", "elementwise"):
        raise ValueError(f"unknown method {method!r}")
    draft = SocialNetwork(config, positions, degrees,
                          [[] for _ in range(config.n)], model)
    if method == "grouped":
        return _build_grouped(draft, rng, budget)
    contacts = []
    for s in range(config.n):
        q = int(draft.degrees[s])
        rule = ALLOW_EQUAL if draft.uses_fallback(s) else model.tie_rule
        try:
            w, ids = eligible_pool(s, draft, ContactModel(model.epsilon, rule))
        except EmptyPoolError:
            contacts.append(np.empty(0, dtype=np.int64))
            continue
        pick = sample_fixed_size_subset(w, min(q, len(w)), rng, budget=budget)
        contacts.append(ids[pick])
    return SocialNetwork(config, positions, degrees, contacts, model)


def _build_grouped(draft: SocialNetwork, rng: np.random.Generator,
                   budget: int | None) -> SocialNetwork:
    # all sources of one degree share the pool weights, so their group
    # counts are drawn in one batch
    contacts: list[np.ndarray] = [np.empty(0, dtype=np.int64)] * draft.n
    values, groups = draft._by_degree
    for q, sources in zip(values.tolist(), groups):
        pool = draft.pool_groups(int(sources[0]))
        take = min(q, pool.size)
        if take == 0:
            continue
        counts = pool.weights.sample_counts(take, rng, sources.size, budget)
        for row, s in zip(counts, sources.tolist()):
            if pool.excluded is not None:
                pool = draft.pool_groups(s)
            picked = []
            for g in np.flatnonzero(row):
                m, c = int(row[g]), int(pool.counts[g])
                idx = rng.integers(c, size=1) if m == 1 else rng.choice(c, m, replace=False)
                picked.append(pool.pick(g, idx))
            contacts[s] = np.sort(np.concatenate(picked))
    return SocialNetwork(draft.config, draft.positions, draft.degrees, contacts,
                         draft.model)


def generate_network(config: NetworkConfig, rng: np.random.Generator | None = None,
                     *, tie_rule: str = STRICT, method: str = "grouped",
                     budget: int | None = DEFAULT_BUDGET) -> SocialNetwork:
    """Positions, then degrees, then contacts, all from one stream."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    positions = place_nodes(config, rng)
    degrees = sample_degrees(config, rng)
    model = ContactModel(config.epsilon, tie_rule)
    return build_contacts(config, positions, degrees, model, rng,
                          method=method, budget=budget)


def expected_pool_fraction(q: int, n: int, gamma: float) -> float:
    """Expected |pool| / n for a degree-q source under the strict rule."""
    pmf = degree_pmf(n, gamma)
    return float(pmf[:q - 1].sum()) if q > 1 else 0.0


def degree_counts(degrees) -> dict[int, int]:
    values, counts = np.unique(np.asarray(degrees), return_counts=True)
    return {int(v): int(c) for v, c in zip(values, counts)}


def quadrant_counts(positions) -> np.ndarray:
    p = np.asarray(positions)
    qx = (p[:, 0] >= 0.5).astype(int)
    qy = (p[:, 1] >= 0.5).astype(int)
    return np.bincount(qx * 2 + qy, minlength=4)

