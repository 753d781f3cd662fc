"""Elementary symmetric polynomials (ESPs) evaluated in the log domain.

``sigma_p(x_1..x_N)`` is the sum over all p-subsets of the product of the
subset's weights.  Contact-set weights of the form ``degree ** -epsilon``
span many decades, so every table here stores natural logs and combines
cells with log-sum-exp.

Two weight containers are provided:

* :class:`WeightVector` -- one weight per item, the general case.
* :class:`GroupedWeights` -- a multiset of repeated weights (``counts[g]``
  copies of ``values[g]``).  Contact pools only take one weight per degree
  class, and the grouped form turns an O(N*q) table into O(G*q).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

DEFAULT_BUDGET = 10**8
# estimated relative error above which the subtraction form of the
# leave-one-out recurrence is abandoned for a fresh DP
LOO_REL_TOL = 1e-12
_EPS = np.finfo(float).eps


class DegenerateWeightsError(ValueError):
    """A normalizing ESP is zero, so the requested ratio is undefined."""


class InfeasibleSampleError(ValueError):
    """More items requested than there are strictly positive weights."""


class BudgetExceededError(RuntimeError):
    """A DP table would exceed the configured cell budget."""


class WeightVector:
    """Immutable non-negative weights kept together with their logs."""

    __slots__ = ("weights", "log_weights")

    def __init__(self, weights):
        w = np.array(weights, dtype=float).ravel()
        if w.size == 0:
            raise ValueError("weight vector must hold at least one weight")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and non-negative")
        with np.errstate(divide="ignore"):
            lw = np.log(w)
        w.flags.writeable = False
        lw.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "log_weights", lw)

    @classmethod
    def from_log(cls, log_weights) -> "WeightVector":
        """Build from log weights; ``-inf`` encodes a zero weight.

        The linear weights may under/overflow, the logs are kept exact.
        """
        lw = np.array(log_weights, dtype=float).ravel()
        if lw.size == 0:
            raise ValueError("weight vector must hold at least one weight")
        if np.any(np.isnan(lw)) or np.any(lw == np.inf):
            raise ValueError("log weights must be < +inf and not NaN")
        obj = cls.__new__(cls)
        w = np.exp(lw)
        w.flags.writeable = False
        lw.flags.writeable = False
        object.__setattr__(obj, "weights", w)
        object.__setattr__(obj, "log_weights", lw)
        return obj

    def __setattr__(self, name, value):
        raise AttributeError("WeightVector is immutable")

    def __len__(self) -> int:
        return self.log_weights.size

    def __repr__(self) -> str:
        return f"WeightVector({self.weights.tolist()!r})"

    @property
    def n_positive(self) -> int:
        return int(np.count_nonzero(self.log_weights > -np.inf))

    def scaled(self, c: float) -> "WeightVector":
        if not c > 0:
            raise ValueError("scale must be positive")
        return WeightVector.from_log(self.log_weights + math.log(c))

    def without(self, k: int) -> "WeightVector":
        return WeightVector.from_log(np.delete(self.log_weights, k))


def _check_budget(cells: int, budget: int | None) -> None:
    if budget is not None and cells > budget:
        raise BudgetExceededError(
            f"ESP table needs {cells} cells, budget is {budget}")


def _log_prefix_table(logx: np.ndarray, p_max: int) -> np.ndarray:
    """Row i holds log sigma_p of the first i weights, p = 0..p_max."""
    n = logx.size
    table = np.full((n + 1, p_max + 1), -np.inf)
    table[:, 0] = 0.0
    if p_max == 0:
        return table
    with np.errstate(invalid="ignore"):
        for i in range(n):
            prev = table[i]
            table[i + 1, 1:] = np.logaddexp(prev[1:], logx[i] + prev[:-1])
    return table


def _log_suffix_table(logx: np.ndarray, p_max: int) -> np.ndarray:
    """Row j holds log sigma_p of weights j..N-1 (row N is the empty set)."""
    return _log_prefix_table(logx[::-1], p_max)[::-1]


@dataclass(frozen=True)
class EspTable:
    """Log-domain ESPs over every prefix of a weight vector.

    ``log_values[i, p]`` is ``log sigma_{p,i}`` for the first ``i`` weights.
    """

    log_values: np.ndarray
    p_max: int

    @property
    def n(self) -> int:
        return self.log_values.shape[0] - 1

    def log(self, p: int, prefix: int | None = None) -> float:
        prefix = self.n if prefix is None else prefix
        if p > self.p_max:
            raise ValueError(f"order {p} above table maximum {self.p_max}")
        if p > prefix:
            return -np.inf
        return float(self.log_values[prefix, p])

    def value(self, p: int, prefix: int | None = None) -> float:
        return math.exp(self.log(p, prefix))


def esp_table(w: WeightVector, p_max: int, *,
              budget: int | None = DEFAULT_BUDGET) -> EspTable:
    if not 0 <= p_max <= len(w):
        raise ValueError(f"p_max must lie in [0, {len(w)}], got {p_max}")
    _check_budget(len(w) * (p_max + 1), budget)
    values = _log_prefix_table(w.log_weights, p_max)
    values.flags.writeable = False
    return EspTable(values, p_max)


def log_esp(w: WeightVector, p: int, *,
            budget: int | None = DEFAULT_BUDGET) -> float:
    """log sigma_{p,N}(w); ``-inf`` when the polynomial vanishes."""
    if not 0 <= p <= len(w):
        raise ValueError(f"order p must lie in [0, {len(w)}], got {p}")
    return esp_table(w, p, budget=budget).log(p)


def esp(w: WeightVector, p: int, *,
        budget: int | None = DEFAULT_BUDGET) -> float:
    return math.exp(log_esp(w, p, budget=budget))


def log_esp_leave_one_out(w: WeightVector, k: int, p: int, *,
                          budget: int | None = DEFAULT_BUDGET,
                          rel_tol: float = LOO_REL_TOL) -> float:
    """log of sigma_p over all weights except index ``k``.

    Unrolls ``L_j = sigma_j - x_k * L_{j-1}`` upward from ``L_0 = 1`` while a
    running error bound stays under ``rel_tol``; once cancellation pushes the
    bound past it, a fresh DP without index ``k`` is used instead.
    """
    n = len(w)
    if not 0 <= k < n:
        raise IndexError(f"index {k} out of range for {n} weights")
    if not 0 <= p <= n - 1:
        raise ValueError(f"order p must lie in [0, {n - 1}], got {p}")
    if p == 0:
        return 0.0
    log_sigma = esp_table(w, p, budget=budget).log_values[n]
    lx = w.log_weights[k]
    if lx == -np.inf:
        return float(log_sigma[p])

    u_sigma = (n + 2) * _EPS
    out, err = 0.0, 0.0
    for j in range(1, p + 1):
        s = log_sigma[j]
        t = lx + out
        if s == -np.inf:
            return -np.inf
        if t == -np.inf:
            out = s
            err = u_sigma
            continue
        ratio = math.exp(t - s)
        if ratio >= 1.0:
            err = np.inf
            break
        out = s + math.log1p(-ratio)
        err = (u_sigma + ratio * err + _EPS) / (1.0 - ratio)
        if err > rel_tol:
            break
    if err > rel_tol:
        return log_esp(w.without(k), p, budget=budget)
    return float(out)


def esp_leave_one_out(w: WeightVector, k: int, p: int, *,
                      budget: int | None = DEFAULT_BUDGET) -> float:
    return math.exp(log_esp_leave_one_out(w, k, p, budget=budget))


def log_esp_leave_one_out_all(w: WeightVector, p: int, *,
                              budget: int | None = DEFAULT_BUDGET) -> np.ndarray:
    """Leave-one-out log ESPs of order ``p`` for every index at once.

    Convolves prefix and suffix tables, so only sums of positives appear.
    """
    n = len(w)
    if not 0 <= p <= n - 1:
        raise ValueError(f"order p must lie in [0, {n - 1}], got {p}")
    _check_budget(2 * n * (p + 1), budget)
    pre = _log_prefix_table(w.log_weights, p)
    suf = _log_suffix_table(w.log_weights, p)
    terms = pre[:-1, :] + suf[1:, ::-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = logsumexp(terms, axis=1)
    return np.asarray(out, dtype=float)


def lemma1_ratio(w: WeightVector, q: int, *,
                 budget: int | None = DEFAULT_BUDGET) -> float:
    """sigma_1 * sigma_q / ((q + 1) * sigma_{q+1}).

    Equals N / (N - q) exactly when all weights are equal.
    """
    n = len(w)
    if n < 2:
        raise ValueError("need at least two weights")
    if not 1 <= q <= n - 1:
        raise ValueError(f"q must lie in [1, {n - 1}], got {q}")
    table = esp_table(w, q + 1, budget=budget)
    log_den = table.log(q + 1)
    if log_den == -np.inf:
        raise DegenerateWeightsError(
            f"sigma_{q + 1} is zero: fewer than {q + 1} positive weights")
    return math.exp(table.log(1) + table.log(q) - math.log(q + 1) - log_den)


def inclusion_probability(w: WeightVector, q: int, k: int, *,
                          budget: int | None = DEFAULT_BUDGET) -> float:
    """P(k is in S) when S is a q-subset drawn with probability
    proportional to the product of its weights."""
    n = len(w)
    if not 1 <= q <= n:
        raise ValueError(f"set size q must lie in [1, {n}], got {q}")
    if not 0 <= k < n:
        raise IndexError(f"index {k} out of range for {n} weights")
    log_den = log_esp(w, q, budget=budget)
    if log_den == -np.inf:
        raise DegenerateWeightsError(f"sigma_{q} is zero")
    lx = w.log_weights[k]
    if lx == -np.inf:
        return 0.0
    log_num = lx + log_esp_leave_one_out(w, k, q - 1, budget=budget)
    return min(1.0, math.exp(log_num - log_den))


def inclusion_probabilities(w: WeightVector, q: int, *,
                            budget: int | None = DEFAULT_BUDGET) -> np.ndarray:
    """Vector form of :func:`inclusion_probability`; sums to ``q``."""
    n = len(w)
    if not 1 <= q <= n:
        raise ValueError(f"set size q must lie in [1, {n}], got {q}")
    log_den = log_esp(w, q, budget=budget)
    if log_den == -np.inf:
        raise DegenerateWeightsError(f"sigma_{q} is zero")
    loo = log_esp_leave_one_out_all(w, q - 1, budget=budget)
    with np.errstate(invalid="ignore"):
        logp = w.log_weights + loo - log_den
    p = np.exp(np.where(np.isnan(logp), -np.inf, logp))
    return np.minimum(p, 1.0)


def sample_fixed_size_subsets(w: WeightVector, q: int, rng: np.random.Generator,
                              size: int, *,
                              budget: int | None = DEFAULT_BUDGET) -> np.ndarray:
    """Draw ``size`` independent q-subsets; returns a (size, N) bool mask.

    Indices are visited in order and index ``j`` joins with probability
    ``x_j * sigma_{r-1}(rest) / sigma_r(j..N)``, ``r`` being the number of
    slots still open.  All draws advance together, one index per step.
    """
    n = len(w)
    if q < 1:
        raise ValueError("set size q must be at least 1")
    if q > w.n_positive:
        raise InfeasibleSampleError(
            f"cannot draw {q} items from {w.n_positive} positive weights")
    _check_budget(n * (q + 1), budget)
    logx = w.log_weights
    suf = _log_suffix_table(logx, q)
    need = np.full(size, q, dtype=np.int64)
    chosen = np.zeros((size, n), dtype=bool)
    for j in range(n):
        if logx[j] == -np.inf:
            continue
        open_ = need > 0
        if not open_.any():
            break
        r = need[open_]
        logp = logx[j] + suf[j + 1, r - 1] - suf[j, r]
        take = rng.random(r.size) < np.exp(logp)
        rows = np.flatnonzero(open_)[take]
        chosen[rows, j] = True
        need[rows] -= 1
    return chosen


def sample_fixed_size_subset(w: WeightVector, q: int, rng: np.random.Generator, *,
                             budget: int | None = DEFAULT_BUDGET) -> np.ndarray:
    """One q-subset with P(S) = prod_{j in S} x_j / sigma_q; sorted indices."""
    mask = sample_fixed_size_subsets(w, q, rng, 1, budget=budget)
    return np.flatnonzero(mask[0])


class GroupedWeights:
    """A multiset holding ``counts[g]`` copies of the weight ``values[g]``.

    Subsets of a multiset with equal weights inside each group are
    described by how many items each group contributes; the sampler draws
    those counts exactly and leaves the choice of members (uniform within a
    group) to the caller.
    """

    def __init__(self, values, counts, *, log_values=None):
        counts = np.array(counts, dtype=np.int64).ravel()
        if log_values is None:
            values = np.array(values, dtype=float).ravel()
            if np.any(values <= 0) or not np.all(np.isfinite(values)):
                raise ValueError("group weights must be positive and finite")
            log_values = np.log(values)
        else:
            log_values = np.array(log_values, dtype=float).ravel()
        if log_values.shape != counts.shape:
            raise ValueError("values and counts differ in length")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        keep = counts > 0
        self.log_values = log_values[keep]
        self.counts = counts[keep]
        self.group_ids = np.flatnonzero(keep)
        self._tables: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._terms: dict[tuple[int, int], np.ndarray] = {}

    @property
    def size(self) -> int:
        return int(self.counts.sum())

    def _group_terms(self, g: int, p_max: int) -> np.ndarray:
        """log C(c_g, m) + m * log v_g for m = 0..min(c_g, p_max)."""
        key = (g, p_max)
        hit = self._terms.get(key)
        if hit is None:
            m = np.arange(min(int(self.counts[g]), p_max) + 1)
            c = self.counts[g]
            hit = (gammaln(c + 1) - gammaln(m + 1) - gammaln(c - m + 1)
                   + m * self.log_values[g])
            self._terms[key] = hit
        return hit

    def _convolve(self, prev: np.ndarray, terms: np.ndarray) -> np.ndarray:
        out = prev.copy()
        for m in range(1, terms.size):
            out[m:] = np.logaddexp(out[m:], prev[:-m] + terms[m])
        return out

    def tables(self, p_max: int, budget: int | None = DEFAULT_BUDGET):
        """Prefix and suffix log-ESP tables over groups, orders 0..p_max."""
        if p_max in self._tables:
            return self._tables[p_max]
        n_groups = self.counts.size
        cost = int(sum(min(int(c), p_max) + 1 for c in self.counts)) * (p_max + 1)
        _check_budget(cost, budget)
        pre = np.full((n_groups + 1, p_max + 1), -np.inf)
        suf = np.full((n_groups + 1, p_max + 1), -np.inf)
        pre[0, 0] = suf[n_groups, 0] = 0.0
        terms = [self._group_terms(g, p_max) for g in range(n_groups)]
        with np.errstate(invalid="ignore"):
            for g in range(n_groups):
                pre[g + 1] = self._convolve(pre[g], terms[g])
            for g in range(n_groups - 1, -1, -1):
                suf[g] = self._convolve(suf[g + 1], terms[g])
        self._tables[p_max] = (pre, suf)
        return pre, suf

    def log_esp(self, p: int, budget: int | None = DEFAULT_BUDGET) -> float:
        if not 0 <= p <= self.size:
            raise ValueError(f"order p must lie in [0, {self.size}], got {p}")
        pre, _ = self.tables(p, budget)
        return float(pre[-1, p])

    def group_inclusion(self, q: int,
                        budget: int | None = DEFAULT_BUDGET) -> np.ndarray:
        """Per-item inclusion probability for each group (summing
        ``counts * result`` gives ``q``)."""
        if not 1 <= q <= self.size:
            raise ValueError(f"set size q must lie in [1, {self.size}], got {q}")
        pre, suf = self.tables(q, budget)
        log_total = pre[-1, q]
        out = np.empty(self.counts.size)
        a = np.arange(q + 1)
        for g in range(self.counts.size):
            terms = self._group_terms(g, q)
            m = np.arange(1, terms.size)
            # log sigma of all other groups at order q - m
            idx = (q - m)[:, None] - a[None, :]
            rest_terms = np.where(idx >= 0,
                                  pre[g][None, :] + suf[g + 1][np.maximum(idx, 0)],
                                  -np.inf)
            with np.errstate(invalid="ignore", divide="ignore"):
                rest = logsumexp(rest_terms, axis=1)
                log_mean = logsumexp(terms[1:] + rest + np.log(m)) - log_total
            out[g] = math.exp(log_mean) / self.counts[g]
        return np.minimum(out, 1.0)

    def sample_counts(self, q: int, rng: np.random.Generator, size: int = 1,
                      budget: int | None = DEFAULT_BUDGET) -> np.ndarray:
        """Per-group draw counts, shape (size, n_groups), each row summing to q."""
        if q < 0 or q > self.size:
            raise InfeasibleSampleError(
                f"cannot draw {q} items from a pool of {self.size}")
        n_groups = self.counts.size
        out = np.zeros((size, n_groups), dtype=np.int64)
        if q == 0:
            return out
        _, suf = self.tables(q, budget)
        need = np.full(size, q, dtype=np.int64)
        for g in range(n_groups):
            terms = self._group_terms(g, q)
            if g == n_groups - 1:
                out[:, g] = need
                break
            m = np.arange(terms.size)
            for r in np.unique(need):
                rows = np.flatnonzero(need == r)
                if r == 0:
                    continue
                mm = m[m <= r]
                logp = terms[mm] + suf[g + 1, r - mm] - suf[g, r]
                p = np.exp(logp)
                cdf = np.cumsum(p)
                pick = np.searchsorted(cdf / cdf[-1], rng.random(rows.size),
                                       side="right")
                out[rows, g] = mm[np.minimum(pick, mm.size - 1)]
            need -= out[:, g]
        return out
