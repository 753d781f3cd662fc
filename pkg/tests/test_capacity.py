import itertools
import math

import numpy as np
import pytest

from fractalcap.capacity import (ANNEALED, CONTACTS, EUCLIDEAN, QUENCHED,
                                 DestinationRule, ExperimentConfig, HopEstimate,
                                 NoDestinationError, capacity_point,
                                 contact_probabilities, destination_distribution,
                                 estimate_mean_hops, exact_mean_hops_small,
                                 exact_source_hops, expected_hop_slope,
                                 fit_loglog, fit_scaling, inclusion_limit_check,
                                 pick_destination, theory_reference,
                                 throughput_upper_bound)
from fractalcap.grid import GridSpec, cells_of, hop_counts, transmission_range
from fractalcap.netgen import (ContactModel, NetworkConfig, SocialNetwork,
                               eligible_pool, generate_network)
from fractalcap.sympoly import WeightVector


def hand_network(positions, degrees, contacts=None):
    positions = np.asarray(positions, dtype=float)
    n = positions.shape[0]
    contacts = contacts or [[] for _ in range(n)]
    return SocialNetwork(NetworkConfig(n, 2.5, 2.6), positions, np.asarray(degrees),
                         contacts, ContactModel(2.6))


@pytest.fixture(scope="module")
def net50():
    return generate_network(NetworkConfig(50, 2.5, 2.6, 2))


@pytest.fixture(scope="module")
def net100():
    return generate_network(NetworkConfig(100, 2.5, 2.6, 5))


# -- destination choice ------------------------------------------------------------

def test_two_contacts_beta3():
    net = hand_network([(0.5, 0.5), (0.6, 0.5), (0.5, 0.7)], [3, 1, 1],
                       [[1, 2], [], []])
    rule = DestinationRule.powerlaw(3, distance=EUCLIDEAN)
    np.testing.assert_allclose(contact_probabilities(net, 0, [1, 2], rule),
                               [8 / 9, 1 / 9], rtol=1e-12)
    rng = np.random.default_rng(0)
    draws = np.array([pick_destination(net, 0, [1, 2], rule, rng) for _ in range(9000)])
    assert abs((draws == 1).mean() - 8 / 9) < 4 * math.sqrt(8 / 81 / 9000)


def test_single_contact_and_beta0():
    net = hand_network([(0.1, 0.1), (0.9, 0.9), (0.2, 0.3), (0.4, 0.4)], [4, 1, 1, 1])
    rng = np.random.default_rng(1)
    assert pick_destination(net, 0, [2], DestinationRule.powerlaw(5), rng) == 2
    flat = contact_probabilities(net, 0, [1, 2, 3], DestinationRule.powerlaw(0, distance=EUCLIDEAN))
    np.testing.assert_allclose(flat, 1 / 3, rtol=1e-15)
    with pytest.raises(NoDestinationError):
        pick_destination(net, 0, [], DestinationRule(), rng)


@pytest.mark.parametrize("normalization", ["pool", CONTACTS])
def test_beta0_equals_uniform_distribution(net50, normalization):
    g = GridSpec(50)
    tol = 1e-12 if normalization == "pool" else 1e-9
    for s in range(50):
        try:
            ids_u, p_u = destination_distribution(net50, s, DestinationRule(), g)
        except NoDestinationError:
            continue
        ids_b, p_b = destination_distribution(
            net50, s, DestinationRule.powerlaw(0, normalization=normalization), g)
        np.testing.assert_array_equal(ids_u, ids_b)
        np.testing.assert_allclose(p_b, p_u, rtol=tol, atol=1e-15)


# -- exact evaluation vs brute force ----------------------------------------------------

def _brute_source(net, grid, s, rule):
    """Enumerate contact sets of the source and average the destination hops."""
    model = net.model
    if net.uses_fallback(s):
        model = ContactModel(model.epsilon, "allow-equal")
    w, ids = eligible_pool(s, net, model)
    q = min(int(net.degrees[s]), len(w))
    cells = cells_of(net.positions, grid)
    hops = hop_counts(cells[s], cells[ids]).astype(float)
    if rule.distance == "ring":
        dist = hops * grid.cell_side
    else:
        dist = np.hypot(*(net.positions[ids] - net.positions[s]).T)
    a = dist ** -rule.beta
    total = num = 0.0
    incl = np.zeros(len(w))
    for c in itertools.combinations(range(len(w)), q):
        c = list(c)
        pw = float(np.prod(w.weights[c]))
        total += pw
        incl[c] += pw
        if rule.is_uniform:
            num += pw * hops[c].mean()
        elif rule.normalization == CONTACTS:
            num += pw * (a[c] @ hops[c]) / a[c].sum()
    if rule.is_uniform or rule.normalization == CONTACTS:
        return num / total
    pi = incl / total
    return float((pi * a) @ hops / (pi * a).sum())


@pytest.mark.parametrize("rule", [
    DestinationRule(),
    DestinationRule.powerlaw(2.5),
    DestinationRule.powerlaw(2.5, distance=EUCLIDEAN),
    DestinationRule.powerlaw(1.5, normalization=CONTACTS),
    DestinationRule.powerlaw(3.5, normalization=CONTACTS, distance=EUCLIDEAN),
], ids=["uniform", "pool-ring", "pool-euclid", "contacts-ring", "contacts-euclid"])
def test_exact_source_hops_matches_enumeration(net50, rule):
    g = GridSpec(50)
    checked = 0
    for s in range(50):
        if net50.degrees[s] > 3:
            continue
        try:
            exact = exact_source_hops(net50, g, s, rule)
        except NoDestinationError:
            continue
        assert exact == pytest.approx(_brute_source(net50, g, s, rule), rel=1e-8)
        checked += 1
    assert checked >= 20


def test_exact_two_nodes():
    # grid for r(3); node 1 sits three cells right of node 0
    g = GridSpec(3, c1=0.2 / transmission_range(3))
    net = hand_network([(0.05, 0.05), (0.65, 0.05)], [2, 1])
    assert exact_mean_hops_small(net, g, DestinationRule()) == pytest.approx(3.0)
    net = hand_network([(0.05, 0.05), (0.25, 0.05)], [2, 1])
    assert exact_mean_hops_small(net, g, DestinationRule.powerlaw(2)) == pytest.approx(1.0)


def test_exact_beta0_equals_uniform(net100):
    g = GridSpec(100)
    a = exact_mean_hops_small(net100, g, DestinationRule())
    b = exact_mean_hops_small(net100, g, DestinationRule.powerlaw(0))
    assert a == pytest.approx(b, rel=1e-12)


def test_monotone_in_beta(net100):
    g = GridSpec(100)
    cells = cells_of(net100.positions, g)
    betas = [0, 0.5, 1, 2, 2.5, 3, 4, 6]
    # realized contact set with at least two distinct hop distances
    s = next(i for i, c in enumerate(net100.contacts)
             if len(set(hop_counts(cells[i], cells[c]).tolist())) >= 2)
    cs = net100.contacts[s]
    h = hop_counts(cells[s], cells[cs])
    vals = [contact_probabilities(net100, s, cs, DestinationRule.powerlaw(b), g) @ h
            for b in betas]
    assert all(x >= y - 1e-12 for x, y in zip(vals, vals[1:]))
    assert vals[0] > vals[-1]
    pooled = [exact_source_hops(net100, g, s, DestinationRule.powerlaw(b)) for b in betas]
    assert all(x >= y - 1e-12 for x, y in zip(pooled, pooled[1:]))


# -- Monte Carlo -----------------------------------------------------------------

def test_all_in_one_cell():
    cfg = NetworkConfig(60, 2.5, 2.6, 1)
    r = transmission_range(60)
    g = GridSpec(60, c1=1.0 / r)
    assert g.cells_per_side == 1
    exp = ExperimentConfig(cfg, g, DestinationRule.powerlaw(2.5), trials=2000)
    est = estimate_mean_hops(exp)
    assert est.mean == 1.0 and est.stderr == 0.0


@pytest.mark.parametrize("rule", [
    DestinationRule(),
    DestinationRule.powerlaw(2.5),
    DestinationRule.powerlaw(4, distance=EUCLIDEAN),
], ids=["uniform", "pool", "pool-euclid"])
def test_mc_annealed_matches_exact(net100, rule):
    g = GridSpec(100)
    exact = exact_mean_hops_small(net100, g, rule)
    exp = ExperimentConfig(net100.config, g, rule, 20_000, ensemble=ANNEALED)
    est = estimate_mean_hops(exp, net100, np.random.default_rng(3))
    assert abs(est.mean - exact) <= 3 * est.stderr


def test_mc_contacts_rule_matches_exact():
    net = generate_network(NetworkConfig(40, 2.5, 2.6, 7))
    g = GridSpec(40)
    rule = DestinationRule.powerlaw(2.5, normalization=CONTACTS)
    exact = exact_mean_hops_small(net, g, rule)
    exp = ExperimentConfig(net.config, g, rule, 20_000, ensemble=ANNEALED)
    est = estimate_mean_hops(exp, net, np.random.default_rng(4))
    assert abs(est.mean - exact) <= 3 * est.stderr


def test_mc_quenched_matches_realized_sets(net100):
    # oracle: average over sources of the mean hop count to its own contacts
    g = GridSpec(100)
    cells = cells_of(net100.positions, g)
    per_source = [hop_counts(cells[s], cells[c]).mean()
                  for s, c in enumerate(net100.contacts) if len(c)]
    exact = float(np.mean(per_source))
    exp = ExperimentConfig(net100.config, g, DestinationRule(), 30_000, ensemble=QUENCHED)
    est = estimate_mean_hops(exp, net100, np.random.default_rng(5), record=True)
    assert abs(est.mean - exact) <= 3 * est.stderr
    assert est.samples.shape == (est.trials, 2)


def test_mc_deterministic_given_seed(net100):
    exp = ExperimentConfig(net100.config, None, DestinationRule.powerlaw(2.5), 500, seed=9)
    a = estimate_mean_hops(exp, net100)
    b = estimate_mean_hops(exp, net100)
    assert a.mean == b.mean and a.stderr == b.stderr


def test_hop_estimate_merge_is_pooled():
    rng = np.random.default_rng(2)
    parts = [rng.integers(1, 9, size=k).astype(float) for k in (10, 300, 41)]
    merged = HopEstimate.merge(HopEstimate.from_hops(p) for p in parts)
    allh = np.concatenate(parts)
    assert merged.mean == pytest.approx(allh.mean(), rel=1e-14)
    assert merged.stderr == pytest.approx(allh.std(ddof=1) / math.sqrt(allh.size), rel=1e-12)
    assert merged.trials == allh.size


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(NetworkConfig(10, 2.5, 2.6), trials=0)
    with pytest.raises(ValueError):
        DestinationRule.powerlaw(-1)
    with pytest.raises(ValueError):
        ExperimentConfig(NetworkConfig(10, 2.5, 2.6), GridSpec(20))


# -- bound, theory and fits --------------------------------------------------------

def test_throughput_bound_examples():
    c = 0.1 / math.sqrt(math.log(100) / 100)
    g = GridSpec(100, range_const=c)
    assert g.r == pytest.approx(0.1) and g.reuse == 3
    assert throughput_upper_bound(100, 10, g) == pytest.approx(1 / 90, rel=1e-12)
    assert throughput_upper_bound(100, 20, g) == pytest.approx(1 / 180, rel=1e-12)
    with pytest.raises(ValueError):
        throughput_upper_bound(100, 0.5, g)


def test_theory_reference_examples():
    assert theory_reference(10_000, 0) == pytest.approx(0.003295, abs=5e-7)
    assert theory_reference(10_000, 4) == pytest.approx(0.10857, abs=5e-6)
    for n in (100, 10_000, 2 ** 20):
        ln = math.log(n)
        assert theory_reference(n, 3) == pytest.approx(1 / math.sqrt(ln ** 2), rel=1e-12)
        assert theory_reference(n, 3) == pytest.approx(theory_reference(n, 3.0001), rel=1e-3)
        assert theory_reference(n, 2) == pytest.approx(theory_reference(n, 2.0001), rel=1e-3)


@pytest.mark.parametrize("beta", [0, 1.5, 2.5, 2.8, 3, 4])
def test_bound_reproduces_theory_orders(beta):
    # E[X] = (1/r)^slope fed through the bound tracks the theory branch
    ratios = []
    for n in (2 ** 10, 2 ** 14, 2 ** 20, 2 ** 30):
        g = GridSpec(n)
        e = (1 / g.r) ** expected_hop_slope(beta)
        ratios.append(throughput_upper_bound(n, max(e, 1.0), g) / theory_reference(n, beta))
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-9)


def test_fit_examples():
    ns = [2 ** k for k in range(10, 16)]
    fit = fit_scaling([(n, 1 / transmission_range(n)) for n in ns])
    assert fit.slope == pytest.approx(1.0, abs=1e-12) and fit.r_squared == pytest.approx(1.0)
    flat = fit_scaling([(n, 3.0) for n in ns])
    assert flat.slope == 0.0 and flat.degenerate
    with pytest.raises(ValueError):
        fit_scaling([(1024, 2.0), (2048, 3.0)])
    with pytest.raises(ValueError):
        fit_scaling([(1024, 2.0), (1024, 3.0), (4096, 1.0)])
    res = fit_loglog([1, 2, 4, 8], [3, 6, 12, 24])
    assert res.slope == pytest.approx(1.0) and len(res.points) == 4


def test_expected_slopes():
    assert [expected_hop_slope(b) for b in (0, 2, 2.5, 3, 4)] == [1, 1, 0.5, 0, 0]


def test_capacity_point():
    g = GridSpec(1024)
    p = capacity_point(1024, 2.5, HopEstimate(4.0, 0.1, 100), g)
    assert p.lambda_max == pytest.approx(throughput_upper_bound(1024, 4.0, g))
    assert p.lambda_stderr == pytest.approx(p.lambda_max * 0.025)


# -- large-pool limit --------------------------------------------------------------

def test_limit_equal_weights_exact():
    rep = inclusion_limit_check(WeightVector(np.ones(300)), 40)
    np.testing.assert_allclose(rep.ratios, 1.0, rtol=1e-12)


def test_limit_large_and_small_q():
    rng = np.random.default_rng(11)
    k = np.arange(1, 10_001, dtype=float)
    pmf = k ** -2.5 / np.sum(k ** -2.5)
    degrees = rng.choice(k, size=500, p=pmf)
    w = WeightVector(degrees ** -2.6)
    big = inclusion_limit_check(w, 64)
    assert 0.5 <= big.median <= 2
    assert big.ratios.sum() == pytest.approx(500, rel=1e-9)
    small = inclusion_limit_check(w, 2)
    assert not small.within(0.9, 1.1)
