import math

import numpy as np
import pytest

from fractalcap.grid import (CellIndex, GridSpec, cell_of, cells_of, hop_count,
                             hop_counts, min_reuse, protocol_model_ok,
                             protocol_violations, route, schedule_grid,
                             schedule_text, schedule_violations, slot_of,
                             tdma_schedule, transmission_range)


def test_transmission_range_examples():
    assert transmission_range(3) == pytest.approx(math.sqrt(math.log(3) / 3))
    assert transmission_range(3) == pytest.approx(0.60515, abs=1e-5)
    assert transmission_range(10_000) == pytest.approx(0.03035, abs=1e-5)
    rs = [transmission_range(n) for n in range(3, 2000)]
    assert all(a > b for a, b in zip(rs, rs[1:]))
    with pytest.raises(ValueError):
        transmission_range(2)
    with pytest.raises(ValueError):
        transmission_range(3, c=5.0)


def test_gridspec_defaults_and_reuse_guard():
    g = GridSpec(1024)
    assert g.reuse == 3 and g.n_slots == 9
    assert g.cells_per_side == math.ceil(1 / g.r)
    assert min_reuse(0.5, 1) == 3 and min_reuse(2, 1) == 4 and min_reuse(1, 0.5) == 6
    with pytest.raises(ValueError, match="T >= "):
        GridSpec(1024, reuse=2)


def test_cell_of_examples():
    g = GridSpec(1024)
    assert cell_of((0, 0), g) == CellIndex(0, 0)
    m = g.cells_per_side
    assert cell_of((1, 1), g) == CellIndex(m - 1, m - 1)
    # cell side 0.1: c1 chosen so that c1 * r = 0.1
    r = transmission_range(1024)
    g2 = GridSpec(1024, c1=0.1 / r)
    assert g2.cell_side == pytest.approx(0.1)
    assert tuple(cell_of((0.25, 0.73), g2)) == (2, 7)
    pts = np.random.default_rng(0).random((500, 2))
    assert [tuple(c) for c in cells_of(pts, g)] == [tuple(cell_of(p, g)) for p in pts]


def test_hop_count_examples():
    assert hop_count((4, 4), (4, 4)) == 1
    assert hop_count((2, 3), (5, 7)) == 7
    np.testing.assert_array_equal(hop_counts([[0, 0], [2, 3]], [[0, 0], [5, 7]]), [1, 7])


def test_route_length_and_steps():
    path = route((2, 3), (5, 1))
    assert len(path) - 1 == hop_count((2, 3), (5, 1))
    for a, b in zip(path, path[1:]):
        assert abs(a.i - b.i) + abs(a.j - b.j) == 1
    assert route((1, 1), (1, 1)) == [CellIndex(1, 1), CellIndex(1, 1)]


def test_ring_census():
    m = 41
    a = np.array([20, 20])
    ij = np.stack(np.meshgrid(np.arange(m), np.arange(m), indexing="ij"), -1).reshape(-1, 2)
    d = np.abs(ij - a).sum(axis=1)
    for x in range(1, 21):
        assert (d == x).sum() == 4 * x


def test_schedule_slots_and_concurrent_count():
    for m in (1, 7, 9, 30):
        for T in (3, 4):
            slots = schedule_grid(m, T)
            assert slots.min() >= 0 and slots.max() < T * T
            counts = np.bincount(slots.ravel(), minlength=T * T)
            assert counts.sum() == m * m
            assert counts.max() == math.ceil(m / T) ** 2
            assert slot_of((4, 5), T) == slots[4, 5] if m > 5 else True
    g = GridSpec(1024)
    assert tdma_schedule(g).shape == (g.cells_per_side,) * 2
    text = schedule_text(schedule_grid(4, 3))
    assert text.splitlines()[-1] == "0 3 6 0"


def test_protocol_model_examples():
    r = 0.1
    assert protocol_model_ok([((0, 0), (r, 0))], r=r, delta=1)
    assert not protocol_model_ok([((0, 0), (r * (1 + 1e-9), 0))], r=r, delta=1)
    # link length 0.1, foreign transmitter 0.15 from this receiver
    pairs = [((0.2, 0.5), (0.3, 0.5)), ((0.45, 0.5), (0.55, 0.5))]
    assert protocol_violations(pairs, r=0.2, delta=1) > 0
    assert not protocol_model_ok(pairs, r=0.2, delta=1)
    far = [((0.1, 0.1), (0.2, 0.1)), ((0.8, 0.8), (0.9, 0.8))]
    assert protocol_model_ok(far, r=0.2, delta=1)
    assert protocol_model_ok([], r=0.2, delta=1)
    with pytest.raises(ValueError):
        protocol_model_ok(far)


@pytest.mark.parametrize("delta", [0.5, 1.0, 2.0])
def test_schedule_soundness(delta):
    T = min_reuse(delta, 1.0)
    for m in (1, 2, 3, 8, 13, 30):
        assert schedule_violations(m, T, delta) == 0


def test_schedule_soundness_brute_force_cross_check():
    # random joint direction choices checked with the pairwise checker
    rng = np.random.default_rng(3)
    m, T, delta, r = 9, 3, 1.0, 1.0
    slots = schedule_grid(m, T)
    dirs = np.array([(1, 0), (-1, 0), (0, 1), (0, -1)])
    for slot in range(T * T):
        cells = np.argwhere(slots == slot)
        for _ in range(20):
            pairs = []
            for c in cells:
                ok = [d for d in dirs if np.all((c + d >= 0) & (c + d < m))]
                d = ok[rng.integers(len(ok))]
                pairs.append(((c + 0.5) * r, (c + d + 0.5) * r))
            assert protocol_model_ok(pairs, r=r, delta=delta)


def test_schedule_fault_detected():
    assert schedule_violations(12, 2, 1.0) > 0
