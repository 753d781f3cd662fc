import math

import numpy as np
import pytest

from fractalcap.capacity import CapacityPoint, HopEstimate
from fractalcap.experiment import (CSV_FIELDS, FIT_FIELDS, SweepConfig,
                                   combined_sigma, read_csv, run_sweep,
                                   stream_key, substream)

SMALL = SweepConfig(ns=tuple(2 ** k for k in range(10, 16)), trials=200,
                    replicates=2, seed=5)


@pytest.fixture(scope="module")
def small_sweep():
    return run_sweep(SMALL)


def test_substreams_are_keyed():
    a = substream(7, "trials", 1024, 2.5, 0).random(4)
    b = substream(7, "trials", 1024, 2.5, 0).random(4)
    c = substream(7, "trials", 1024, 2.5, 1).random(4)
    d = substream(8, "trials", 1024, 2.5, 0).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)
    assert 0 <= stream_key(("network", 1024, 0)) < 2 ** 64


def test_sweep_shape(small_sweep):
    res = small_sweep
    assert res.ok
    rows = res.rows()
    assert len(rows) == 18
    assert {r["trials"] for r in rows} == {400}
    assert sorted(res.fits) == [0.0, 2.5, 4.0]
    assert all(len(f.points) == 6 for f in res.fits.values())


def test_csv_round_trip(small_sweep):
    text = small_sweep.to_csv()
    assert text.splitlines()[0] == ",".join(CSV_FIELDS)
    back = read_csv(text)
    for r, orig in zip(back, small_sweep.rows()):
        for k in CSV_FIELDS:
            assert r[k] == orig[k] or (isinstance(orig[k], float) and math.isnan(orig[k]))
    fits = read_csv(small_sweep.fits_csv())
    assert list(fits[0]) == list(FIT_FIELDS)
    assert [f["expected_slope"] for f in fits] == [1.0, 0.5, 0.0]


def test_sweep_independent_of_worker_count(small_sweep):
    cfg = SweepConfig(ns=SMALL.ns[:3], trials=200, replicates=2, seed=5)
    one = run_sweep(cfg)
    many = run_sweep(cfg, workers=2)
    assert one.to_csv() == many.to_csv()
    # the same (n, beta, replicate) streams as the bigger sweep
    big = {(r["n"], r["beta"]): r["mean_hops"] for r in small_sweep.rows()}
    for r in one.rows():
        assert r["mean_hops"] == big[r["n"], r["beta"]]


def test_seed_changes_results():
    a = run_sweep(SweepConfig(ns=(1024, 2048, 4096), betas=(2.5,), trials=100,
                              replicates=1, seed=1))
    b = run_sweep(SweepConfig(ns=(1024, 2048, 4096), betas=(2.5,), trials=100,
                              replicates=1, seed=2))
    assert a.to_csv() != b.to_csv()


def test_failed_point_is_recorded(monkeypatch):
    import fractalcap.experiment as ex

    real = ex.estimate_mean_hops

    def flaky(exp, network, rng):
        if exp.network.n == 2048 and not exp.rule.is_uniform:
            raise RuntimeError("boom")
        return real(exp, network, rng)

    monkeypatch.setattr(ex, "estimate_mean_hops", flaky)
    res = run_sweep(SweepConfig(ns=(1024, 2048, 4096), betas=(0, 2.5), trials=50,
                                replicates=1))
    assert not res.ok
    assert res.status["n=2048,beta=2.5,replicate=0"] == "RuntimeError: boom"
    assert (2048, 2.5) not in res.points and (2048, 0) in res.points
    assert 2.5 not in res.fits and 0 in res.fits


def test_config_validation():
    with pytest.raises(ValueError):
        SweepConfig(ns=(1024, 1024))
    with pytest.raises(ValueError):
        SweepConfig(gamma=0.9)
    with pytest.raises(ValueError):
        SweepConfig(betas=(-1.0,))
    with pytest.raises(ValueError):
        SweepConfig(replicates=0)


def test_combined_sigma():
    # lambda standard errors 0.04 and 0.03, so 0.05 combined
    a = CapacityPoint(1024, 4.0, 4.0, 0.4, 0.0, 0.4)
    b = CapacityPoint(1024, 2.5, 3.0, 0.1, 0.0, 0.9)
    assert combined_sigma(a, b) == pytest.approx(0.3 / 0.05)
    assert combined_sigma(a, CapacityPoint(1024, 0, 1.0, 0.1, 0.0)) == pytest.approx(0.3 / 0.04)
    est = HopEstimate.merge([HopEstimate(2.0, 0.0, 10), HopEstimate(2.0, 0.0, 10)])
    assert est.mean == 2.0 and est.stderr == 0.0
