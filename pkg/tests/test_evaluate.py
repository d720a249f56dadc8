import numpy as np
import pytest
from scipy import stats

from conftest import voronoi_grid
from pef.dataset import MeasurementSet, gen_synthetic
from pef.errors import DataError
from pef.evaluate import compare_models, evaluate_model, logdist_predictor, pef_predictor
from pef.propagation import LogDistParams, PefParams
from pef.raster import RegionGrid


def _mset(rng, k=200):
    return MeasurementSet(tx=(0.0, 0.0), rx=rng.uniform(1, 50, (k, 2)),
                          pathloss=rng.uniform(60, 120, k))


def test_perfect_predictor_zero_error():
    rng = np.random.default_rng(0)
    mset = _mset(rng)
    lookup = {tuple(r): l for r, l in zip(mset.rx, mset.pathloss)}
    report = evaluate_model(mset, lambda rx: lookup[rx])
    assert report.rmse == 0.0
    assert report.mean_abs_error == 0.0
    assert np.all(report.error_cdf[:, 0] == 0.0)
    assert report.error_cdf[-1, 1] == 1.0


def test_constant_offset():
    rng = np.random.default_rng(1)
    mset = _mset(rng)
    lookup = {tuple(r): l for r, l in zip(mset.rx, mset.pathloss)}
    report = evaluate_model(mset, lambda rx: lookup[rx] - 2.0)
    assert report.rmse == pytest.approx(2.0, rel=1e-12)
    assert report.mean_abs_error == pytest.approx(2.0, rel=1e-12)


def test_report_invariants():
    rng = np.random.default_rng(2)
    mset = _mset(rng)
    report = evaluate_model(mset, lambda rx: 90.0)
    cdf = report.error_cdf
    assert np.all(np.diff(cdf[:, 0]) >= 0)
    assert np.all(np.diff(cdf[:, 1]) >= 0)
    assert cdf[-1, 1] == 1.0
    assert report.rmse ** 2 == pytest.approx(float(np.mean(report.residuals ** 2)),
                                             rel=1e-12)


def test_empty_set_rejected():
    with pytest.raises(DataError):
        mset = MeasurementSet(tx=(0, 0), rx=np.empty((0, 2)), pathloss=np.empty(0))
        evaluate_model(mset, lambda rx: 0.0)


def test_predictor_failure_propagates():
    mset = MeasurementSet(tx=(5.0, 5.0), rx=np.array([[5.2, 5.0]]),
                          pathloss=np.array([80.0]))
    grid = RegionGrid(np.zeros((10, 10), dtype=np.int32), 1.0, 1)
    predictor = pef_predictor(grid, (5.0, 5.0), d0=1.0,
                              params=PefParams(40.0, np.array([2.0]), 0.0))
    with pytest.raises(DataError, match="d0"):
        evaluate_model(mset, predictor)  # rx inside the close-in disc


def test_identical_predictions_tie():
    # n = 0 makes both models predict exactly C
    rng = np.random.default_rng(3)
    grid = RegionGrid(np.zeros((30, 30), dtype=np.int32), 1.0, 1)
    mset = MeasurementSet(tx=(15.0, 15.0), rx=rng.uniform(2, 28, (50, 2)),
                          pathloss=rng.uniform(60, 80, 50))
    comp = compare_models(mset, grid, PefParams(70.0, np.array([0.0]), 0.0),
                          LogDistParams(70.0, 0.0, 0.0, 1.0), d0=1.0)
    assert comp.rmse_delta == 0.0
    assert comp.winner == "tie"


def test_uniform_map_models_agree():
    rng = np.random.default_rng(4)
    grid = RegionGrid(np.zeros((40, 40), dtype=np.int32), 1.0, 1)
    tx = (20.0, 20.0)
    params = PefParams(45.0, np.array([2.3]), 0.0)
    mset = gen_synthetic(grid, tx, params, 1.0, 200, None, seed=8)
    comp = compare_models(mset, grid, params,
                          LogDistParams(45.0, 2.3, 0.0, 1.0), d0=1.0)
    assert abs(comp.rmse_delta) < 1e-9
    assert comp.pef.rmse < 1e-9  # noiseless generator, true model


def test_true_model_rmse_matches_generator_sigma():
    grid = voronoi_grid(40, 3, 2.0, seed=5)
    params = PefParams(60.0, np.array([1.5, 2.5, 3.5]), 5.0)
    tx = (40.0, 40.0)
    mset = gen_synthetic(grid, tx, params, 1.0, 4_000, None, seed=6)
    report = evaluate_model(mset, pef_predictor(grid, tx, 1.0, params))
    assert abs(report.rmse - 5.0) < 0.2
    # a distorted model scores strictly worse
    off = PefParams(60.0, np.array([1.5, 2.5, 3.5]) * 1.3, 5.0)
    worse = evaluate_model(mset, pef_predictor(grid, tx, 1.0, off))
    assert worse.rmse > report.rmse


def test_abs_error_cdf_matches_folded_normal():
    grid = voronoi_grid(40, 3, 2.0, seed=7)
    params = PefParams(60.0, np.array([1.5, 2.5, 3.5]), 4.0)
    tx = (40.0, 40.0)
    mset = gen_synthetic(grid, tx, params, 1.0, 10_000, None, seed=9)
    report = evaluate_model(mset, pef_predictor(grid, tx, 1.0, params))
    res = stats.kstest(np.abs(report.residuals), cdf=stats.foldnorm(c=0, scale=4.0).cdf)
    assert res.pvalue > 0.01


def test_logdist_predictor_distance_only():
    predictor = logdist_predictor((0.0, 0.0), LogDistParams(40.0, 2.0, 0.0, 1.0))
    assert predictor((10.0, 0.0)) == pytest.approx(60.0)
    assert predictor((0.0, 10.0)) == pytest.approx(60.0)
