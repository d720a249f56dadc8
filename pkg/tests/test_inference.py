import math

import numpy as np
import pytest
from scipy import integrate

from conftest import ref_params
from pef.dataset import gen_synthetic
from pef.errors import DataError, NumericalError
from pef.inference import (DesignMatrix, FitOptions, fit_ml, fit_ml_logdist,
                           loglik_gradient, ls_fit_logdist, ls_init, normal_hazard,
                           truncated_loglik)
from pef.propagation import PefParams

# frozen with 60-digit erfc evaluations of exp(-z^2/2)/int_z^inf exp(-t^2/2)dt
HAZARD_REF = {
    0.0: 0.7978845608028654,       # sqrt(2/pi)
    40.0: 40.02496884720726,
    8.0: 8.121368112236113,
    -5.0: 1.4867199409049057e-6,
}
# -log(sqrt(2 pi)) - log(1 - Phi(-1)), frozen at 40 digits
POINT_LL_REF = -0.7461847541812229


def test_normal_hazard_frozen_values():
    for z, ref in HAZARD_REF.items():
        assert normal_hazard(z) == pytest.approx(ref, rel=1e-12)
    assert normal_hazard(-40.0) == 0.0


def test_normal_hazard_extremes_and_arrays():
    assert normal_hazard(1e6) == pytest.approx(1e6, rel=1e-6)
    assert normal_hazard(-1e6) == 0.0
    arr = normal_hazard(np.array([0.0, 40.0]))
    assert isinstance(arr, np.ndarray)
    np.testing.assert_allclose(arr, [HAZARD_REF[0.0], HAZARD_REF[40.0]], rtol=1e-12)
    with pytest.raises(DataError, match="finite"):
        normal_hazard(float("nan"))
    with pytest.raises(DataError, match="finite"):
        normal_hazard(np.array([1.0, np.inf]))


def _design(coeffs, losses, level):
    return DesignMatrix(np.asarray(coeffs, float), np.asarray(losses, float), level)


def test_truncated_loglik_matches_untruncated_when_level_far():
    rng = np.random.default_rng(0)
    k, i = 50, 2
    D = rng.uniform(0, 30, (k, i))
    params = PefParams(60.0, np.array([2.0, 3.0]), 5.0)
    mu = params.intercept_c + D @ params.exponents
    losses = mu + rng.normal(0, 5.0, k)
    far = float(mu.max() + 40 * 5.0)
    got = truncated_loglik(_design(D, losses, far), params)
    plain = float(np.sum(-np.log(np.sqrt(2 * np.pi) * 5.0)
                         - (losses - mu) ** 2 / (2 * 5.0 ** 2)))
    assert got == pytest.approx(plain, abs=1e-9)
    # infinite level is the exact untruncated likelihood
    got_inf = truncated_loglik(_design(D, losses, math.inf), params)
    assert got_inf == pytest.approx(plain, rel=1e-12)


def test_truncated_loglik_point_oracle():
    # three identical points at l = mu, sigma = 1, L = mu + 1
    mu = 90.0
    design = _design(np.zeros((3, 1)), [mu, mu, mu], mu + 1.0)
    params = PefParams(mu, np.array([1.0]), 1.0)
    assert truncated_loglik(design, params) == pytest.approx(3 * POINT_LL_REF, rel=1e-12)


def test_truncated_loglik_validation():
    design = _design(np.zeros((3, 1)), [1.0, 2.0, 3.0], 10.0)
    with pytest.raises(DataError, match="sigma"):
        truncated_loglik(design, PefParams(0.0, np.array([1.0]), 0.0))
    with pytest.raises(DataError, match="exponents"):
        truncated_loglik(design, PefParams(0.0, np.array([1.0, 2.0]), 1.0))
    with pytest.raises(DataError, match="truncation"):
        _design(np.zeros((3, 1)), [1.0, 2.0, 10.0], 10.0)
    with pytest.raises(DataError, match="identify"):
        _design(np.zeros((2, 1)), [1.0, 2.0], 10.0)


def test_truncated_density_normalizes():
    rng = np.random.default_rng(8)
    for _ in range(10):
        mu = float(rng.uniform(40, 140))
        sigma = float(rng.uniform(0.5, 12))
        level = mu - float(rng.uniform(-6, 6)) * sigma
        design_one = lambda l: _design(np.zeros((3, 1)), [l, l, l], level)
        params = PefParams(mu, np.array([1.0]), sigma)

        def pdf(l):
            return math.exp(truncated_loglik(design_one(l), params) / 3.0)

        split = min(mu, level) - 10 * sigma
        mass, _ = integrate.quad(pdf, -np.inf, split)
        inner = [p for p in (mu,) if split < p < level]
        upper, _ = integrate.quad(pdf, split, level, points=inner, limit=200)
        assert mass + upper == pytest.approx(1.0, abs=1e-6)


def _fd_gradient(design, params, rel=1e-6):
    i = params.n_types
    theta = np.concatenate((params.exponents, [params.intercept_c, params.sigma]))
    out = np.empty_like(theta)
    for j in range(theta.size):
        h = rel * max(1.0, abs(theta[j]))
        up, down = theta.copy(), theta.copy()
        up[j] += h
        down[j] -= h
        f_up = truncated_loglik(design, PefParams(up[i], up[:i], up[i + 1]))
        f_down = truncated_loglik(design, PefParams(down[i], down[:i], down[i + 1]))
        out[j] = (f_up - f_down) / (2 * h)
    return out


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(12)
    for _ in range(25):
        k = int(rng.integers(10, 200))
        i = int(rng.integers(1, 5))
        D = rng.uniform(0, 30, (k, i))
        params_true = PefParams(float(rng.uniform(30, 90)),
                                rng.uniform(0.5, 4.5, i), float(rng.uniform(2, 9)))
        mu = params_true.intercept_c + D @ params_true.exponents
        shift = float(rng.uniform(-8, 8))
        level = float(np.median(mu) + shift * params_true.sigma)
        losses = mu + rng.normal(0, params_true.sigma, k)
        keep = losses < level
        if keep.sum() < i + 2:
            continue
        design = _design(D[keep], losses[keep], level)
        probe = PefParams(params_true.intercept_c + float(rng.normal(0, 2)),
                          params_true.exponents * float(rng.uniform(0.8, 1.2)),
                          params_true.sigma * float(rng.uniform(0.7, 1.4)))
        analytic = loglik_gradient(design, probe)
        fd = _fd_gradient(design, probe)
        rel_err = np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1.0)
        assert rel_err < 1e-6


def test_gradient_reduces_to_untruncated_score():
    rng = np.random.default_rng(3)
    D = rng.uniform(0, 20, (30, 1))
    params = PefParams(50.0, np.array([2.0]), 4.0)
    mu = 50.0 + D[:, 0] * 2.0
    losses = mu + rng.normal(0, 4.0, 30)
    design = _design(D, losses, float(mu.max() + 200))
    grad = loglik_gradient(design, params)
    assert grad[1] == pytest.approx(float(np.sum(losses - mu)) / 16.0, rel=1e-9)


def test_gradient_small_at_truth_for_large_sample():
    rng = np.random.default_rng(77)
    k = 100_000
    d = 10 ** rng.uniform(0, 2, k)  # 1 m .. 100 m
    x = 10 * np.log10(d)
    params = PefParams(74.95, np.array([2.0]), 6.8)
    losses = 74.95 + 2.0 * x + rng.normal(0, 6.8, k)
    design = _design(x[:, None], losses, math.inf)
    grad = loglik_gradient(design, params)
    assert float(np.linalg.norm(grad)) / k < 0.01


def test_ls_fit_exact_on_noiseless_line():
    d = np.array([1.0, 10.0, 100.0, 1000.0])
    losses = 40.0 + 10 * 3.0 * np.log10(d)
    ld = ls_fit_logdist(d, losses, d0=1.0)
    assert ld.n == pytest.approx(3.0, abs=1e-12)
    assert ld.intercept_c == pytest.approx(40.0, abs=1e-10)
    assert ld.sigma == pytest.approx(0.0, abs=1e-10)


def test_ls_fit_recovers_under_noise():
    rng = np.random.default_rng(5)
    d = 10 ** rng.uniform(0, 4, 100_000)
    losses = 30.0 + 10 * 2.2 * np.log10(d) + rng.normal(0, 6.8, d.size)
    ld = ls_fit_logdist(d, losses, 1.0)
    assert abs(ld.n - 2.2) < 0.05
    assert abs(ld.sigma - 6.8) < 0.1


def test_ls_fit_truncation_bias_direction():
    rng = np.random.default_rng(6)
    d = 10 ** rng.uniform(0, 4, 100_000)
    losses = 74.95 + 10 * 2.12 * np.log10(d) + rng.normal(0, 6.8, d.size)
    keep = losses < 140.0
    ld = ls_fit_logdist(d[keep], losses[keep], 1.0)
    assert ld.n < 2.12 - 0.02  # clearly below, not sampling noise


def test_ls_fit_validation():
    with pytest.raises(DataError, match="identify"):
        ls_fit_logdist([1.0, 2.0], [1.0, 2.0], 0.5)
    with pytest.raises(DataError, match="degenerate"):
        ls_fit_logdist([5.0, 5.0, 5.0], [1.0, 2.0, 3.0], 1.0)
    with pytest.raises(DataError, match="below"):
        ls_fit_logdist([0.5, 2.0, 3.0], [1.0, 2.0, 3.0], 1.0)


def _synthetic_logdist(n_true, k, seed, level=140.0, c=74.95, sigma=6.8):
    rng = np.random.default_rng(seed)
    kept_d, kept_l = [], []
    while sum(a.size for a in kept_d) < k:
        d = 10 ** rng.uniform(0, 4, max(k, 10_000))
        losses = c + 10 * n_true * np.log10(d) + rng.normal(0, sigma, d.size)
        ok = losses < level if math.isfinite(level) else np.ones(d.size, bool)
        kept_d.append(d[ok])
        kept_l.append(losses[ok])
    return np.concatenate(kept_d)[:k], np.concatenate(kept_l)[:k]


def test_ml_logdist_recovers_truncated_exponent():
    d, losses = _synthetic_logdist(2.12, 100_000, seed=42)
    report = fit_ml_logdist(d, losses, 1.0, 140.0)
    assert report.converged
    assert abs(report.params.n - 2.12) < 0.05
    ls = ls_fit_logdist(d, losses, 1.0)
    assert abs(report.params.n - 2.12) < abs(ls.n - 2.12)


def test_ml_equals_ls_when_untruncated():
    d, losses = _synthetic_logdist(2.0, 20_000, seed=9, level=math.inf)
    ls = ls_fit_logdist(d, losses, 1.0)
    report = fit_ml_logdist(d, losses, 1.0, None)
    assert abs(report.params.n - ls.n) < 0.01
    assert abs(report.params.intercept_c - ls.intercept_c) < 0.01


def test_ml_logdist_identifiability():
    with pytest.raises(DataError, match="identify"):
        fit_ml_logdist([1.0, 2.0], [50.0, 60.0], 0.5, 140.0)
    # truncation dropping everything is an identifiability failure too
    with pytest.raises(DataError, match="identify"):
        fit_ml_logdist([1.0, 2.0, 4.0, 8.0], [150.0, 160.0, 170.0, 180.0], 0.5, 140.0)


def test_fit_ml_single_type_matches_logdist_route():
    d, losses = _synthetic_logdist(2.4, 5_000, seed=13)
    x = 10 * np.log10(d)
    design = _design(x[:, None], losses, 140.0)
    direct = fit_ml(design)
    routed = fit_ml_logdist(d, losses, 1.0, 140.0)
    assert direct.params.exponents[0] == pytest.approx(routed.params.n, abs=1e-6)
    assert direct.params.intercept_c == pytest.approx(routed.params.intercept_c, abs=1e-6)
    assert direct.params.sigma == pytest.approx(routed.params.sigma, abs=1e-6)


def test_fit_ml_self_consistent_at_optimum(five_type_grid):
    truth = ref_params()
    mset = gen_synthetic(five_type_grid, (400.0, 400.0), truth, 1.0, 3_000,
                         140.0, seed=21)
    design = DesignMatrix.from_measurements(five_type_grid, mset, 1.0, 140.0)
    first = fit_ml(design)
    assert first.converged
    again = fit_ml(design, init=first.params)
    assert again.converged and again.iterations <= 5
    assert np.max(np.abs(again.params.exponents - first.params.exponents)) < 0.01
    assert abs(again.params.intercept_c - first.params.intercept_c) < 0.01
    # truth-initialized ascent lands on the same optimum
    from_truth = fit_ml(design, init=truth)
    assert np.max(np.abs(from_truth.params.exponents - first.params.exponents)) < 0.01


def test_fit_ml_consistency_error_shrinks_with_k():
    medians = []
    for k in (1_000, 10_000, 100_000):
        errs = []
        for trial in range(5):
            d, losses = _synthetic_logdist(2.12, k, seed=100 * trial + k)
            report = fit_ml_logdist(d, losses, 1.0, 140.0)
            errs.append(abs(report.params.n - 2.12))
        medians.append(float(np.median(errs)))
    assert medians[0] > medians[1] > medians[2]


def test_fit_ml_likelihood_never_decreases():
    d, losses = _synthetic_logdist(2.0, 2_000, seed=3)
    x = 10 * np.log10(d)
    design = _design(x[:, None], losses, 140.0)
    init = ls_init(design)
    ll0 = truncated_loglik(design, init)
    report = fit_ml(design, init=init)
    assert report.log_likelihood >= ll0
    assert report.log_likelihood == pytest.approx(
        truncated_loglik(design, report.params), rel=1e-12)
    # accepted steps are monotone: reruns capped at k iterations trace a
    # non-decreasing likelihood sequence
    lls = [fit_ml(design, init=init, options=FitOptions(max_iter=k)).log_likelihood
           for k in range(1, 12)]
    assert all(b >= a for a, b in zip(lls, lls[1:]))


def test_fit_ml_sigma_collapse_flagged():
    x = np.linspace(0, 20, 40)
    losses = 50.0 + 2.0 * x  # exact line: sigma wants 0
    design = _design(x[:, None], losses, math.inf)
    with pytest.raises(NumericalError, match="sigma"):
        fit_ml(design, init=PefParams(50.0, np.array([2.0]), 0.5))


def test_fit_ml_nonfinite_init_flagged():
    design = _design(np.linspace(0, 20, 10)[:, None],
                     np.linspace(50, 90, 10), 100.0)
    huge = PefParams(1e300, np.array([1e300]), 1.0)
    with pytest.raises(NumericalError, match="non-finite"):
        fit_ml(design, init=huge)


def test_fit_ml_fixed_step_mode_improves():
    d, losses = _synthetic_logdist(2.0, 500, seed=8)
    x = 10 * np.log10(d)
    design = _design(x[:, None], losses, 140.0)
    init = ls_init(design)
    ll0 = truncated_loglik(design, init)
    report = fit_ml(design, init=init,
                    options=FitOptions(step=1e-6, max_iter=300, fixed_step=True))
    assert report.iterations == 300
    assert report.log_likelihood > ll0


def test_design_from_measurements_drops_truncated(five_type_grid):
    truth = ref_params()
    mset = gen_synthetic(five_type_grid, (400.0, 400.0), truth, 1.0, 300,
                         None, seed=2)
    level = float(np.percentile(mset.pathloss, 80))
    design = DesignMatrix.from_measurements(five_type_grid, mset, 1.0, level)
    assert design.k == int(np.sum(mset.pathloss < level))
    assert design.truncation == level
    # row sums telescope to 10*log10(d/d0)
    kept = mset.pathloss < level
    dist = mset.distances()[kept]
    np.testing.assert_allclose(design.coeffs.sum(axis=1),
                               10 * np.log10(dist / 1.0), rtol=1e-9)


def test_ls_init_broadcasts_slope():
    d, losses = _synthetic_logdist(2.2, 2_000, seed=4)
    x = 10 * np.log10(d)
    design = DesignMatrix(np.column_stack((0.25 * x, 0.75 * x)), losses, 140.0)
    init = ls_init(design)
    assert init.n_types == 2
    assert init.exponents[0] == init.exponents[1]
    assert init.sigma > 0
