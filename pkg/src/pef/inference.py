"""Parameter estimation from (possibly truncated) path loss data.

Measurements carry a hard right truncation: losses at or above a level L
never appear, so ordinary least squares on the log-distance regressor is
biased toward shallow slopes. Estimation therefore maximizes the
truncated-Gaussian log-likelihood

    sum_k [ -log(sqrt(2 pi) sigma) - (l_k - mu_k)^2 / (2 sigma^2)
            - log(1 - Phi((mu_k - L) / sigma)) ]

with mu_k = C + sum_i D_ki * n_i, by gradient ascent with a backtracking
step. The analytic gradient needs the Gaussian tail hazard
exp(-z^2/2) / int_z^inf exp(-t^2/2) dt, evaluated through erfcx so deep
truncation neither overflows nor underflows.

The returned gradient is the ascent direction of the log-likelihood; the
sign was pinned against central finite differences.

Internally the ascent runs under a fixed linear change of variables:
columns are centered and scaled, sigma moves on the log scale, and the
remaining parameter coupling is absorbed by a constant metric taken from
the curvature at the starting point. None of this moves any stationary
point; it keeps the iteration count flat in the conditioning of the raw
design, which otherwise runs into the thousands for strongly truncated
data. Convergence is still judged on the raw-space gradient. A fixed-step
mode without backtracking or reparameterization is available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from .dataset import MeasurementSet
from .errors import DataError, NumericalError
from .pathtrace import _accumulate, _trace_runs, _validate_geometry
from .propagation import LogDistParams, PefParams
from .raster import RegionGrid

_LOG_2PI = math.log(2.0 * math.pi)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_SIGMA_FLOOR = 1e-6  # dB; reaching it means the model degenerated
_MIN_STEP = 1e-18


@dataclass
class DesignMatrix:
    """Per-point coefficient rows, observed losses, and the truncation level.

    ``truncation`` may be +inf for untruncated data. Every loss must lie
    strictly below it, and K >= I + 2 so the I exponents plus C and sigma
    stay identifiable.
    """

    coeffs: np.ndarray
    losses: np.ndarray
    truncation: float

    def __post_init__(self) -> None:
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        self.losses = np.asarray(self.losses, dtype=np.float64).reshape(-1)
        self.truncation = float(self.truncation)
        if self.coeffs.ndim != 2:
            raise DataError("design coefficients must be a (K, I) matrix")
        if self.coeffs.shape[0] != self.losses.size:
            raise DataError("design row count and loss count differ")
        if not np.isfinite(self.coeffs).all() or not np.isfinite(self.losses).all():
            raise DataError("design entries must be finite")
        if math.isnan(self.truncation) or self.truncation == -math.inf:
            raise DataError("truncation level must be a number or +inf")
        if self.losses.size and self.losses.max() >= self.truncation:
            raise DataError(
                f"loss {self.losses.max():.6g} at or above truncation level {self.truncation:.6g}"
            )
        if self.k < self.n_types + 2:
            raise DataError(
                f"{self.k} points cannot identify {self.n_types} exponents plus C and sigma"
            )

    @property
    def k(self) -> int:
        return int(self.losses.size)

    @property
    def n_types(self) -> int:
        return int(self.coeffs.shape[1])

    @classmethod
    def from_measurements(cls, grid: RegionGrid, mset: MeasurementSet, d0: float,
                          level: float | None = None) -> "DesignMatrix":
        """Trace every record's path and assemble the design.

        Records at or above the truncation level (argument, else the set's
        own level, else untruncated) are dropped: the truncated density
        assigns them probability zero.
        """
        if level is None:
            level = mset.truncation if mset.truncation is not None else math.inf
        keep = mset.pathloss < level
        rx = mset.rx[keep]
        losses = mset.pathloss[keep]
        rows = np.empty((rx.shape[0], grid.n_types), dtype=np.float64)
        for i in range(rx.shape[0]):
            target = (rx[i, 0], rx[i, 1])
            total = _validate_geometry(grid, mset.tx, target, d0)
            types, lengths = _trace_runs(grid, mset.tx, target, d0, total)
            rows[i] = _accumulate(types, lengths, d0, grid.n_types)
        return cls(rows, losses, float(level))


@dataclass
class FitReport:
    """Outcome of one maximum-likelihood fit."""

    params: PefParams | LogDistParams
    log_likelihood: float
    iterations: int
    converged: bool
    final_gradient_norm: float
    rmse_in_sample: float


@dataclass
class FitOptions:
    """Gradient-ascent controls.

    ``step`` is the initial step per unit gradient; it adapts (doubling on
    acceptance, halving on rejection) unless ``fixed_step`` is set, in
    which case every iteration moves ``step`` times the raw-space gradient
    with no acceptance test. ``grad_tol`` defaults to 1e-6 * K on the
    infinity norm of the (n, C, sigma) gradient.
    """

    step: float = 1e-3
    max_iter: int = 100_000
    grad_tol: float | None = None
    fixed_step: bool = False


def normal_hazard(z):
    """Gaussian tail hazard exp(-z^2/2) / int_z^inf exp(-t^2/2) dt.

    Stable over the whole double range: grows like z + 1/z for large z and
    underflows cleanly to 0 for very negative z.
    """
    arr = np.asarray(z, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise DataError("normal_hazard requires finite input")
    with np.errstate(over="ignore"):
        out = _SQRT_2_OVER_PI / special.erfcx(arr / math.sqrt(2.0))
    return out if isinstance(z, np.ndarray) else float(out)


def _check_design_params(design: DesignMatrix, params: PefParams) -> None:
    if params.n_types != design.n_types:
        raise DataError(
            f"params have {params.n_types} exponents, design {design.n_types} columns"
        )
    if params.sigma <= 0:
        raise DataError(f"sigma={params.sigma} must be > 0")


def _loglik(D: np.ndarray, losses: np.ndarray, level: float,
            c: float, n: np.ndarray, sigma: float) -> float:
    if not (sigma > 0.0 and math.isfinite(sigma)):
        return -math.inf
    with np.errstate(over="ignore"):
        mu = c + D @ n
        resid = losses - mu
        ss = float(resid @ resid)
    if not math.isfinite(ss):
        return -math.inf
    denom = 2.0 * sigma * sigma
    if denom == 0.0:  # sigma underflowed; only an exact fit survives it
        if ss > 0.0:
            return -math.inf
        quad = 0.0
    else:
        quad = ss / denom
    k = losses.size
    ll = -0.5 * k * _LOG_2PI - k * math.log(sigma) - quad
    if math.isfinite(level):
        z = (mu - level) / sigma
        ll -= float(np.sum(special.log_ndtr(-z)))
    return ll


def _score_mu(losses: np.ndarray, mu: np.ndarray, level: float,
              sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-point d/d mu of the log-likelihood, and the hazard values."""
    if math.isfinite(level):
        z = (mu - level) / sigma
        with np.errstate(over="ignore"):
            hz = _SQRT_2_OVER_PI / special.erfcx(z / math.sqrt(2.0))
    else:
        z = np.zeros_like(mu)
        hz = np.zeros_like(mu)
    gmu = (losses - mu) / (sigma * sigma) + hz / sigma
    return gmu, z * hz


def _grad_raw(D: np.ndarray, losses: np.ndarray, level: float,
              c: float, n: np.ndarray, sigma: float) -> tuple[np.ndarray, float, float]:
    """Ascent gradient over (n, C, sigma)."""
    mu = c + D @ n
    resid = losses - mu
    gmu, zhz = _score_mu(losses, mu, level, sigma)
    g_n = D.T @ gmu
    g_c = float(np.sum(gmu))
    g_sigma = float(np.sum(-1.0 / sigma + resid * resid / sigma**3 - zhz / sigma))
    return g_n, g_c, g_sigma


def truncated_loglik(design: DesignMatrix, params: PefParams) -> float:
    """Log-likelihood of the truncated-Gaussian path loss model."""
    _check_design_params(design, params)
    return _loglik(design.coeffs, design.losses, design.truncation,
                   params.intercept_c, params.exponents, params.sigma)


def loglik_gradient(design: DesignMatrix, params: PefParams) -> np.ndarray:
    """Ascent gradient of the log-likelihood over (n_1..n_I, C, sigma)."""
    _check_design_params(design, params)
    g_n, g_c, g_sigma = _grad_raw(design.coeffs, design.losses, design.truncation,
                                  params.intercept_c, params.exponents, params.sigma)
    return np.concatenate((g_n, [g_c, g_sigma]))


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


def ls_fit_logdist(distances, losses, d0: float) -> LogDistParams:
    """Ordinary least squares on the log-distance regressor 10*log10(d/d0).

    Returns slope as the exponent, intercept as C, and the residual
    standard deviation (denominator K-2) as sigma. Truncated data biases
    this fit; it seeds the ML refinements.
    """
    d = np.asarray(distances, dtype=np.float64).reshape(-1)
    l = np.asarray(losses, dtype=np.float64).reshape(-1)
    if d.size != l.size:
        raise DataError("distances and losses differ in length")
    if d.size < 3:
        raise DataError(f"{d.size} points cannot identify n, C, and sigma")
    if d0 <= 0:
        raise DataError(f"d0={d0} must be > 0")
    if np.any(d < d0):
        raise DataError(f"distance {d.min():.6g} m below the close-in distance d0={d0:.6g} m")
    x = 10.0 * np.log10(d / d0)
    return _ols_line(x, l, d0)


def _ols_line(x: np.ndarray, y: np.ndarray, d0: float) -> LogDistParams:
    xm = x.mean()
    sxx = float((x - xm) @ (x - xm))
    if sxx == 0.0:
        raise DataError("degenerate regressor: all distances equal")
    ym = y.mean()
    slope = float((x - xm) @ (y - ym)) / sxx
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    sigma = math.sqrt(float(resid @ resid) / (x.size - 2))
    return LogDistParams(intercept_c=intercept, n=slope, sigma=sigma, d0=d0)


def ls_init(design: DesignMatrix) -> PefParams:
    """Default optimizer start: least-squares log-distance fit on the
    coefficient row sums (= 10*log10(d/d0) by telescoping), slope broadcast
    to every exponent."""
    x = design.coeffs.sum(axis=1)
    ld = _ols_line(x, design.losses, d0=1.0)
    sigma = max(ld.sigma, 1e-3)
    return PefParams(ld.intercept_c, np.full(design.n_types, ld.n), sigma)


def _whitening(D: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    col_mean = D.mean(axis=0)
    col_scale = np.maximum(D.std(axis=0), 1e-9)
    return col_mean, col_scale


class _Transform:
    """Fixed change of variables for the ascent: centered/scaled design
    columns, log sigma. theta = (phi_1..phi_I, gamma, s)."""

    def __init__(self, D: np.ndarray):
        self.col_mean, self.col_scale = _whitening(D)

    def to_theta(self, n: np.ndarray, c: float, sigma: float) -> np.ndarray:
        return np.concatenate((n * self.col_scale,
                               [c + float(self.col_mean @ n), math.log(sigma)]))

    def to_params(self, theta: np.ndarray) -> tuple[np.ndarray, float, float]:
        n = theta[:-2] / self.col_scale
        c = float(theta[-2]) - float(self.col_mean @ n)
        s = float(theta[-1])
        return n, c, math.exp(s) if s < 700.0 else math.inf

    def grad(self, g_n: np.ndarray, g_c: float, g_sigma: float, sigma: float) -> np.ndarray:
        return np.concatenate(((g_n - self.col_mean * g_c) / self.col_scale,
                               [g_c, sigma * g_sigma]))


def _ascent_metric(D: np.ndarray, losses: np.ndarray, level: float,
                   tf: _Transform, theta0: np.ndarray):
    """Constant metric from the curvature at the starting point.

    Returns a solve(gradient) -> direction callable. The negated Hessian of
    the log-likelihood in the transformed coordinates is estimated by
    central differences of the analytic gradient; if it is not positive
    definite (degenerate start), progressively larger diagonal jitter is
    added, ending at the identity metric (plain scaled ascent).
    """
    from scipy.linalg import cho_factor, cho_solve

    dim = theta0.size

    def grad_theta(theta: np.ndarray) -> np.ndarray:
        n, c, sigma = tf.to_params(theta)
        g_n, g_c, g_sigma = _grad_raw(D, losses, level, c, n, sigma)
        return tf.grad(g_n, g_c, g_sigma, sigma)

    metric = np.empty((dim, dim))
    for i in range(dim):
        h = 1e-4 * max(1.0, abs(theta0[i]))
        up, down = theta0.copy(), theta0.copy()
        up[i] += h
        down[i] -= h
        metric[:, i] = (grad_theta(down) - grad_theta(up)) / (2.0 * h)
    metric = 0.5 * (metric + metric.T)

    scale = max(float(np.abs(np.diag(metric)).max()), 1e-12)
    for jitter in (0.0, 1e-8, 1e-4, 1e-1):
        try:
            factor = cho_factor(metric + jitter * scale * np.eye(dim))
            return lambda g: cho_solve(factor, g)
        except np.linalg.LinAlgError:
            continue
    return lambda g: g


def fit_ml(design: DesignMatrix, init: PefParams | None = None,
           options: FitOptions | None = None) -> FitReport:
    """Maximize the truncated log-likelihood by gradient ascent.

    Backtracking halves the step whenever the likelihood would decrease;
    sigma stays positive through a log reparameterization. Stops when the
    (n, C, sigma) gradient infinity-norm drops below the tolerance or at
    the iteration cap. Raises on a non-finite starting likelihood or if
    sigma collapses below 1e-6 dB.
    """
    opts = options or FitOptions()
    if init is None:
        init = ls_init(design)
    _check_design_params(design, init)

    D = design.coeffs
    losses = design.losses
    level = design.truncation
    k = design.k
    tol = opts.grad_tol if opts.grad_tol is not None else 1e-6 * k

    n = init.exponents.copy()
    c = float(init.intercept_c)
    sigma = float(init.sigma)

    ll = _loglik(D, losses, level, c, n, sigma)
    if not math.isfinite(ll):
        raise NumericalError(f"non-finite likelihood {ll} at the initial parameters")

    tf = _Transform(D)
    theta = tf.to_theta(n, c, sigma)
    solve = None if opts.fixed_step else _ascent_metric(D, losses, level, tf, theta)

    alpha = opts.step
    iterations = 0
    converged = False
    ginf = math.inf

    for _ in range(opts.max_iter):
        g_n, g_c, g_sigma = _grad_raw(D, losses, level, c, n, sigma)
        ginf = max(float(np.abs(g_n).max()), abs(g_c), abs(g_sigma))
        if ginf < tol:
            converged = True
            break

        if opts.fixed_step:
            n = n + opts.step * g_n
            c = c + opts.step * g_c
            growth = opts.step * sigma * g_sigma
            sigma = sigma * math.exp(growth) if growth < 700.0 else math.inf
            ll = _loglik(D, losses, level, c, n, sigma)
            iterations += 1
        else:
            direction = solve(tf.grad(g_n, g_c, g_sigma, sigma))
            accepted = False
            while alpha >= _MIN_STEP:
                theta_t = theta + alpha * direction
                n_t, c_t, sigma_t = tf.to_params(theta_t)
                ll_t = _loglik(D, losses, level, c_t, n_t, sigma_t)
                if math.isfinite(ll_t) and ll_t > ll:
                    theta, n, c, sigma, ll = theta_t, n_t, c_t, sigma_t, ll_t
                    alpha = min(alpha * 2.0, 1e12)
                    accepted = True
                    break
                alpha *= 0.5
            iterations += 1
            if not accepted:
                break  # no improving step at any scale: numerically stationary

        if sigma < _SIGMA_FLOOR:
            raise NumericalError(f"sigma collapsed below {_SIGMA_FLOOR} dB")
        if not math.isfinite(ll):
            raise NumericalError("likelihood became non-finite during ascent")

    params = PefParams(c, n, sigma)
    if not converged:
        grad = loglik_gradient(design, params)
        ginf = float(np.abs(grad).max())
        converged = ginf < tol
    rmse = math.sqrt(float(np.mean((losses - (c + D @ n)) ** 2)))
    return FitReport(params=params, log_likelihood=ll, iterations=iterations,
                     converged=converged, final_gradient_norm=ginf, rmse_in_sample=rmse)


def fit_ml_logdist(distances, losses, d0: float, level: float | None = None,
                   init: LogDistParams | None = None,
                   options: FitOptions | None = None) -> FitReport:
    """Truncated-ML log-distance fit: the I=1 model on 10*log10(d/d0).

    Points at or above the truncation level are dropped. With no level (or
    +inf) this is the untruncated Gaussian MLE and agrees with least
    squares in (n, C).
    """
    d = np.asarray(distances, dtype=np.float64).reshape(-1)
    l = np.asarray(losses, dtype=np.float64).reshape(-1)
    if d.size != l.size:
        raise DataError("distances and losses differ in length")
    if d0 <= 0:
        raise DataError(f"d0={d0} must be > 0")
    if d.size and np.any(d < d0):
        raise DataError(f"distance {d.min():.6g} m below the close-in distance d0={d0:.6g} m")
    lvl = math.inf if level is None else float(level)
    keep = l < lvl
    d, l = d[keep], l[keep]
    if d.size < 3:
        raise DataError(f"{d.size} points below the truncation level cannot identify n, C, sigma")

    design = DesignMatrix(10.0 * np.log10(d / d0)[:, None], l, lvl)
    init_pef = None
    if init is not None:
        init_pef = PefParams(init.intercept_c, np.array([init.n]), init.sigma)
    report = fit_ml(design, init_pef, options)
    fitted = report.params
    ld = LogDistParams(fitted.intercept_c, float(fitted.exponents[0]), fitted.sigma, d0)
    return replace(report, params=ld)
