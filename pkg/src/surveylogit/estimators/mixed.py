"""Random-intercept logistic model (M3) fitted by Laplace approximation.

The log marginal likelihood of stratum h,

    log int prod_i p_hi^y (1 - p_hi)^(1-y) N(u; 0, s2) du,

is approximated around the conditional mode u_h as

    sum_i l_hi(u_h) - u_h^2 / (2 s2) - log(s2) / 2 - log(D_h) / 2,

with D_h = sum_i p_hi (1 - p_hi) + 1/s2 the negative second derivative at the
mode. The outer problem runs over (gamma, theta = log sigma_u) with an
analytic gradient that accounts for the dependence of u_h on the parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.special import expit

from ..exceptions import ConvergenceError, EstimationError
from ..survey_data import DesignMatrix, ModelFormula, SurveySample, build_design_matrix
from .irls import irls, logistic_loglik
from .results import CoefficientVector, MixedFitResult

C_ATTENUATION = 16.0 * math.sqrt(3.0) / (15.0 * math.pi)

INNER_TOL = 1e-10
INNER_MAX_ITER = 100
OUTER_GTOL = 1e-6
OUTER_MAX_EVAL = 200
BOUNDARY_SIGMA2 = 1e-10


def marginalize(gamma, sigma2_u: float):
    """Population-averaged coefficients gamma / sqrt(1 + c^2 sigma2_u), c = 16 sqrt(3) / (15 pi)."""
    if sigma2_u < 0 or not math.isfinite(sigma2_u):
        raise ValueError(f"sigma2_u must be a nonnegative finite number, got {sigma2_u}")
    factor = math.sqrt(1.0 + C_ATTENUATION**2 * sigma2_u)
    if isinstance(gamma, CoefficientVector):
        return CoefficientVector(gamma.values / factor, gamma.labels)
    return np.asarray(gamma, dtype=float) / factor


@dataclass
class GroupedData:
    """Design rows with stratum membership coded 0..G-1."""

    X: np.ndarray
    y: np.ndarray
    group: np.ndarray
    group_ids: np.ndarray

    @classmethod
    def from_arrays(cls, X, y, groups):
        ids, inv = np.unique(np.asarray(groups), return_inverse=True)
        return cls(np.asarray(X, float), np.asarray(y, float), inv.astype(np.intp), ids)

    @property
    def n_groups(self) -> int:
        return len(self.group_ids)

    def group_sum(self, values):
        return np.bincount(self.group, weights=values, minlength=self.n_groups)


def conditional_modes(data: GroupedData, eta, sigma2, u0=None):
    """Newton iteration for each stratum's mode of the log integrand.

    Steps are halved per stratum whenever they fail to reduce the absolute
    first derivative, so the update never diverges.
    """
    G = data.n_groups
    u = np.zeros(G) if u0 is None else np.array(u0, dtype=float)
    inv_s2 = 1.0 / sigma2

    def deriv(u):
        p = expit(eta + u[data.group])
        return data.group_sum(data.y - p) - u * inv_s2, data.group_sum(p * (1.0 - p)) + inv_s2

    g, d = deriv(u)
    active = np.ones(G, dtype=bool)
    for _ in range(INNER_MAX_ITER):
        step = np.where(active, g / d, 0.0)
        for _ in range(40):
            cand = u + step
            g_new, d_new = deriv(cand)
            worse = active & (np.abs(g_new) > np.abs(g)) & (np.abs(step) > INNER_TOL)
            if not worse.any():
                break
            step = np.where(worse, 0.5 * step, step)
        u, g, d = cand, g_new, d_new
        active = np.abs(step) >= INNER_TOL
        if not active.any():
            return u
    bad = data.group_ids[active].tolist()
    raise ConvergenceError(
        f"conditional mode did not converge for stratum/strata {bad[:10]}", last_iterate=u
    )


def _unpack(params):
    return params[:-1], params[-1]


def laplace_loglik(data: GroupedData, gamma, sigma2, u0=None, *, return_modes=False):
    """Laplace-approximated log marginal likelihood at ``(gamma, sigma2)``."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive; use the plain logistic likelihood at 0")
    eta = data.X @ gamma
    u = conditional_modes(data, eta, sigma2, u0)
    value = _laplace_value(data, eta, u, sigma2)
    return (value, u) if return_modes else value


def _laplace_value(data, eta, u, sigma2):
    lin = eta + u[data.group]
    ll = np.sum(data.y * lin - np.logaddexp(0.0, lin))
    p = expit(lin)
    S = data.group_sum(p * (1.0 - p))
    return float(ll - np.sum(u**2) / (2.0 * sigma2) - 0.5 * np.sum(np.log1p(sigma2 * S)))


def laplace_value_and_grad(data: GroupedData, params, u0=None):
    """Laplace log-likelihood and its exact gradient in (gamma, log sigma_u).

    Returns ``(value, gradient, modes)``.
    """
    gamma, theta = _unpack(np.asarray(params, dtype=float))
    s2 = math.exp(2.0 * theta)
    eta = data.X @ gamma
    u = conditional_modes(data, eta, s2, u0)
    value = _laplace_value(data, eta, u, s2)

    X, g = data.X, data.group
    p = expit(eta + u[g])
    v = p * (1.0 - p)
    t = v * (1.0 - 2.0 * p)
    D = data.group_sum(v) + 1.0 / s2
    T = data.group_sum(t)
    G, l = data.n_groups, X.shape[1]
    VX = np.zeros((G, l))
    np.add.at(VX, g, v[:, None] * X)
    TX = np.zeros((G, l))
    np.add.at(TX, g, t[:, None] * X)

    du_dgamma = -VX / D[:, None]
    dD_dgamma = TX + T[:, None] * du_dgamma
    grad_gamma = X.T @ (data.y - p) - 0.5 * np.sum(dD_dgamma / D[:, None], axis=0)

    du_dtheta = 2.0 * u / (s2 * D)
    dD_dtheta = T * du_dtheta - 2.0 / s2
    grad_theta = np.sum(u**2 / s2 - 1.0 - 0.5 * dD_dtheta / D)
    return value, np.append(grad_gamma, grad_theta), u


def numerical_hessian(grad, x, step=1e-5):
    """Central differences of an analytic gradient, symmetrized."""
    x = np.asarray(x, dtype=float)
    k = len(x)
    H = np.empty((k, k))
    for j in range(k):
        h = step * max(1.0, abs(x[j]))
        e = np.zeros(k)
        e[j] = h
        H[:, j] = (grad(x + e) - grad(x - e)) / (2.0 * h)
    return 0.5 * (H + H.T)


class _Objective:
    """Negative Laplace log-likelihood with warm-started modes and an eval counter."""

    def __init__(self, data):
        self.data = data
        self.u = None
        self.n_eval = 0

    def __call__(self, params):
        self.n_eval += 1
        value, grad, u = laplace_value_and_grad(self.data, params, self.u)
        self.u = u
        return -value, -grad

    def grad(self, params):
        return self(params)[1]


def fit_random_intercept(X, y, groups, labels=None) -> MixedFitResult:
    """Fit logit(p_hi) = x_hi' gamma + u_h, u_h ~ N(0, sigma2_u), by Laplace ML."""
    data = GroupedData.from_arrays(X, y, groups)
    l = data.X.shape[1]
    labels = tuple(labels) if labels is not None else tuple(f"x{j}" for j in range(l))
    if data.n_groups < 2:
        raise EstimationError("random-intercept model needs at least 2 strata")

    base = irls(data.X, data.y, labels=labels)
    boundary_ll = base.loglik
    p0 = expit(data.X @ base.coef)
    resid = data.group_sum(data.y - p0)
    curv = data.group_sum(p0 * (1.0 - p0))
    # score of the variance component at sigma2 = 0 (up to a factor 1/2)
    score0 = float(np.sum(resid**2 - curv))
    if score0 <= 0:
        return _boundary_result(data, base, labels, boundary_ll)

    s2_start = max(score0 / float(np.sum(curv**2)), 0.05)
    x0 = np.append(base.coef, 0.5 * math.log(s2_start))
    obj = _Objective(data)
    res = scipy.optimize.minimize(
        obj, x0, jac=True, method="BFGS",
        options={"gtol": OUTER_GTOL, "maxiter": OUTER_MAX_EVAL},
    )
    x = res.x
    gnorm = np.max(np.abs(obj.grad(x)))
    # Newton polish: BFGS line searches can stall just short of gtol
    for _ in range(20):
        if gnorm < OUTER_GTOL or obj.n_eval > OUTER_MAX_EVAL + 100:
            break
        if 2.0 * x[-1] < math.log(BOUNDARY_SIGMA2):
            break
        H = numerical_hessian(obj.grad, x)
        g = obj.grad(x)
        try:
            step = -scipy.linalg.solve(H, g, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            break
        f0 = obj(x)[0]
        for _ in range(20):
            if obj(x + step)[0] <= f0 + 1e-12 * abs(f0):
                break
            step *= 0.5
        x = x + step
        gnorm = np.max(np.abs(obj.grad(x)))

    value = -obj(x)[0]
    s2 = math.exp(2.0 * x[-1])
    if s2 < BOUNDARY_SIGMA2 or boundary_ll >= value:
        return _boundary_result(data, base, labels, boundary_ll)
    if gnorm >= OUTER_GTOL:
        raise ConvergenceError(
            f"Laplace maximization stopped with gradient norm {gnorm:.3g} "
            f"after {obj.n_eval} evaluations",
            last_iterate=x,
        )
    H = numerical_hessian(obj.grad, x)
    try:
        cov_full = scipy.linalg.inv(H)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise EstimationError("Hessian of the Laplace likelihood is singular") from exc
    gamma = CoefficientVector(x[:-1], labels)
    _, _, u = laplace_value_and_grad(data, x, obj.u)
    return MixedFitResult(
        gamma=gamma,
        sigma2_u=s2,
        beta=marginalize(gamma, s2),
        random_effects={int(h): float(v) for h, v in zip(data.group_ids, u)},
        covariance=cov_full[:-1, :-1],
        n_iter=int(res.nit),
        converged=True,
        loglik=value,
    )


def _boundary_result(data, base, labels, loglik):
    gamma = CoefficientVector(base.coef, labels)
    return MixedFitResult(
        gamma=gamma,
        sigma2_u=0.0,
        beta=gamma,
        random_effects={int(h): 0.0 for h in data.group_ids},
        covariance=scipy.linalg.inv(base.information),
        n_iter=base.n_iter,
        converged=True,
        loglik=loglik,
        boundary=True,
    )


def fit_m3(sample: SurveySample, formula: ModelFormula, design: DesignMatrix | None = None) -> MixedFitResult:
    """M3: unweighted random-intercept logit with strata as the grouping level."""
    design = build_design_matrix(sample, formula) if design is None else design
    return fit_random_intercept(design.X, design.y, sample.strata, design.labels)


def plain_loglik(X, y, gamma) -> float:
    """The sigma2_u -> 0 limit of the Laplace likelihood."""
    return logistic_loglik(np.asarray(X, float), np.asarray(y, float), 1.0, np.asarray(gamma, float))
