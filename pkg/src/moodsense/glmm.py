"""Random-intercept logistic regression via adaptive Gauss-Hermite quadrature.

Repeated mood reports (level 1) nest within participants (level 2); a
per-participant normal intercept deviation is integrated out of the Bernoulli
likelihood with mode-centered Gauss-Hermite quadrature (Q nodes). The outer
maximization is quasi-Newton (L-BFGS-B) on (beta, log sigma_u2), driven by the
exact analytic gradient of the quadrature approximation; standard errors come
from the inverse observed information.

Conventions, used consistently and reported as such:
  - sigma_u2 is parameterized as exp(log sigma_u2); the boundary is declared
    when log sigma_u2 < -10.
  - ICC uses the latent-threshold residual variance pi^2/3.
  - k in AIC/BIC counts fixed effects (intercept included) + the variance
    parameter.
  - Continuous predictors enter on their raw scale.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.optimize import minimize

from . import kernels
from .core import FeatureRow, feature_matrix

log = logging.getLogger(__name__)

#: Residual variance of the standard logistic distribution.
LOGIT_RESIDUAL_VAR = math.pi**2 / 3.0

GLMM_OUTCOMES = ("happiness", "activation")

CONTROL_PREDICTORS = ("weekend_holiday", "gender_male", "age", "weight", "sportiness")
TRAIT_PREDICTORS_A = ("neuroticism", "extraversion")
TRAIT_PREDICTORS_B = ("openness", "agreeableness", "conscientiousness")
SENSOR_PREDICTORS = ("avg_bpm", "light_level", "acceleration", "vmc")

_BOUNDARY_LOG_V = -10.0


@dataclass(frozen=True)
class ModelSpec:
    """Outcome plus ordered fixed effects; the random part is always an intercept."""

    outcome: str
    predictors: tuple = ()

    def __post_init__(self) -> None:
        if self.outcome not in GLMM_OUTCOMES:
            raise ValueError(f"outcome must be one of {GLMM_OUTCOMES}, got {self.outcome!r}")
        if "neuroticism" in self.predictors and "openness" in self.predictors:
            raise ValueError(
                "neuroticism and openness are too strongly collinear to enter one model"
            )
        object.__setattr__(self, "predictors", tuple(self.predictors))


@dataclass(frozen=True)
class FitConfig:
    n_quad: int = 15
    tol: float = 1e-5
    max_iter: int = 200


@dataclass(frozen=True)
class GlmmData:
    """Design matrix (leading intercept column) in group-blocked row order."""

    X: np.ndarray
    y: np.ndarray
    starts: np.ndarray
    group_keys: tuple
    predictors: tuple

    @property
    def n_obs(self) -> int:
        return int(self.y.shape[0])

    @property
    def n_groups(self) -> int:
        return len(self.group_keys)


def glmm_data_from_arrays(
    X_pred: np.ndarray,
    y: np.ndarray,
    groups: Sequence,
    predictors: Sequence[str] = (),
) -> GlmmData:
    """Block rows by group and prepend the intercept column."""
    X_pred = np.asarray(X_pred, dtype=np.float64)
    if X_pred.ndim == 1:
        X_pred = X_pred.reshape(-1, 1)
    y = np.asarray(y, dtype=np.float64)
    gkeys = np.asarray(groups)
    if not (len(y) == X_pred.shape[0] == len(gkeys)):
        raise ValueError("X, y and groups must have matching lengths")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("outcome must be binary 0/1")
    order = np.argsort(gkeys, kind="stable")
    gsorted = gkeys[order]
    boundaries = np.nonzero(gsorted[1:] != gsorted[:-1])[0] + 1
    starts = np.concatenate([[0], boundaries, [len(y)]]).astype(np.int64)
    keys = tuple(gsorted[s] for s in starts[:-1])
    X = np.ascontiguousarray(
        np.column_stack([np.ones(len(y)), X_pred[order]]), dtype=np.float64
    )
    if not np.all(np.isfinite(X)):
        bad = int(order[np.nonzero(~np.isfinite(X).all(axis=1))[0][0]])
        raise ValueError(f"non-finite predictor value at row {bad}")
    names = tuple(predictors) if predictors else tuple(f"x{i}" for i in range(X_pred.shape[1]))
    if len(names) != X_pred.shape[1]:
        raise ValueError(f"{X_pred.shape[1]} predictor columns for {len(names)} names")
    return GlmmData(X, y[order], starts, keys, names)


def glmm_data_from_rows(rows: Sequence[FeatureRow], spec: ModelSpec) -> GlmmData:
    """Complete-case design matrix for one model over assembled feature rows."""
    data = feature_matrix(rows, (spec.outcome,) + spec.predictors)
    groups = np.array([r.participant_id for r in rows])
    complete = np.isfinite(data).all(axis=1)
    dropped = int((~complete).sum())
    if dropped:
        log.info("glmm %s: dropping %d incomplete rows", spec.outcome, dropped)
    data = data[complete]
    return glmm_data_from_arrays(
        data[:, 1:], data[:, 0], groups[complete], predictors=spec.predictors
    )


def _gh_nodes(n_quad: int) -> tuple[np.ndarray, np.ndarray]:
    t, w = hermgauss(n_quad)
    return t, np.log(w) + t * t


def _check_linear_predictor(data: GlmmData, beta: np.ndarray) -> None:
    eta = data.X @ beta
    bad = np.nonzero(~np.isfinite(eta))[0]
    if bad.size:
        raise ValueError(f"non-finite linear predictor at row {int(bad[0])}")


def _plain_logistic_loglik(data: GlmmData, beta: np.ndarray) -> float:
    eta = data.X @ beta
    sp = np.where(eta > 30, eta, np.log1p(np.exp(np.minimum(eta, 30.0))))
    return float(np.sum(data.y * eta - sp))


def marginal_loglik(
    data: GlmmData, beta: Sequence[float], sigma_u2: float, n_quad: int = 15
) -> float:
    """Marginal log-likelihood with the random intercept integrated out.

    sigma_u2 = 0 collapses the integral: the result is exactly the plain
    logistic log-likelihood.
    """
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape[0] != data.X.shape[1]:
        raise ValueError(f"expected {data.X.shape[1]} coefficients, got {beta.shape[0]}")
    if sigma_u2 < 0:
        raise ValueError(f"sigma_u2 must be non-negative, got {sigma_u2}")
    _check_linear_predictor(data, beta)
    if sigma_u2 == 0.0:
        return _plain_logistic_loglik(data, beta)
    t, logw = _gh_nodes(n_quad)
    ll, _ = kernels.glmm_parts(data.X, data.y, data.starts, beta, float(sigma_u2), t, logw)
    return float(ll)


def marginal_loglik_grad(
    data: GlmmData, beta: Sequence[float], sigma_u2: float, n_quad: int = 15
) -> tuple[float, np.ndarray]:
    """Log-likelihood and its exact gradient over (beta..., sigma_u2)."""
    beta = np.asarray(beta, dtype=np.float64)
    if sigma_u2 <= 0:
        raise ValueError(f"gradient needs sigma_u2 > 0, got {sigma_u2}")
    _check_linear_predictor(data, beta)
    t, logw = _gh_nodes(n_quad)
    ll, grad = kernels.glmm_parts(data.X, data.y, data.starts, beta, float(sigma_u2), t, logw)
    return float(ll), grad


def icc(sigma_u2: float) -> float:
    """Share of latent-outcome variance between participants: s2/(s2 + pi^2/3)."""
    if sigma_u2 < 0:
        raise ValueError(f"sigma_u2 must be non-negative, got {sigma_u2}")
    return sigma_u2 / (sigma_u2 + LOGIT_RESIDUAL_VAR)


def information_criteria(loglik: float, k: int, n: int) -> tuple[float, float]:
    """(AIC, BIC) = (-2 ll + 2k, -2 ll + k ln n)."""
    if k < 1 or n < 1:
        raise ValueError(f"need k >= 1 and n >= 1, got k={k}, n={n}")
    return -2.0 * loglik + 2.0 * k, -2.0 * loglik + k * math.log(n)


def _normal_two_sided_p(z: float) -> float:
    return math.erfc(abs(z) / math.sqrt(2.0))


def _stars(p: float) -> str:
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


@dataclass(frozen=True)
class FitResult:
    coef_names: tuple  # ("const", predictor...)
    beta: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p_values: np.ndarray
    stars: tuple
    sigma_u2: float
    icc: float
    loglik: float
    aic: float
    bic: float
    n_obs: int
    n_groups: int
    converged: bool
    warnings: tuple = ()

    def coef(self, name: str) -> float:
        return float(self.beta[self.coef_names.index(name)])

    def coef_se(self, name: str) -> float:
        return float(self.se[self.coef_names.index(name)])

    def coef_p(self, name: str) -> float:
        return float(self.p_values[self.coef_names.index(name)])

    @property
    def k_params(self) -> int:
        return len(self.coef_names) + 1


def _hessian_fd(data: GlmmData, theta: np.ndarray, n_quad: int) -> np.ndarray:
    """Observed information by central differences of the analytic gradient.

    theta = (beta..., log sigma_u2).
    """
    t, logw = _gh_nodes(n_quad)
    k = theta.shape[0]

    def grad_at(th):
        v = math.exp(th[-1])
        _, g = kernels.glmm_parts(data.X, data.y, data.starts, th[:-1], v, t, logw)
        g = g.copy()
        g[-1] *= v  # chain rule to log-variance space
        return g

    hess = np.empty((k, k))
    for i in range(k):
        h = 1e-5 * max(1.0, abs(theta[i]))
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h
        tm[i] -= h
        hess[:, i] = (grad_at(tp) - grad_at(tm)) / (2.0 * h)
    return -(hess + hess.T) / 2.0


def fit_model(data: GlmmData, config: FitConfig = FitConfig()) -> FitResult:
    """Maximize the marginal likelihood; never raises on non-convergence.

    Predictors are standardized internally so the quasi-Newton loop sees a
    well-conditioned problem; coefficients and their covariance are mapped
    back and reported on the raw scale.
    """
    if data.n_groups < 2:
        raise ValueError(f"need at least 2 groups, got {data.n_groups}")
    p = data.X.shape[1]
    t, logw = _gh_nodes(config.n_quad)

    col_mean = data.X.mean(axis=0)
    col_sd = data.X.std(axis=0)
    col_mean[0] = 0.0  # intercept column stays as-is
    col_sd[0] = 1.0
    col_sd[col_sd == 0] = 1.0
    X_std = np.ascontiguousarray((data.X - col_mean) / col_sd)
    sdata = GlmmData(X_std, data.y, data.starts, data.group_keys, data.predictors)

    rate = float(np.clip(data.y.mean(), 1e-3, 1 - 1e-3))
    theta0 = np.zeros(p + 1)
    theta0[0] = math.log(rate / (1.0 - rate))
    theta0[-1] = math.log(0.5)

    def objective(theta):
        v = math.exp(theta[-1])
        ll, grad = kernels.glmm_parts(sdata.X, sdata.y, sdata.starts, theta[:-1], v, t, logw)
        g = np.empty_like(theta)
        g[:-1] = grad[:-1]
        g[-1] = grad[-1] * v
        return -ll, -g

    bounds = [(None, None)] * p + [(-12.0, 6.0)]
    res = minimize(
        objective,
        theta0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": config.max_iter, "gtol": config.tol, "ftol": 1e-14},
    )
    theta = res.x

    def projected(theta, grad):
        # A coordinate pinned at its bound and pushing outward counts as
        # converged there (the variance floor acts as the sigma^2 = 0 boundary).
        proj = grad.copy()
        if theta[-1] <= bounds[-1][0] + 1e-12 and grad[-1] > 0:
            proj[-1] = 0.0
        if theta[-1] >= bounds[-1][1] - 1e-12 and grad[-1] < 0:
            proj[-1] = 0.0
        return proj

    # L-BFGS can stall at the objective's float resolution while the gradient
    # is still above tol on large datasets; a Newton polish with the observed
    # information finishes the job. Steps are accepted on projected-gradient
    # decrease, which stays meaningful below the objective's resolution.
    ll, grad = objective(theta)
    for _ in range(5):
        gnorm = np.max(np.abs(projected(theta, grad)))
        if gnorm < config.tol:
            break
        hess_polish = _hessian_fd(sdata, theta, config.n_quad)
        try:
            step = np.linalg.solve(hess_polish, -grad)
        except np.linalg.LinAlgError:
            break
        for scale in (1.0, 0.5, 0.25, 0.1):
            cand = theta + scale * step
            cand[-1] = min(max(cand[-1], bounds[-1][0]), bounds[-1][1])
            c_ll, c_grad = objective(cand)
            if np.max(np.abs(projected(cand, c_grad))) < gnorm:
                theta, ll, grad = cand, c_ll, c_grad
                break
        else:
            break
    ll = -ll
    converged = bool(np.max(np.abs(projected(theta, grad))) < config.tol)
    if not converged:
        log.warning("glmm fit did not converge: %s", res.message)
    sigma_u2 = math.exp(theta[-1])
    notes = []
    if theta[-1] <= _BOUNDARY_LOG_V:
        notes.append("random-intercept variance at the zero boundary")

    # map (alpha on standardized columns, log v) back to the raw scale:
    # beta_k = alpha_k / sd_k, beta_0 = alpha_0 - sum alpha_k mean_k / sd_k
    jac = np.eye(p + 1)
    for k in range(1, p):
        jac[0, k] = -col_mean[k] / col_sd[k]
        jac[k, k] = 1.0 / col_sd[k]
    beta_raw = jac[:p, :p] @ theta[:p]
    eta = data.X @ beta_raw
    if np.max(np.abs(eta)) > 30:
        notes.append("possible quasi-complete separation: extreme linear predictor")

    hess = _hessian_fd(sdata, theta, config.n_quad)
    try:
        cov = np.linalg.inv(hess)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(hess)
        notes.append("observed information is singular; SEs use a pseudo-inverse")
    cov = jac @ cov @ jac.T
    diag = np.diag(cov)[:p]
    se = np.sqrt(np.where(diag > 0, diag, np.nan))
    if np.any(~np.isfinite(se)):
        notes.append("some standard errors are undefined")
    with np.errstate(invalid="ignore", divide="ignore"):
        z = beta_raw / se
    p_values = np.array([_normal_two_sided_p(zi) if np.isfinite(zi) else np.nan for zi in z])
    k_params = p + 1
    aic, bic = information_criteria(ll, k_params, data.n_obs)
    return FitResult(
        coef_names=("const",) + data.predictors,
        beta=beta_raw,
        se=se,
        z=z,
        p_values=p_values,
        stars=tuple(_stars(pv) if np.isfinite(pv) else "" for pv in p_values),
        sigma_u2=sigma_u2,
        icc=icc(sigma_u2),
        loglik=ll,
        aic=aic,
        bic=bic,
        n_obs=data.n_obs,
        n_groups=data.n_groups,
        converged=converged,
        warnings=tuple(notes),
    )


def fit_model_rows(
    rows: Sequence[FeatureRow], spec: ModelSpec, config: FitConfig = FitConfig()
) -> FitResult:
    return fit_model(glmm_data_from_rows(rows, spec), config)


def predict_marginal_prob(
    data: GlmmData, beta: Sequence[float], sigma_u2: float, n_quad: int = 15
) -> np.ndarray:
    """P(y=1 | x) with the random intercept integrated out (per row)."""
    beta = np.asarray(beta, dtype=np.float64)
    eta = data.X @ beta
    if sigma_u2 == 0.0:
        return 1.0 / (1.0 + np.exp(-eta))
    t, w = hermgauss(n_quad)
    u = math.sqrt(2.0 * sigma_u2) * t
    probs = 1.0 / (1.0 + np.exp(-(eta[:, None] + u[None, :])))
    return probs @ (w / math.sqrt(math.pi))


#: The six-model ladder: empty baseline, control families, sensors, and the
#: combination of each family's significant effects.
SUITE_LADDER = (
    ("empty", ()),
    ("controls", CONTROL_PREDICTORS),
    ("traits_a", TRAIT_PREDICTORS_A),
    ("traits_b", TRAIT_PREDICTORS_B),
    ("sensors", SENSOR_PREDICTORS),
)


@dataclass(frozen=True)
class SuiteEntry:
    name: str
    spec: ModelSpec
    fit: FitResult


@dataclass(frozen=True)
class SuiteResult:
    outcome: str
    entries: tuple

    def entry(self, name: str) -> SuiteEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    @property
    def names(self) -> tuple:
        return tuple(e.name for e in self.entries)


def model_suite(
    rows: Sequence[FeatureRow], outcome: str, config: FitConfig = FitConfig()
) -> SuiteResult:
    """Fit the six-model ladder for one outcome. GPS never enters.

    Model 6 combines every predictor significant (p < .05) in its own ladder
    model. If that would put neuroticism and openness together, the one whose
    source model has the lower AIC is kept.
    """
    entries = []
    by_name = {}
    for name, predictors in SUITE_LADDER:
        fit = fit_model_rows(rows, ModelSpec(outcome, predictors), config)
        entries.append(SuiteEntry(name, ModelSpec(outcome, predictors), fit))
        by_name[name] = entries[-1]

    selected = []
    source_aic = {}
    for name, _ in SUITE_LADDER[1:]:
        entry = by_name[name]
        for pred in entry.spec.predictors:
            if entry.fit.coef_p(pred) < 0.05:
                selected.append(pred)
                source_aic[pred] = entry.fit.aic
    if "neuroticism" in selected and "openness" in selected:
        drop = "openness" if source_aic["neuroticism"] <= source_aic["openness"] else "neuroticism"
        selected.remove(drop)
        log.info("combined model: dropping %s to avoid the trait collinearity", drop)
    combined_spec = ModelSpec(outcome, tuple(selected))
    entries.append(SuiteEntry("combined", combined_spec, fit_model_rows(rows, combined_spec, config)))
    return SuiteResult(outcome, tuple(entries))
