"""Laplace-approximation fitting of latent Gaussian binary-outcome models and DIC.

The latent vector stacks the fixed-effect coefficients and one block per
latent effect. Each latent block has precision ``tau * R`` with
``theta = log tau``; intrinsic blocks carry one sum-to-zero constraint per
connected component. Hyperparameters are set to the mode of the Laplace
approximation to ``p(theta | y)`` (empirical Bayes), and the fit is then
summarized by the deviance information criterion with the latent field as
focus.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.special import gammaln

from . import gmrf
from .exceptions import ConvergenceError, NumericalError, ValidationError
from .model import Dataset, LatentModel, ModelSpec, build_latent_model, loglik

NEWTON_TOL = 1e-6
NEWTON_MAX_ITER = 50
MAX_HALVINGS = 20
THETA_BOUND = 20.0
LOG_2PI = math.log(2.0 * math.pi)


def _prior_jitter(R: sp.spmatrix, tau: float) -> float:
    mean_diag = float(R.diagonal().mean()) if R.shape[0] else 0.0
    return gmrf.JITTER * tau * (mean_diag if mean_diag > 0 else 1.0)


class _Engine:
    """Per-(dataset, spec) caches shared by every hyperparameter evaluation."""

    def __init__(self, lm: LatentModel):
        self.lm = lm
        self.A = lm.design
        self.At = lm.design.T.tocsr()
        self.y = lm.y
        self.C = lm.constraint_matrix()
        self.k = self.C.shape[0]
        if self.k:
            self.CCt_inv = np.linalg.inv(self.C @ self.C.T)
            self.logdet_cct = float(np.linalg.slogdet(self.C @ self.C.T)[1])
        else:
            self.logdet_cct = 0.0
        self.blocks = lm.prior_blocks()
        self.latent = list(lm.spec.latent)
        # log generalized determinant of each unscaled intrinsic structure
        self.logdet_plus = {}
        for name, pm in self.blocks[1:]:
            if pm.intrinsic:
                if pm.matrix.nnz == 0 or not np.any(pm.matrix.diagonal()):
                    self.logdet_plus[name] = 0.0
                else:
                    factor = gmrf.factorize(pm)
                    self.logdet_plus[name] = gmrf.generalized_log_det(factor, pm.constraint_matrix())

    def prior_precision(self, theta) -> sp.csr_matrix:
        mats = []
        for k, (name, pm) in enumerate(self.blocks):
            if k == 0:
                mats.append(pm.matrix * self.lm.spec.fixed_prior_precision)
                continue
            tau = math.exp(theta[k - 1])
            block = pm.matrix * tau
            if pm.intrinsic:
                block = block + _prior_jitter(pm.matrix, tau) * sp.identity(pm.dim)
            mats.append(block)
        return sp.block_diag(mats, format="csr")

    def log_prior_density(self, theta, x) -> float:
        """Sum of block log-densities on the constrained subspace."""
        total = 0.0
        layout = self.lm.layout
        for k, (name, pm) in enumerate(self.blocks):
            sl = layout.fixed if k == 0 else layout[name]
            xb = x[sl]
            quad = float(xb @ (pm.matrix @ xb))
            if k == 0:
                prec = self.lm.spec.fixed_prior_precision
                total += 0.5 * pm.dim * (math.log(prec) - LOG_2PI) - 0.5 * prec * quad
                continue
            tau = math.exp(theta[k - 1])
            if pm.intrinsic:
                rank = pm.dim - len(pm.components)
                total += 0.5 * rank * (math.log(tau) - LOG_2PI) + 0.5 * self.logdet_plus[name]
            else:
                total += 0.5 * pm.dim * (math.log(tau) - LOG_2PI)
            total -= 0.5 * tau * quad
        return total

    def project(self, g: np.ndarray) -> np.ndarray:
        if not self.k:
            return g
        return g - self.C.T @ (self.CCt_inv @ (self.C @ g))

    def objective(self, Q, x) -> float:
        return loglik(self.y, self.A @ x)[0] - 0.5 * float(x @ (Q @ x))

    def hessian(self, Q, W) -> sp.csr_matrix:
        return (Q + self.At @ sp.diags(W) @ self.A).tocsr()


def log_posterior(lm: LatentModel, theta, x) -> float:
    """Unnormalized log p(x | y, theta) with the jittered prior precision."""
    eng = _Engine(lm)
    return eng.objective(eng.prior_precision(np.asarray(theta, float)), np.asarray(x, float))


def log_posterior_gradient(lm: LatentModel, theta, x) -> np.ndarray:
    eng = _Engine(lm)
    x = np.asarray(x, dtype=float)
    Q = eng.prior_precision(np.asarray(theta, float))
    _, g_eta, _ = loglik(eng.y, eng.A @ x)
    return eng.At @ g_eta - Q @ x


@dataclass(eq=False)
class GaussianApproximation:
    """Gaussian approximation N(mode, H^{-1}) restricted to ``constraint @ x = 0``."""

    mode: np.ndarray
    factor: gmrf.CholeskyFactor
    constraint: np.ndarray
    log_posterior: float
    loglik: float
    iterations: int
    gradient_norm: float
    history: list = field(default_factory=list)

    def _constrained_columns(self, indices):
        cols = []
        for i in indices:
            e = np.zeros(self.factor.n)
            e[i] = 1.0
            cols.append(self.factor.solve(e))
        return np.column_stack(cols) if cols else np.zeros((self.factor.n, 0))

    def marginal_variances(self, indices) -> np.ndarray:
        indices = list(indices)
        cols = self._constrained_columns(indices)
        var = cols[indices, np.arange(len(indices))].copy()
        if self.constraint.shape[0]:
            HiCt = np.column_stack([self.factor.solve(row) for row in self.constraint])
            S = self.constraint @ HiCt
            CV = self.constraint @ cols
            var -= np.einsum("ij,ij->j", CV, np.linalg.solve(S, CV))
        return var

    def marginal_sd(self, indices) -> np.ndarray:
        return np.sqrt(np.maximum(self.marginal_variances(indices), 0.0))

    def sample(self, n_draws: int, rng) -> np.ndarray:
        """Draws of shape (n_draws, n) from the constrained approximation."""
        z = gmrf.sample(self.factor, self.constraint if self.constraint.shape[0] else None, rng, n_draws)
        return self.mode + z


def _newton(eng: _Engine, theta, x0=None, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
    Q = eng.prior_precision(theta)
    n = eng.lm.n
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if eng.k and x0 is not None:
        x = eng.project(x)
    f = eng.objective(Q, x)
    history = [f]
    for it in range(max_iter + 1):
        ll, g_eta, W = loglik(eng.y, eng.A @ x)
        g = eng.At @ g_eta - Q @ x
        gnorm = float(np.max(np.abs(eng.project(g)))) if n else 0.0
        H = eng.hessian(Q, W)
        factor = gmrf.factorize(H, intrinsic=False)
        if gnorm < tol:
            return GaussianApproximation(x, factor, eng.C, f, ll, it, gnorm, history)
        if it == max_iter:
            break
        d = factor.solve(g)
        if eng.k:
            d = gmrf.condition_on_constraint(factor, d, eng.C)
        step = 1.0
        slack = 1e-12 * max(1.0, abs(f))
        for _ in range(MAX_HALVINGS + 1):
            x_new = x + step * d
            f_new = eng.objective(Q, x_new)
            if np.isfinite(f_new) and f_new >= f - slack:
                break
            step *= 0.5
        else:
            raise ConvergenceError(
                f"step-halving failed at iteration {it}; gradient norm {gnorm:.3g}",
                gradient_norm=gnorm,
            )
        x, f = x_new, max(f_new, f)
        history.append(f)
    raise ConvergenceError(
        f"Newton iteration did not converge in {max_iter} iterations; gradient norm {gnorm:.3g}",
        gradient_norm=gnorm,
    )


def gaussian_approximation(ds: Dataset | LatentModel, spec: ModelSpec | None, theta, x0=None) -> GaussianApproximation:
    """Mode and curvature of p(x | y, theta) under the sum-to-zero constraints."""
    lm = ds if isinstance(ds, LatentModel) else build_latent_model(ds, spec)
    theta = np.asarray(theta, dtype=float).reshape(len(lm.spec.latent))
    return _newton(_Engine(lm), theta, x0)


def _laplace_log_marginal(eng: _Engine, theta, approx: GaussianApproximation) -> float:
    x = approx.mode
    value = approx.loglik + eng.log_prior_density(theta, x)
    dim = eng.lm.n - eng.k
    log_post_at_mode = -0.5 * dim * LOG_2PI + 0.5 * approx.factor.log_det()
    if eng.k:
        HiCt = np.column_stack([approx.factor.solve(row) for row in eng.C])
        log_post_at_mode += 0.5 * float(np.linalg.slogdet(eng.C @ HiCt)[1]) - 0.5 * eng.logdet_cct
    return value - log_post_at_mode


def log_hyperprior(spec: ModelSpec, theta) -> float:
    """Gamma(shape, rate) prior on each precision, expressed on log-precision."""
    total = 0.0
    for name, t in zip(spec.latent, theta):
        a, b = spec.prior_for(name)
        total += a * math.log(b) - gammaln(a) + a * t - b * math.exp(t)
    return total


def laplace_log_marginal(lm: LatentModel, theta) -> float:
    eng = _Engine(lm)
    theta = np.asarray(theta, dtype=float)
    return _laplace_log_marginal(eng, theta, _newton(eng, theta))


def optimize_hyperparameters(ds: Dataset | LatentModel, spec: ModelSpec | None = None, max_evals: int = 200) -> np.ndarray:
    """Mode of the Laplace approximation to log p(y | theta) + log p(theta)."""
    lm = ds if isinstance(ds, LatentModel) else build_latent_model(ds, spec)
    theta, _ = _optimize(_Engine(lm), max_evals)
    return theta


def _optimize(eng: _Engine, max_evals: int = 200):
    d = len(eng.latent)
    if d == 0:
        return np.zeros(0), None
    state = {"x": None}

    def negative(theta):
        theta = np.asarray(theta, dtype=float)
        if np.any(np.abs(theta) > THETA_BOUND):
            return np.inf
        try:
            approx = _newton(eng, theta, state["x"])
        except NumericalError:
            return np.inf
        state["x"] = approx.mode
        return -(_laplace_log_marginal(eng, theta, approx) + log_hyperprior(eng.lm.spec, theta))

    start = np.zeros(d)
    f0 = negative(start)
    if not np.isfinite(f0):
        raise NumericalError("hyperparameter objective is not finite at theta = 0")
    simplex = np.vstack([start, start + np.eye(d)])
    res = minimize(
        negative,
        start,
        method="Nelder-Mead",
        options={"initial_simplex": simplex, "fatol": 1e-4, "xatol": 1e-3, "maxfev": max_evals},
    )
    return np.asarray(res.x, dtype=float), res


@dataclass(frozen=True)
class DevianceSummary:
    deviance_bar: float
    deviance_at_mean: float
    p_eff: float
    dic: float


def compute_dic(lm: LatentModel, approx: GaussianApproximation, n_draws: int = 1000, seed=1, chunk: int = 1000) -> DevianceSummary:
    """Monte Carlo DIC from constrained draws of the Gaussian approximation."""
    if n_draws < 2:
        raise ValidationError("n_draws must be at least 2")
    rng = gmrf.make_rng(seed)
    A, y = lm.design, lm.y
    dev_sum = 0.0
    x_sum = np.zeros(lm.n)
    done = 0
    while done < n_draws:
        k = min(chunk, n_draws - done)
        xs = approx.sample(k, rng)
        eta = A @ xs.T
        dev = -2.0 * (y @ eta - np.logaddexp(0.0, eta).sum(axis=0))
        dev_sum += float(dev.sum())
        x_sum += xs.sum(axis=0)
        done += k
    d_bar = dev_sum / n_draws
    x_bar = x_sum / n_draws
    d_hat = -2.0 * loglik(y, A @ x_bar)[0]
    p_eff = d_bar - d_hat
    return DevianceSummary(d_bar, d_hat, p_eff, d_hat + 2.0 * p_eff)


@dataclass(eq=False)
class FitResult:
    spec: ModelSpec
    theta_hat: Mapping[str, float]
    mode: np.ndarray
    approximation: GaussianApproximation
    log_marginal_likelihood: float
    deviance_bar: float
    deviance_at_mean: float
    p_eff: float
    dic: float
    fixed_effects: Mapping[str, tuple[float, float]]
    n_observations: int
    latent_model: LatentModel

    def block(self, name: str) -> dict:
        """Posterior mode of one latent block keyed by its labels."""
        sl = self.latent_model.layout[name]
        return dict(zip(self.latent_model.block_labels[name], self.mode[sl]))

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.tokens,
            "label": self.spec.label,
            "n_observations": self.n_observations,
            "dic": self.dic,
            "p_eff": self.p_eff,
            "deviance_bar": self.deviance_bar,
            "deviance_at_mean": self.deviance_at_mean,
            "log_marginal_likelihood": self.log_marginal_likelihood,
            "theta_hat": dict(self.theta_hat),
            "fixed_effects": {
                name: {"mean": m, "sd": s} for name, (m, s) in self.fixed_effects.items()
            },
            "age_standardization": {
                "mean": self.latent_model.age_center,
                "sd": self.latent_model.age_scale,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def fit(ds: Dataset, spec: ModelSpec, seed=1, n_draws: int = 1000, max_evals: int = 200) -> FitResult:
    """Optimize hyperparameters, take the Gaussian approximation there, and compute DIC."""
    lm = build_latent_model(ds, spec)
    eng = _Engine(lm)
    theta, _ = _optimize(eng, max_evals)
    approx = _newton(eng, theta)
    log_ml = _laplace_log_marginal(eng, theta, approx) if len(ds) else 0.0
    summary = compute_dic(lm, approx, n_draws=n_draws, seed=seed)
    fixed_idx = list(range(lm.layout.fixed.start, lm.layout.fixed.stop))
    sds = approx.marginal_sd(fixed_idx)
    fixed = {
        name: (float(approx.mode[i]), float(sd)) for name, i, sd in zip(spec.fixed, fixed_idx, sds)
    }
    return FitResult(
        spec=spec,
        theta_hat={name: float(t) for name, t in zip(spec.latent, theta)},
        mode=approx.mode,
        approximation=approx,
        log_marginal_likelihood=float(log_ml),
        deviance_bar=summary.deviance_bar,
        deviance_at_mean=summary.deviance_at_mean,
        p_eff=summary.p_eff,
        dic=summary.dic,
        fixed_effects=fixed,
        n_observations=len(ds),
        latent_model=lm,
    )
