"""scikit-learn compatible wrapper around :func:`hydrocar.inference.fit`."""

from __future__ import annotations

import numpy as np
import pandas as pd
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted, column_or_1d

from .exceptions import ValidationError
from .inference import fit
from .model import GRAPH, HOUSEHOLD, LATENT_EFFECTS, SPATIAL, Dataset, ModelSpec
from .network import WaterNetwork


def _as_frame(X) -> pd.DataFrame:
    if isinstance(X, Dataset):
        return pd.DataFrame(
            {
                "age": X.age, "gender": X.gender, "house_id": X.house_id,
                "node_id": X.node_id, "x": X.location[:, 0], "y": X.location[:, 1],
            }
        )
    if isinstance(X, pd.DataFrame):
        return X
    raise TypeError("X must be a pandas DataFrame or a hydrocar Dataset")


class WaterNetworkClassifier(ClassifierMixin, BaseEstimator):
    """Bernoulli-logit model with household, spatial and water-graph effects.

    Parameters
    ----------
    network : WaterNetwork
        Pipe network the ``node_id`` column refers to.
    effects : str
        Comma-separated tokens from ``age, gender, house, spatial, graph``.
    cell_size : float
        Spatial lattice cell size in meters.
    weighting : {"distance", "border"}
        How the water-graph precision weights its edges.
    hyperprior_shape, hyperprior_rate : float
        Gamma prior on every latent precision.
    fixed_prior_precision : float
        Gaussian prior precision of the fixed-effect coefficients.
    n_draws : int
        Posterior draws used for the DIC.
    random_state : int
        Seed for the DIC draws.

    ``X`` is a DataFrame with columns ``age, gender, house_id, node_id`` and,
    when the spatial effect is used, ``x, y`` in meters.
    """

    def __init__(
        self,
        network: WaterNetwork | None = None,
        effects: str = "age,gender,graph",
        cell_size: float = 1000.0,
        weighting: str = "distance",
        hyperprior_shape: float = 1.0,
        hyperprior_rate: float = 5e-5,
        fixed_prior_precision: float = 1e-3,
        n_draws: int = 1000,
        random_state: int = 1,
    ):
        self.network = network
        self.effects = effects
        self.cell_size = cell_size
        self.weighting = weighting
        self.hyperprior_shape = hyperprior_shape
        self.hyperprior_rate = hyperprior_rate
        self.fixed_prior_precision = fixed_prior_precision
        self.n_draws = n_draws
        self.random_state = random_state

    def _spec(self) -> ModelSpec:
        prior = (self.hyperprior_shape, self.hyperprior_rate)
        return ModelSpec.parse(
            self.effects,
            hyperprior={name: prior for name in LATENT_EFFECTS},
            fixed_prior_precision=self.fixed_prior_precision,
            cell_size=self.cell_size,
            weighting=self.weighting,
        )

    def _dataset(self, frame: pd.DataFrame, y) -> Dataset:
        missing = [c for c in ("age", "gender", "house_id", "node_id") if c not in frame.columns]
        if missing:
            raise ValidationError(f"X is missing column(s) {', '.join(missing)}")
        n = len(frame)
        loc = (
            frame[["x", "y"]].to_numpy(dtype=float)
            if {"x", "y"} <= set(frame.columns)
            else np.full((n, 2), np.nan)
        )
        return Dataset(
            ids=np.array([str(i) for i in frame.index], dtype=object),
            outcome=y,
            age=frame["age"].to_numpy(dtype=float),
            gender=frame["gender"].to_numpy(dtype=int),
            house_id=frame["house_id"].astype(str).to_numpy(dtype=object),
            node_id=frame["node_id"].astype(str).to_numpy(dtype=object),
            location=loc,
            network=self.network,
        )

    def fit(self, X, y=None):
        if self.network is None:
            raise ValidationError("network must be set before fitting")
        frame = _as_frame(X)
        if y is None:
            if not isinstance(X, Dataset):
                raise ValidationError("y is required unless X is a Dataset")
            y = X.outcome
        y = column_or_1d(y, warn=True)
        if not set(np.unique(y)) <= {0, 1}:
            raise ValidationError("y must be binary")
        self.classes_ = np.array([0, 1])
        y = y.astype(int)
        ds = self._dataset(frame, y)
        result = fit(ds, self._spec(), seed=self.random_state, n_draws=self.n_draws)
        self.result_ = result
        self.dic_ = result.dic
        self.p_eff_ = result.p_eff
        self.theta_ = dict(result.theta_hat)
        self.coef_ = {name: m for name, (m, _) in result.fixed_effects.items()}
        lm = result.latent_model
        self.age_center_, self.age_scale_ = lm.age_center, lm.age_scale
        self.effects_ = {name: result.block(name) for name in lm.spec.latent}
        if SPATIAL in lm.spec.latent:
            self.lattice_origin_ = ds.location.min(axis=0)
        self.n_features_in_ = frame.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        """Posterior-mode log-odds; unseen households and cells contribute 0."""
        check_is_fitted(self, "result_")
        frame = _as_frame(X)
        eta = np.full(len(frame), self.coef_["intercept"])
        if "age" in self.coef_:
            eta += self.coef_["age"] * (frame["age"].to_numpy(float) - self.age_center_) / self.age_scale_
        if "gender" in self.coef_:
            eta += self.coef_["gender"] * frame["gender"].to_numpy(float)
        if HOUSEHOLD in self.effects_:
            eff = self.effects_[HOUSEHOLD]
            eta += np.array([eff.get(str(h), 0.0) for h in frame["house_id"]])
        if SPATIAL in self.effects_:
            eff = self.effects_[SPATIAL]
            xy = frame[["x", "y"]].to_numpy(float)
            cells = np.floor((xy - self.lattice_origin_) / self.cell_size)
            eta += np.array([eff.get((int(c), int(r)), 0.0) for c, r in cells])
        if GRAPH in self.effects_:
            eff = self.effects_[GRAPH]
            unknown = sorted({str(v) for v in frame["node_id"]} - set(eff))
            if unknown:
                raise ValidationError(f"unknown node(s) {', '.join(unknown[:10])}")
            eta += np.array([eff[str(v)] for v in frame["node_id"]])
        return eta

    def predict_proba(self, X) -> np.ndarray:
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) > 0).astype(int)


