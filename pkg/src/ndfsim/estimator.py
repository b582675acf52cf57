"""scikit-learn style wrapper around scenario training and field queries."""
from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .config import ScenarioConfig
from .geometry import eval_reference
from .ndf import displacement
from .scenarios import apply_profile, get_scenario


class NeuralClothSimulator(BaseEstimator, TransformerMixin):
    """Train a neural deformation field for one scenario and query it.

    ``fit`` ignores ``X`` (the training signal is the physics loss).
    ``predict`` maps query points ``X`` of shape ``(n, 2)`` (quasi-static)
    or ``(n, 3)`` (``xi1, xi2, t``) to displacements; ``transform`` returns
    deformed positions ``x_bar + u``.
    """

    def __init__(self, scenario="square-plate", profile="ci", iterations=None, seed=0,
                 lr=None, output_scale=None, nonlinear=None, material=None):
        self.scenario = scenario
        self.profile = profile
        self.iterations = iterations
        self.seed = seed
        self.lr = lr
        self.output_scale = output_scale
        self.nonlinear = nonlinear
        self.material = material

    def _config(self) -> ScenarioConfig:
        cfg = self.scenario if isinstance(self.scenario, ScenarioConfig) else get_scenario(self.scenario)
        if self.profile is not None:
            cfg = apply_profile(cfg, self.profile)
        tr = {"seed": self.seed}
        if self.lr is not None:
            tr["lr"] = self.lr
        if self.output_scale is not None:
            tr["output_scale"] = self.output_scale
        if self.nonlinear is not None:
            tr["nonlinear"] = bool(self.nonlinear)
        if self.iterations is not None:
            tr["iterations"] = int(self.iterations)
        return replace(cfg, training=replace(cfg.training, **tr), sampling=replace(cfg.sampling, seed=self.seed))

    def fit(self, X=None, y=None, **train_kw):
        from .trainer import train

        self.problem_ = self._config().compile()
        self.weights_, self.report_ = train(self.problem_, **train_kw)
        self.n_features_in_ = 3 if self.problem_.dynamic else 2
        return self

    def _query(self, X):
        check_is_fitted(self, "weights_")
        X = check_array(X, dtype=np.float64, ensure_min_features=2)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns (xi1, xi2[, t]), got {X.shape[1]}")
        xi = X[:, :2]
        t = X[:, 2] if self.problem_.dynamic else None
        phi = None
        if self.problem_.model.embedding.material_ranges:
            phi = (self.material or self.problem_.material.as_dict())
        return xi, t, phi

    def predict(self, X):
        xi, t, phi = self._query(X)
        return displacement(xi, t, phi, self.weights_, self.problem_.model)

    def transform(self, X):
        xi, _, _ = self._query(X)
        return eval_reference(self.problem_.surface, xi)[0] + self.predict(X)

    def score(self, X=None, y=None):
        """Negative final training loss (higher is better)."""
        check_is_fitted(self, "report_")
        return -self.report_.loss[-1] if self.report_.loss else float("nan")
