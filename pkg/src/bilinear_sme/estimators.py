"""scikit-learn style wrappers around the feature map and both estimators.

Samples are rows. ``BilinearFeatures`` maps ``[x_t, u_t]`` rows to the
regressors ``z_t``; the estimators take regressor rows ``X`` and next-state
rows ``y`` and expose the fitted parameter matrix as ``coef_`` with shape
``(n_states, n_features)``, so ``predict(X) = X @ coef_.T``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .model import regressor_matrix
from .ols import ols_confidence_diameter, ols_fit_arrays, ols_region_contains
from .sme import (DEFAULT_PRIOR_R0, FeasibleSet, chebyshev_center, default_n_directions,
                  diameter, random_directions)
from .stochastic import make_rng


def validate_samples(X, y=None, n_features: int | None = None):
    """Finite 2-D float rows, with ``y`` promoted to 2-D."""
    if y is None:
        X = check_array(X, dtype=float, ensure_min_samples=0)
    else:
        X, y = check_X_y(X, y, dtype=float, multi_output=True, y_numeric=True,
                         ensure_min_samples=1)
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, expected {n_features}")
    return X if y is None else (X, y)


class BilinearFeatures(TransformerMixin, BaseEstimator):
    """``[x, u] -> [x, u (x) x]`` for rows holding ``n_states`` state entries first."""

    def __init__(self, n_states: int = 1):
        self.n_states = n_states

    def fit(self, X, y=None):
        X = validate_samples(X)
        if not 1 <= self.n_states <= X.shape[1]:
            raise ValueError(f"n_states={self.n_states} incompatible with {X.shape[1]} columns")
        self.n_features_in_ = X.shape[1]
        self.n_inputs_ = X.shape[1] - self.n_states
        return self

    def transform(self, X):
        check_is_fitted(self, "n_inputs_")
        X = validate_samples(X, n_features=self.n_features_in_)
        return regressor_matrix(X[:, :self.n_states], X[:, self.n_states:])

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "n_inputs_")
        n = self.n_states
        names = [f"x{i}" for i in range(n)]
        names += [f"u{k}*x{i}" for k in range(self.n_inputs_) for i in range(n)]
        return np.asarray(names, dtype=object)


class SetMembershipEstimator(RegressorMixin, BaseEstimator):
    """Feasible-set estimator for box-bounded noise.

    ``coef_`` is the row-wise Chebyshev center of the feasible set.
    ``diameter()`` bounds the set's Frobenius diameter using a direction set
    drawn once from ``random_state`` at fit time, so repeated calls after
    ``partial_fit`` use the same directions.
    """

    def __init__(self, w_max: float = 1.0, prior_radius: float = DEFAULT_PRIOR_R0,
                 n_directions: int | None = None, refine: int = 10, random_state: int = 0):
        self.w_max = w_max
        self.prior_radius = prior_radius
        self.n_directions = n_directions
        self.refine = refine
        self.random_state = random_state

    def fit(self, X, y):
        X, y = validate_samples(X, y)
        self.feasible_set_ = FeasibleSet(X, y, self.w_max, self.prior_radius)
        count = default_n_directions(X.shape[1]) if self.n_directions is None else self.n_directions
        self.directions_ = random_directions(X.shape[1], count, make_rng(self.random_state))
        self._hints = None
        self._refresh()
        return self

    def partial_fit(self, X, y):
        if not hasattr(self, "feasible_set_"):
            return self.fit(X, y)
        X, y = validate_samples(X, y, n_features=self.n_features_in_)
        self.feasible_set_ = self.feasible_set_.extend(X, y)
        self._refresh()
        return self

    def _refresh(self):
        fs = self.feasible_set_
        centers = [chebyshev_center(row) for row in fs.rows]
        self.coef_ = np.vstack([c for c, _ in centers])
        self.inscribed_radius_ = np.array([r for _, r in centers])
        self.n_features_in_ = fs.dim
        self.n_samples_seen_ = fs.T

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = validate_samples(X, n_features=self.n_features_in_)
        return X @ self.coef_.T

    def contains(self, theta, tol: float = 1e-9) -> bool:
        check_is_fitted(self, "feasible_set_")
        return self.feasible_set_.contains(theta, tol)

    def diameter(self):
        """:class:`~bilinear_sme.sme.DiameterReport` for the current set."""
        check_is_fitted(self, "feasible_set_")
        report = diameter(self.feasible_set_, directions=self.directions_, refine=self.refine,
                          hints=self._hints)
        self._hints = report.geometries
        return report


class OLSEstimator(RegressorMixin, BaseEstimator):
    """Least squares with optional ridge and a confidence-region diameter."""

    def __init__(self, ridge: float = 0.0, w_max: float = 1.0, level: float = 0.9,
                 confidence_ridge: float = 1.0):
        self.ridge = ridge
        self.w_max = w_max
        self.level = level
        self.confidence_ridge = confidence_ridge

    def fit(self, X, y):
        X, y = validate_samples(X, y)
        self.result_ = ols_fit_arrays(X, y, self.ridge)
        self.coef_ = self.result_.theta_hat
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = validate_samples(X, n_features=self.n_features_in_)
        return X @ self.coef_.T

    def confidence_diameter(self) -> float:
        check_is_fitted(self, "result_")
        return ols_confidence_diameter(self.result_, self.level, self.w_max,
                                       self.confidence_ridge).diameter

    def contains(self, theta) -> bool:
        check_is_fitted(self, "result_")
        return ols_region_contains(self.result_, theta, self.level, self.w_max,
                                   self.confidence_ridge)
