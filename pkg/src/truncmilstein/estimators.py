"""scikit-learn compatible wrappers.

``SchemeSimulator`` is a transformer mapping Brownian increment arrays to
simulated states; ``StrongOrderRegressor`` fits the log-log error line.
Both support ``get_params``/``set_params`` and ``clone``.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import UsageError
from .experiments import fit_order, make_policy
from .integrators import SCHEMES, TRUNCATED_MILSTEIN, is_truncated, simulate_batch
from .sde_core import builtin_model
from .truncation import TruncationContext, validate_policy


class SchemeSimulator(TransformerMixin, BaseEstimator):
    """Simulate a registered model with one of the built-in schemes.

    Parameters
    ----------
    model : str
        Registry name, see :func:`truncmilstein.sde_core.builtin_model`.
    scheme : str
    step : float
        Grid step the increments are drawn on.
    exponent, epsilon, delta_star : float
        Power-family truncation policy; ignored by untruncated schemes.
    model_params : dict or None
    return_path : bool
        If true ``transform`` returns every state, shape ``(M, N + 1, d)``.
    """

    def __init__(self, model="paper-example", scheme=TRUNCATED_MILSTEIN, step=2.0**-10,
                 exponent=5.0, epsilon=0.1, delta_star=1.0, model_params=None,
                 return_path=False):
        self.model = model
        self.scheme = scheme
        self.step = step
        self.exponent = exponent
        self.epsilon = epsilon
        self.delta_star = delta_star
        self.model_params = model_params
        self.return_path = return_path

    def fit(self, X=None, y=None):
        """Resolve the model and validate the policy.  ``X`` is ignored."""
        if self.scheme not in SCHEMES:
            raise UsageError(f"unknown scheme {self.scheme!r}")
        self.system_ = builtin_model(self.model, **(self.model_params or {}))
        if is_truncated(self.scheme):
            policy = make_policy({"family": "power", "exponent": self.exponent,
                                  "epsilon": self.epsilon, "delta_star": self.delta_star})
            validate_policy(policy).raise_if_failed()
            self.ctx_ = TruncationContext(policy, self.step)
        else:
            self.ctx_ = None
        self.n_features_in_ = self.system_.noise_dim
        return self

    def transform(self, X):
        """Run the scheme over increments ``X`` of shape ``(M, N, m)``.

        A 2-D array is read as ``(M, N)`` for single-noise models.
        """
        check_is_fitted(self, "system_")
        X = np.asarray(X, dtype=float)
        if X.ndim == 2 and self.system_.noise_dim == 1:
            X = X[..., None]
        if X.ndim != 3 or X.shape[-1] != self.system_.noise_dim:
            raise UsageError(
                f"expected increments of shape (M, N, {self.system_.noise_dim})")
        check_array(X.reshape(X.shape[0], -1), ensure_all_finite=True)
        states, blowup = simulate_batch(self.system_, self.scheme, X, self.step, self.ctx_,
                                        record=self.return_path)
        self.blowup_ = blowup
        return states


class StrongOrderRegressor(RegressorMixin, BaseEstimator):
    """Fit ``log2(error) = intercept + slope * log2(step)``.

    ``fit`` takes step sizes as a single-feature ``X`` and positive errors
    as ``y``.  ``score`` is R^2 on the original scale.
    """

    def __init__(self):
        pass

    def fit(self, X, y):
        X = check_array(X, ensure_2d=False).reshape(-1)
        y = check_array(np.asarray(y, dtype=float), ensure_2d=False).reshape(-1)
        if X.shape != y.shape:
            raise UsageError("X and y must have the same length")
        self.slope_, self.intercept_, self.halfwidth_ = fit_order(zip(X, y))
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "slope_")
        X = check_array(X, ensure_2d=False).reshape(-1)
        return 2.0 ** (self.intercept_ + self.slope_ * np.log2(X))
