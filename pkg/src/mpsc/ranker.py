"""Scikit-learn style estimator around the score propagation solver.

The propagation core is fit-shaped: X is a symmetric nonnegative adjacency
matrix, y is the per-vertex prior, and fitting yields one confidence score
per vertex. Wrapping it in a ``BaseEstimator`` gives ``get_params`` /
``set_params`` / ``clone`` compatibility so the ranker slots into pipelines,
grid search and everything else in the ecosystem.

    >>> import numpy as np
    >>> from mpsc.ranker import ConsistencyPropagation
    >>> w = np.array([[0.0, 1.0], [1.0, 0.0]])
    >>> model = ConsistencyPropagation(alpha=0.5).fit(w, np.array([1.0, 0.0]))
    >>> np.round(model.scores_, 6)
    array([0.666667, 0.333333])
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import solver

__all__ = ["ConsistencyPropagation", "check_adjacency", "check_prior"]


def check_adjacency(w, *, tol: float = 1e-12) -> np.ndarray:
    """Validate an adjacency matrix: square, finite, symmetric, weights in [0, 1]."""
    w = check_array(w, ensure_2d=True, dtype=float, ensure_min_samples=0)
    if w.shape[0] != w.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {w.shape}")
    if w.size and not np.allclose(w, w.T, atol=tol, rtol=0.0):
        raise ValueError("adjacency must be symmetric")
    if w.size and (w.min() < -tol or w.max() > 1.0 + tol):
        raise ValueError("adjacency weights must lie in [0, 1]")
    return w


def check_prior(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if y.shape != (n,):
        raise ValueError(f"prior must have length {n}, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("prior must be finite")
    return y


class ConsistencyPropagation(BaseEstimator):
    """Propagate a prior over a weighted graph to get per-vertex confidence.

    Parameters
    ----------
    alpha : float in (0, 1)
        Trade-off between graph agreement and prior fidelity. Higher alpha
        trusts edges more.
    epsilon : float
        L2 convergence threshold between successive iterates.
    max_iterations : int
        Iteration budget for the fixed-point method.
    method : {"iterative", "closed"}
        Fixed-point iteration or direct linear solve. Both yield the same
        scores to solver tolerance.

    Attributes
    ----------
    scores_ : ndarray of shape (n_vertices,)
        Confidence per vertex after fitting.
    n_iter_ : int
        Update steps performed (0 for the closed form).
    converged_ : bool
    residual_ : float
        Final L2 distance between successive iterates (iterative) or the
        fixed-point residual of the returned vector (closed form).
    """

    def __init__(
        self,
        alpha: float = 0.5,
        epsilon: float = 1e-9,
        max_iterations: int = 10_000,
        method: str = "iterative",
    ):
        self.alpha = alpha
        self.epsilon = epsilon
        self.max_iterations = max_iterations
        self.method = method

    def _config(self) -> solver.SolverConfig:
        return solver.SolverConfig(
            alpha=self.alpha,
            epsilon=self.epsilon,
            max_iterations=self.max_iterations,
            method=self.method,
        )

    def fit(self, X, y):
        """Fit on an adjacency matrix X and prior vector y."""
        config = self._config()  # validates parameters eagerly
        w = check_adjacency(X)
        y = check_prior(y, w.shape[0])
        if config.method == "closed":
            scores, residual = solver.closed_form(w, y, config.alpha)
            iterations, converged = 0, residual <= config.epsilon
        else:
            scores, iterations, converged, residual = solver.propagate(
                w, y, config.alpha, config.epsilon, config.max_iterations
            )
        self.scores_ = scores
        self.n_iter_ = iterations
        self.converged_ = converged
        self.residual_ = residual
        return self

    def fit_transform(self, X, y) -> np.ndarray:
        return self.fit(X, y).scores_

    def transform(self, X=None) -> np.ndarray:
        """Return the fitted scores; X is accepted for pipeline compatibility."""
        check_is_fitted(self, "scores_")
        return self.scores_
