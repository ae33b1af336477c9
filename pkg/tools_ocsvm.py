"""
nu one-class SVM with an RBF kernel, solved by SMO on the dual

    min_a  0.5 * a' K a   s.t.  sum(a) = 1,  0 <= a_i <= 1 / (nu * n)

using maximal-violating-pair working set selection. Kernel columns are computed on demand
and cached, so the full Gram matrix is never materialised.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Union

import numpy as np
from scipy.spatial.distance import cdist

logger = logging.getLogger(__name__)

NORMAL = 'normal'
ANOMALY = 'anomaly'

# Floor for the curvature of a working pair, as in libsvm's TAU.
MIN_CURVATURE = 1e-12
CHUNK_ROWS = 4096


@dataclass(frozen=True)
class OcsvmConfig:
    """
    Attributes:
        nu (float): Upper bound on the training outlier fraction, in (0, 1].
        gamma (float, optional): RBF width; None means 1 / d at fit time.
        tolerance (float): Stop when the maximal KKT violation drops to this value.
        max_iterations (int): Maximum number of pair updates.
        cache_size (int): Number of kernel columns kept in memory.
    """
    nu: float = 0.05
    gamma: Optional[float] = None
    tolerance: float = 1e-4
    max_iterations: int = 1_000_000
    cache_size: int = 1024

    def __post_init__(self):
        if not 0 < self.nu <= 1:
            raise ValueError(f"nu must lie in (0, 1], got {self.nu}")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be > 0, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")


@dataclass(frozen=True)
class OcsvmModel:
    """
    Fitted one-class SVM. Only points with a non-zero dual coefficient are stored.

    Attributes:
        support_vectors (np.ndarray): (k, d) retained training points.
        alpha (np.ndarray): (k,) dual coefficients, each in (0, upper_bound].
        rho (float): Offset of the decision function.
        gamma (float): RBF width used at fit time.
        upper_bound (float): Box constraint 1 / (nu * n_train).
        converged (bool): False when max_iterations stopped the solver.
        iterations (int): Pair updates performed.
        tolerance (float): KKT tolerance of the solve. Decisions within it of 0 are ties.
    """
    support_vectors: np.ndarray
    alpha: np.ndarray
    rho: float
    gamma: float
    upper_bound: float
    converged: bool = True
    iterations: int = 0
    tolerance: float = 0.0

    @property
    def n_dimensions(self) -> int:
        return self.support_vectors.shape[1]


def rbf_kernel(x, y, gamma: float) -> float:
    """exp(-gamma * ||x - y||^2) for two vectors of equal length."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    return float(np.exp(-gamma * np.sum((x - y) ** 2)))


def rbf_gram(X, Y, gamma: float) -> np.ndarray:
    """Pairwise RBF kernel matrix between the rows of X and Y."""
    return np.exp(-gamma * cdist(np.atleast_2d(X), np.atleast_2d(Y), 'sqeuclidean'))


def _expansion(support_vectors: np.ndarray, alpha: np.ndarray, gamma: float, points: np.ndarray) -> np.ndarray:
    """sum_i alpha_i K(sv_i, x) for every row x of points."""
    values = np.empty(points.shape[0])
    for start in range(0, points.shape[0], CHUNK_ROWS):
        block = rbf_gram(points[start:start + CHUNK_ROWS], support_vectors, gamma)
        values[start:start + CHUNK_ROWS] = (block * alpha).sum(axis=1)
    return values


def _initial_alpha(n: int, upper_bound: float, nu: float) -> np.ndarray:
    alpha = np.zeros(n)
    n_full = min(n, int(np.floor(nu * n + 1e-9)))
    alpha[:n_full] = upper_bound
    if n_full < n:
        alpha[n_full] = max(0.0, 1.0 - n_full * upper_bound)
    return alpha


def fit(residuals, config: OcsvmConfig = None) -> OcsvmModel:
    """
    Fit the one-class SVM on residual vectors.

    Args:
        residuals (np.ndarray): (n, d) training matrix, n >= 2.
        config (OcsvmConfig, optional): Solver settings; defaults when None.

    Returns:
        OcsvmModel: Model with sum(alpha) = 1 over the training points.
    """
    if config is None:
        config = OcsvmConfig()
    X = np.asarray(residuals, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"residuals must be a 2-D matrix, got shape {X.shape}")
    n, d = X.shape
    if n < 2:
        raise ValueError(f"need at least 2 training vectors, got {n}")
    gamma = config.gamma if config.gamma is not None else 1.0 / d
    upper_bound = 1.0 / (config.nu * n)

    @lru_cache(maxsize=config.cache_size)
    def column(i):
        return rbf_gram(X, X[i:i + 1], gamma)[:, 0]

    alpha = _initial_alpha(n, upper_bound, config.nu)
    grad = np.zeros(n)
    for i in np.flatnonzero(alpha):
        grad += alpha[i] * column(i)

    converged = False
    iterations = 0
    while iterations < config.max_iterations:
        # i can still grow, j can still shrink
        i = int(np.where(alpha < upper_bound, grad, np.inf).argmin())
        j = int(np.where(alpha > 0, grad, -np.inf).argmax())
        if grad[j] - grad[i] <= config.tolerance:
            converged = True
            break

        column_i, column_j = column(i), column(j)
        curvature = max(column_i[i] + column_j[j] - 2 * column_i[j], MIN_CURVATURE)
        step = (grad[j] - grad[i]) / curvature
        old_i, old_j = alpha[i], alpha[j]
        if step >= old_j:
            step = old_j
        if step >= upper_bound - old_i:
            step = upper_bound - old_i
            alpha[i] = upper_bound
            alpha[j] = old_j - step
        elif step == old_j:
            alpha[i] = old_i + old_j
            alpha[j] = 0.0
        else:
            alpha[i] = old_i + step
            alpha[j] = old_j - step

        grad += (alpha[i] - old_i) * column_i + (alpha[j] - old_j) * column_j
        iterations += 1

    if not converged:
        logger.warning("OCSVM solver did not converge after %d iterations (violation %.3g > %.3g)",
                       iterations, grad[j] - grad[i], config.tolerance)
    else:
        logger.info("OCSVM converged after %d iterations", iterations)

    keep = alpha > 0
    support_vectors = X[keep].copy()
    kept_alpha = alpha[keep].copy()
    # recompute the expansion exactly instead of trusting the incremental gradient
    expansion = _expansion(support_vectors, kept_alpha, gamma, X)

    margin = keep & (alpha < upper_bound)
    if np.ptp(X, axis=0).max() == 0:
        rho = float(expansion.min())
    elif margin.any():
        rho = float(expansion[margin].mean())
    else:
        at_upper = alpha >= upper_bound
        at_zero = ~keep
        bounds = []
        if at_upper.any():
            bounds.append(expansion[at_upper].max())
        if at_zero.any():
            bounds.append(expansion[at_zero].min())
        rho = float(np.mean(bounds))

    logger.info("OCSVM kept %d of %d training vectors, rho = %.6f", support_vectors.shape[0], n, rho)
    return OcsvmModel(support_vectors, kept_alpha, rho, gamma, upper_bound, converged, iterations, config.tolerance)


def decision(model: OcsvmModel, residual) -> Union[float, np.ndarray]:
    """
    sum_i alpha_i K(sv_i, r) - rho. Positive values lie inside the normal region.

    Args:
        model (OcsvmModel): Fitted model.
        residual (np.ndarray): One (d,) vector or an (N, d) batch.

    Returns:
        float or np.ndarray: Decision value(s).
    """
    points = np.asarray(residual, dtype=float)
    single = points.ndim == 1
    points = np.atleast_2d(points)
    if points.ndim != 2 or points.shape[1] != model.n_dimensions:
        raise ValueError(f"residual dimension {points.shape[-1]} does not match model dimension {model.n_dimensions}")
    values = _expansion(model.support_vectors, model.alpha, model.gamma, points) - model.rho
    return float(values[0]) if single else values


def label_from_decision(value: float, tolerance: float = 0.0) -> str:
    """
    Anomaly only below -tolerance; ties count as normal.

    Margin support vectors sit within the solver tolerance of 0 on either side, so a fitted
    model passes its own tolerance here.
    """
    return ANOMALY if value < -tolerance else NORMAL


def predict(model: OcsvmModel, residual) -> Union[str, List[str]]:
    """Return 'normal' or 'anomaly' for one vector, or a list of labels for a batch."""
    values = decision(model, residual)
    if np.ndim(values) == 0:
        return label_from_decision(values, model.tolerance)
    return [label_from_decision(value, model.tolerance) for value in values]


def dual_objective(model: OcsvmModel) -> float:
    """0.5 * alpha' K alpha over the retained support vectors."""
    gram = rbf_gram(model.support_vectors, model.support_vectors, model.gamma)
    return float(0.5 * model.alpha @ gram @ model.alpha)
