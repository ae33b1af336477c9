"""
Attribution of window anomaly scores to individual (timestep, feature) cells.

gradient_shap estimates Shapley values from expected gradients along straight paths between
random background windows and the explained window. exact_shapley enumerates every coalition
and is used to check the estimator on small inputs.
"""
import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import factorial

from tools_autoencoder import AutoencoderModel, output_gradient, score_and_input_gradient

logger = logging.getLogger(__name__)

MAX_EXACT_PLAYERS = 20
MAX_PERMUTATION_PLAYERS = 8
GRADIENT_BATCH = 256

# A batch scorer maps (k, l, m) points to (scores (k,), gradients (k, l, m)).
ScoreWithGradient = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]
Score = Callable[[np.ndarray], np.ndarray]
# Bool array of length M, True for every present player.
CoalitionVector = np.ndarray


@dataclass(frozen=True)
class ShapleyGame:
    """
    Cooperative game over M players.

    Attributes:
        n_players (int): M.
        value (callable): Maps a coalition vector (bool array of length M, True = present) to a real.
    """
    n_players: int
    value: Callable[[CoalitionVector], float]


def coalition_vector(members: Sequence[int], n_players: int) -> CoalitionVector:
    """Binary coalition vector z' with z'_k = 1 for every member k."""
    z = np.zeros(n_players, dtype=bool)
    z[list(members)] = True
    return z


@dataclass(frozen=True)
class AttributionMatrix:
    """
    Attributions for one window.

    Attributes:
        values (np.ndarray): (l, m) attribution per cell.
        baseline_expectation (float): Mean score over the baseline windows.
        score (float): Score of the explained window.
    """
    values: np.ndarray
    baseline_expectation: float
    score: float

    @property
    def completeness_gap(self) -> float:
        """|sum of attributions - (score - baseline expectation)|."""
        return float(abs(self.values.sum() - (self.score - self.baseline_expectation)))


@dataclass(frozen=True)
class BaselineSet:
    windows: np.ndarray

    def __post_init__(self):
        windows = np.asarray(self.windows, dtype=float)
        if windows.ndim != 3 or windows.shape[0] < 1:
            raise ValueError("a baseline set needs at least one (l, m) window")
        object.__setattr__(self, 'windows', windows)

    @property
    def size(self) -> int:
        return self.windows.shape[0]


@dataclass(frozen=True)
class FeatureImportance:
    """
    Per-feature aggregation of one attribution matrix.

    Attributes:
        signed (np.ndarray): Sum over timesteps, per feature.
        mean_abs (np.ndarray): Mean absolute attribution over timesteps, per feature.
        ranking (np.ndarray): Feature indices by descending mean_abs, ties by index.
    """
    signed: np.ndarray
    mean_abs: np.ndarray
    ranking: np.ndarray

    def ranks(self) -> np.ndarray:
        """1-based rank of every feature, in feature order."""
        ranks = np.empty_like(self.ranking)
        ranks[self.ranking] = np.arange(1, self.ranking.size + 1)
        return ranks


def _shapley_weights(n_players: int) -> np.ndarray:
    """|S|! (M - |S| - 1)! / M! for |S| = 0 .. M - 1."""
    sizes = np.arange(n_players)
    return factorial(sizes) * factorial(n_players - sizes - 1) / factorial(n_players)


def exact_shapley(game: ShapleyGame) -> np.ndarray:
    """
    Shapley values by enumerating all 2^M coalitions.

    Args:
        game (ShapleyGame): Game with M <= 20 players.

    Returns:
        np.ndarray: phi of length M.
    """
    n = game.n_players
    if n > MAX_EXACT_PLAYERS:
        raise ValueError(f"exact Shapley enumeration is limited to {MAX_EXACT_PLAYERS} players, got {n}")
    if n < 1:
        raise ValueError("a game needs at least one player")

    masks = np.arange(2 ** n)
    members = ((masks[:, None] >> np.arange(n)) & 1).astype(bool)
    values = np.array([game.value(z) for z in members], dtype=float)
    sizes = members.sum(axis=1)
    weights = _shapley_weights(n)

    phi = np.empty(n)
    for k in range(n):
        without = masks[~members[:, k]]
        with_k = without | (1 << k)
        phi[k] = np.sum(weights[sizes[without]] * (values[with_k] - values[without]))
    return phi


def permutation_shapley(game: ShapleyGame) -> np.ndarray:
    """Shapley values as the mean marginal contribution over all M! player orderings (M <= 8)."""
    n = game.n_players
    if n > MAX_PERMUTATION_PLAYERS:
        raise ValueError(f"permutation enumeration is limited to {MAX_PERMUTATION_PLAYERS} players, got {n}")
    cache = {}

    def value(mask):
        if mask not in cache:
            cache[mask] = float(game.value(((mask >> np.arange(n)) & 1).astype(bool)))
        return cache[mask]

    totals = np.zeros(n)
    count = 0
    for order in itertools.permutations(range(n)):
        mask = 0
        for player in order:
            totals[player] += value(mask | (1 << player)) - value(mask)
            mask |= 1 << player
        count += 1
    return totals / count


def make_game_from_model(score_fn: Score, x, baselines: BaselineSet) -> ShapleyGame:
    """
    Baseline-replacement game over the l * m cells of a window.

    v(S) is the mean, over baselines b, of score_fn applied to x with every cell outside S
    replaced by the matching cell of b. Cells are numbered row-major.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != baselines.windows.shape[1:]:
        raise ValueError(f"window shape {x.shape} does not match baseline shape {baselines.windows.shape[1:]}")

    def value(z):
        mask = np.asarray(z, dtype=bool).reshape(x.shape)
        points = np.where(mask, x, baselines.windows)
        return float(np.mean(score_fn(points)))

    return ShapleyGame(x.size, value)


def gradient_shap(score_fn_with_gradient: ScoreWithGradient, x, baselines: BaselineSet,
                  n_samples: int = 200, seed: int = 0) -> AttributionMatrix:
    """
    Expected-gradients estimate of Shapley attributions.

    Each sample draws a baseline b uniformly from the set and alpha uniformly from (0, 1), and
    contributes (x - b) * grad s(b + alpha * (x - b)); the attribution is the sample mean.

    Args:
        score_fn_with_gradient (callable): Batch scorer returning (scores, gradients).
        x (np.ndarray): (l, m) window to explain.
        baselines (BaselineSet): Background windows.
        n_samples (int): Monte Carlo draws, >= 1.
        seed (int): Seed of the draws.

    Returns:
        AttributionMatrix: Mean attributions, baseline expectation and the score of x.
    """
    x = np.asarray(x, dtype=float)
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if x.shape != baselines.windows.shape[1:]:
        raise ValueError(f"window shape {x.shape} does not match baseline shape {baselines.windows.shape[1:]}")

    rng = np.random.default_rng(seed)
    picks = rng.integers(0, baselines.size, size=n_samples)
    alphas = rng.uniform(np.nextafter(0.0, 1.0), 1.0, size=n_samples)

    total = np.zeros_like(x)
    for start in range(0, n_samples, GRADIENT_BATCH):
        chosen = baselines.windows[picks[start:start + GRADIENT_BATCH]]
        steps = alphas[start:start + GRADIENT_BATCH, None, None]
        delta = x - chosen
        _, gradients = score_fn_with_gradient(chosen + steps * delta)
        total += (delta * gradients).sum(axis=0)

    baseline_scores, _ = score_fn_with_gradient(baselines.windows)
    score, _ = score_fn_with_gradient(x[None])
    return AttributionMatrix(total / n_samples, float(np.mean(baseline_scores)), float(score[0]))


def sample_baselines(windows, n_baselines: int = 100, seed: int = 0) -> BaselineSet:
    """
    Draw background windows uniformly without replacement.

    Args:
        windows (np.ndarray): (N, l, m) normal training windows.
        n_baselines (int): Requested set size; all windows are used when N is smaller.
        seed (int): Seed of the draw.

    Returns:
        BaselineSet: The sampled windows in draw order.
    """
    windows = np.asarray(windows, dtype=float)
    if windows.ndim != 3 or windows.shape[0] == 0:
        raise ValueError("need at least one window to sample baselines from")
    if n_baselines < 1:
        raise ValueError(f"n_baselines must be >= 1, got {n_baselines}")
    rng = np.random.default_rng(seed)
    count = min(n_baselines, windows.shape[0])
    picks = rng.choice(windows.shape[0], size=count, replace=False)
    return BaselineSet(windows[picks])


def aggregate_per_feature(attribution: AttributionMatrix) -> FeatureImportance:
    """
    Collapse an (l, m) attribution matrix to per-feature summaries.

    Returns:
        FeatureImportance: signed sum, mean absolute value and ranking (descending, ties by index).
    """
    values = np.asarray(attribution.values, dtype=float)
    signed = values.sum(axis=0)
    mean_abs = np.abs(values).mean(axis=0)
    ranking = np.lexsort((np.arange(values.shape[1]), -mean_abs))
    return FeatureImportance(signed, mean_abs, ranking)


def parse_target(target: str) -> Optional[int]:
    """None for the surrogate score, otherwise the flattened reconstruction index of 'flattened:<i>'."""
    if target == 'surrogate':
        return None
    prefix, _, index = target.partition(':')
    if prefix != 'flattened' or not index.isdigit():
        raise ValueError(f"explanation target must be 'surrogate' or 'flattened:<index>', got {target!r}")
    return int(index)


def autoencoder_score_fn(model: AutoencoderModel, target: str = 'surrogate') -> ScoreWithGradient:
    """
    Batch scorer over an autoencoder.

    'surrogate' explains s(X) = sum((X - X_hat) ** 2); 'flattened:<i>' explains cell i of the
    flattened reconstruction.
    """
    index = parse_target(target)
    if index is None:
        return lambda points: score_and_input_gradient(model, points)
    return lambda points: output_gradient(model, points, index)
