import itertools
import math

import numpy as np
import pytest

from tools_autoencoder import init_model, reconstruct
from tools_explain import (
    AttributionMatrix,
    BaselineSet,
    ShapleyGame,
    aggregate_per_feature,
    autoencoder_score_fn,
    coalition_vector,
    exact_shapley,
    gradient_shap,
    make_game_from_model,
    parse_target,
    permutation_shapley,
    sample_baselines,
)


def table_game(values):
    """Game whose value for coalition z is values[mask of z]."""
    n = int(np.log2(len(values)))
    weights = 1 << np.arange(n)
    return ShapleyGame(n, lambda z: values[int(np.dot(z, weights))])


def random_games(count=100, max_players=10):
    rng = np.random.default_rng(42)
    for _ in range(count):
        n = int(rng.integers(1, max_players + 1))
        yield table_game(rng.uniform(0, 1, size=2 ** n))


def quadratic_of_sum(points):
    totals = points.sum(axis=(1, 2))
    return totals ** 2, 2 * totals[:, None, None] * np.ones_like(points)


def test_efficiency():
    for game in random_games():
        phi = exact_shapley(game)
        full = game.value(np.ones(game.n_players, dtype=bool))
        empty = game.value(np.zeros(game.n_players, dtype=bool))
        assert phi.sum() == pytest.approx(full - empty, abs=1e-12)


def test_agrees_with_permutation_average():
    for game in random_games(count=30, max_players=6):
        np.testing.assert_allclose(exact_shapley(game), permutation_shapley(game), atol=1e-12)


def test_symmetry():
    sizes = np.random.default_rng(0).uniform(size=7)
    game = ShapleyGame(6, lambda z: sizes[int(np.sum(z))])
    phi = exact_shapley(game)
    np.testing.assert_allclose(phi, np.full(6, phi[0]), atol=1e-12)


def test_dummy_player():
    rng = np.random.default_rng(1)
    values = rng.uniform(size=2 ** 4)
    # player 4 never changes the value
    game = ShapleyGame(5, lambda z: values[int(np.dot(z[:4], 1 << np.arange(4)))])
    assert exact_shapley(game)[4] == pytest.approx(0.0, abs=1e-12)


def test_linearity():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(size=2 ** 5), rng.uniform(size=2 ** 5)
    combined = exact_shapley(table_game(2.0 * a + b))
    np.testing.assert_allclose(combined, 2.0 * exact_shapley(table_game(a)) + exact_shapley(table_game(b)),
                               atol=1e-12)


def test_additive_game_returns_weights():
    weights = np.array([0.5, -1.0, 2.0])
    game = ShapleyGame(3, lambda z: float(np.dot(z, weights)))
    np.testing.assert_allclose(exact_shapley(game), weights, atol=1e-12)


def test_single_player():
    game = ShapleyGame(1, lambda z: 3.0 if z[0] else 1.0)
    np.testing.assert_allclose(exact_shapley(game), [2.0])


def test_player_limits():
    with pytest.raises(ValueError):
        exact_shapley(ShapleyGame(21, lambda z: 0.0))
    with pytest.raises(ValueError):
        permutation_shapley(ShapleyGame(9, lambda z: 0.0))


def test_coalition_vector():
    np.testing.assert_array_equal(coalition_vector([0, 2], 4), [True, False, True, False])


def test_model_game_endpoints():
    x = np.array([[1.0, 2.0], [0.5, 1.5]])
    baselines = BaselineSet(np.random.default_rng(3).uniform(0, 0.5, size=(4, 2, 2)))
    score = lambda points: quadratic_of_sum(points)[0]
    game = make_game_from_model(score, x, baselines)

    assert game.n_players == 4
    assert game.value(np.ones(4, dtype=bool)) == pytest.approx(score(x[None])[0])
    assert game.value(np.zeros(4, dtype=bool)) == pytest.approx(score(baselines.windows).mean())


def test_gradient_shap_exact_for_linear_score():
    rng = np.random.default_rng(4)
    weights = rng.normal(size=(3, 2))

    def linear(points):
        return (points * weights).sum(axis=(1, 2)) + 0.7, np.broadcast_to(weights, points.shape).copy()

    x = rng.normal(size=(3, 2))
    baselines = BaselineSet(rng.normal(size=(5, 3, 2)))
    single = BaselineSet(baselines.windows[:1])
    expected = exact_shapley(make_game_from_model(lambda p: linear(p)[0], x, single)).reshape(3, 2)
    np.testing.assert_allclose(expected, (x - single.windows[0]) * weights, atol=1e-12)

    for n_samples in (1, 7, 100):
        result = gradient_shap(linear, x, single, n_samples=n_samples, seed=0)
        np.testing.assert_allclose(result.values, (x - single.windows[0]) * weights, atol=1e-10)
        assert result.completeness_gap <= 1e-10


def test_gradient_shap_matches_exact_on_nonlinear_score():
    x = np.array([[1.0, 2.0], [0.5, 1.5]])
    baselines = BaselineSet(np.random.default_rng(5).uniform(0, 0.5, size=(10, 2, 2)))
    exact = exact_shapley(make_game_from_model(lambda p: quadratic_of_sum(p)[0], x, baselines)).reshape(2, 2)

    result = gradient_shap(quadratic_of_sum, x, baselines, n_samples=50000, seed=0)

    np.testing.assert_allclose(result.values, exact, rtol=0.02)
    gap = result.score - result.baseline_expectation
    assert result.completeness_gap <= 0.01 * abs(gap)


def test_gradient_shap_closed_form_on_quadratic():
    x = np.array([[1.0, 2.0], [0.5, 1.5]])
    baselines = BaselineSet(np.random.default_rng(6).uniform(0, 0.5, size=(6, 2, 2)))
    exact = exact_shapley(make_game_from_model(lambda p: quadratic_of_sum(p)[0], x, baselines)).reshape(2, 2)
    closed = np.mean([(x - b) * (x.sum() + b.sum()) for b in baselines.windows], axis=0)
    np.testing.assert_allclose(exact, closed, atol=1e-12)


def test_gradient_shap_is_seeded():
    x = np.ones((2, 2))
    baselines = BaselineSet(np.random.default_rng(7).uniform(size=(5, 2, 2)))
    a = gradient_shap(quadratic_of_sum, x, baselines, n_samples=50, seed=1)
    b = gradient_shap(quadratic_of_sum, x, baselines, n_samples=50, seed=1)
    c = gradient_shap(quadratic_of_sum, x, baselines, n_samples=50, seed=2)

    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_gradient_shap_input_checks():
    baselines = BaselineSet(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        gradient_shap(quadratic_of_sum, np.zeros((3, 2)), baselines)
    with pytest.raises(ValueError):
        gradient_shap(quadratic_of_sum, np.zeros((2, 2)), baselines, n_samples=0)
    with pytest.raises(ValueError):
        BaselineSet(np.zeros((0, 2, 2)))


def test_gradient_shap_on_autoencoder_is_nearly_complete():
    model = init_model(2, 3, hidden_dim=4, latent_dim=2, seed=0)
    rng = np.random.default_rng(8)
    baselines = BaselineSet(rng.uniform(0, 1, size=(8, 3, 2)))
    x = np.full((3, 2), 3.0)

    result = gradient_shap(autoencoder_score_fn(model), x, baselines, n_samples=20000, seed=0)
    assert result.completeness_gap <= 0.05 * abs(result.score - result.baseline_expectation) + 1e-3


def test_aggregate_per_feature():
    attribution = AttributionMatrix(np.array([[1.0, -1.0], [2.0, -1.0]]), 0.0, 1.0)
    summary = aggregate_per_feature(attribution)

    np.testing.assert_allclose(summary.signed, [3.0, -2.0])
    np.testing.assert_allclose(summary.mean_abs, [1.5, 1.0])
    np.testing.assert_array_equal(summary.ranking, [0, 1])
    np.testing.assert_array_equal(summary.ranks(), [1, 2])


def test_ranking_ties_break_by_index():
    attribution = AttributionMatrix(np.array([[1.0, 3.0, -1.0]]), 0.0, 0.0)
    np.testing.assert_array_equal(aggregate_per_feature(attribution).ranking, [1, 0, 2])


def test_sample_baselines():
    windows = np.arange(10 * 2 * 2, dtype=float).reshape(10, 2, 2)
    first = sample_baselines(windows, 4, seed=0)
    second = sample_baselines(windows, 4, seed=0)

    assert first.size == 4
    np.testing.assert_array_equal(first.windows, second.windows)
    starts = [w[0, 0] for w in first.windows]
    assert len(set(starts)) == 4
    assert sample_baselines(windows, 50).size == 10
    with pytest.raises(ValueError):
        sample_baselines(np.zeros((0, 2, 2)), 3)


def test_parse_target():
    assert parse_target('surrogate') is None
    assert parse_target('flattened:5') == 5
    for bad in ('flattened:x', 'output:1', 'flattened'):
        with pytest.raises(ValueError):
            parse_target(bad)


def test_flattened_target_explains_one_output_cell():
    model = init_model(2, 3, 4, 2, seed=1)
    points = np.random.default_rng(9).uniform(size=(4, 3, 2))
    values, grads = autoencoder_score_fn(model, 'flattened:3')(points)

    np.testing.assert_allclose(values, reconstruct(model, points).reshape(4, -1)[:, 3])
    assert grads.shape == points.shape


def test_exhaustive_small_game_matches_definition():
    values = np.random.default_rng(10).uniform(size=2 ** 3)
    game = table_game(values)
    phi = exact_shapley(game)
    # direct subset formula for player 0
    expected = 0.0
    for size in range(3):
        for others in itertools.combinations([1, 2], size):
            mask = sum(1 << k for k in others)
            weight = math.factorial(size) * math.factorial(2 - size) / math.factorial(3)
            expected += weight * (values[mask | 1] - values[mask])
    assert phi[0] == pytest.approx(expected, abs=1e-12)
