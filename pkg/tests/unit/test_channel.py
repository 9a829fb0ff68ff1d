import math

import numpy as np
import pytest
from scipy import linalg

from mbsfn_abot import channel
from mbsfn_abot.channel import (
    build_profile,
    exponential_correlation,
    generate_shadowing,
    nakagami_shape,
    nakagami_shapes,
    normalized_power,
    normalized_powers,
    path_loss,
)
from mbsfn_abot.errors import CovarianceFactorizationError, EmptyCombiningSetError
from mbsfn_abot.topology import MbsfnPartition, NetworkTopology, build_partition, evaluation_grid, place_base_stations


def field_topology(count: int, d_net: float) -> NetworkTopology:
    """Station positions do not enter the shadowing statistics, only the count."""
    return NetworkTopology(np.random.default_rng(0).uniform(0.0, d_net, size=(count, 2)), d_net, 0.0, 0)


def lag_statistics(values: np.ndarray, shape: tuple[int, int], lag: int) -> tuple[float, float]:
    """Pooled variance and normalized correlation at `lag` lattice steps along x."""
    fields = values.reshape(values.shape[0], *shape)
    variance = float(np.mean(fields**2))
    covariance = float(np.mean(fields[:, :, :-lag] * fields[:, :, lag:]))
    return variance, covariance / variance


# ============================================================================
# PATH LOSS AND FADING SHAPES
# ============================================================================


def test_path_loss_power_law():
    assert path_loss(2.0, 1.0, 3.5) == pytest.approx(2.0**-3.5)
    assert path_loss(0.5, 1.0, 3.5) == 1.0
    np.testing.assert_allclose(path_loss(np.array([1.0, 10.0]), 1.0, 2.0), [1.0, 0.01])


def test_path_loss_rejects_bad_parameters():
    with pytest.raises(ValueError):
        path_loss(1.0, 0.0, 3.5)
    with pytest.raises(ValueError):
        path_loss(1.0, 1.0, 1.5)


@pytest.mark.parametrize(
    ("d", "expected"),
    [(0.0, 3), (0.25, 3), (0.3, 2), (0.5, 2), (0.51, 1), (4.0, 1)],
)
def test_nakagami_shape_by_distance(d, expected):
    assert nakagami_shape(d, 0.5) == expected


def test_zero_fading_radius_is_rayleigh():
    assert nakagami_shape(0.0, 0.0) == 1
    assert nakagami_shapes(np.array([0.0, 0.1]), 0.0).tolist() == [1, 1]


def test_nakagami_shapes_vectorised():
    distances = np.array([[0.1, 0.4, 0.9]])
    shapes = nakagami_shapes(distances, 0.5)
    assert shapes.dtype == np.int8
    assert shapes.tolist() == [[3, 2, 1]]


# ============================================================================
# NORMALIZED POWER
# ============================================================================


def test_normalized_power_unit_reference():
    assert float(normalized_power(0.0, 2.0, 1, 3.5, 1.0)) == pytest.approx(2.0**-3.5)
    assert float(normalized_power(10.0, 2.0, 1, 3.5, 1.0)) == pytest.approx(10.0 * 2.0**-3.5)
    assert float(normalized_power(0.0, 2.0, 2, 3.5, 1.0)) == pytest.approx(0.5 * 2.0**-3.5)


def test_normalized_power_decreases_with_distance():
    omega = normalized_power(3.0, np.linspace(0.02, 5.0, 50), 3, 3.5, 0.01)
    assert np.all(np.diff(omega) < 0)


def test_normalized_power_small_reference_distance():
    """With d >= d0 the clamp is inactive and the result is d^-alpha in arena units."""
    assert float(normalized_power(0.0, 2.0, 1, 3.5, 0.01)) == pytest.approx(2.0**-3.5)
    assert float(normalized_power(0.0, 0.005, 1, 3.5, 0.01)) == pytest.approx(0.01**-3.5)


# ============================================================================
# SHADOWING
# ============================================================================


def test_correlation_halves_at_decorrelation_distance():
    assert float(exponential_correlation(0.02, 0.02)) == pytest.approx(0.5)
    assert float(exponential_correlation(0.0, 0.02)) == 1.0


def test_zero_sigma_gives_zero_field():
    grid = evaluation_grid(1.0, 0.1, 1.0)
    field = generate_shadowing(grid, field_topology(3, 1.0), 0.0, 0.02, 9)
    assert field.method == "none"
    assert field.values.shape == (3, grid.size)
    assert not field.values.any()


@pytest.mark.slow
def test_dense_field_statistics():
    grid = evaluation_grid(0.3, 0.01, 0.3)
    assert grid.shape == (31, 31)
    field = generate_shadowing(grid, field_topology(200, 0.3), 8.0, 0.02, 1)
    assert field.method == "dense"
    variance, correlation = lag_statistics(field.values, grid.shape, 2)
    assert 57.6 <= variance <= 70.4
    assert 0.45 <= correlation <= 0.55


@pytest.mark.slow
def test_lattice_field_statistics():
    grid = evaluation_grid(2.0, 0.01, 2.0)
    field = generate_shadowing(grid, field_topology(20, 2.0), 8.0, 0.02, 2, method="lattice")
    assert field.method == "lattice"
    variance, correlation = lag_statistics(field.values, grid.shape, 2)
    assert 57.6 <= variance <= 70.4
    assert 0.45 <= correlation <= 0.55


def test_large_grid_uses_lattice_synthesis():
    grid = evaluation_grid(1.0, 0.01, 1.0)
    assert grid.size > channel.DENSE_POINT_LIMIT
    field = generate_shadowing(grid, field_topology(2, 1.0), 8.0, 0.02, 4)
    assert field.method == "lattice"
    assert field.values.shape == (2, grid.size)
    assert np.all(np.isfinite(field.values))


def test_coarse_lattice_is_interpolated():
    grid = evaluation_grid(2.0, 0.01, 2.0)
    field = generate_shadowing(grid, field_topology(1, 2.0), 8.0, 0.1, 4, method="lattice")
    assert field.values.shape == (1, grid.size)
    assert np.all(np.isfinite(field.values))
    neighbours = np.abs(np.diff(field.values[0].reshape(grid.shape), axis=1))
    assert float(neighbours.max()) < 8.0


def test_shadowing_is_reproducible():
    grid = evaluation_grid(0.2, 0.02, 0.2)
    topology = field_topology(4, 0.2)
    first = generate_shadowing(grid, topology, 8.0, 0.02, 5)
    second = generate_shadowing(grid, topology, 8.0, 0.02, 5)
    other = generate_shadowing(grid, topology, 8.0, 0.02, 6)
    np.testing.assert_array_equal(first.values, second.values)
    assert not np.array_equal(first.values, other.values)
    assert not np.array_equal(first.values[0], first.values[1])


def test_failed_cholesky_falls_back_to_lattice(monkeypatch):
    def broken(*args, **kwargs):
        raise linalg.LinAlgError("not positive definite")

    monkeypatch.setattr(channel.linalg, "cholesky", broken)
    grid = evaluation_grid(0.2, 0.02, 0.2)
    topology = field_topology(2, 0.2)
    assert generate_shadowing(grid, topology, 8.0, 0.02, 1).method == "lattice"
    with pytest.raises(CovarianceFactorizationError):
        generate_shadowing(grid, topology, 8.0, 0.02, 1, method="dense")


def test_shadowing_rejects_bad_parameters():
    grid = evaluation_grid(0.2, 0.02, 0.2)
    with pytest.raises(ValueError):
        generate_shadowing(grid, field_topology(1, 0.2), -1.0, 0.02, 0)
    with pytest.raises(ValueError):
        generate_shadowing(grid, field_topology(1, 0.2), 8.0, 0.0, 0)


# ============================================================================
# CHANNEL PROFILE
# ============================================================================


def test_profile_matches_pointwise_powers():
    topology = place_base_stations(30, 6.0, 0.3, 2)
    partition = build_partition(topology, 2.0, d_max=2.0)
    grid = evaluation_grid(6.0, 0.5, 4.0)
    shadowing = generate_shadowing(grid, topology, 8.0, 0.02, 3)
    profile = build_profile(grid, topology, partition, shadowing, 3.5, 0.01, 0.3)
    assert profile.omega.shape == (grid.size, topology.count)

    for point in range(0, grid.size, 17):
        if profile.empty[point]:
            with pytest.raises(EmptyCombiningSetError):
                normalized_powers(point, topology, partition, shadowing, 3.5, 0.01, r_f=0.3)
            continue
        budget = normalized_powers(point, topology, partition, shadowing, 3.5, 0.01, r_f=0.3)
        np.testing.assert_allclose(profile.omega[point], budget.omega, rtol=1e-12)
        np.testing.assert_array_equal(profile.shapes[point], budget.shapes)
        np.testing.assert_array_equal(profile.budget(point).combining, budget.combining)
        assert set(budget.interfering) | set(budget.combining) == set(range(topology.count))


def test_profile_splits_power_across_combining_set():
    topology = NetworkTopology(np.array([[1.0, 2.0], [3.0, 2.0]]), 4.0, 0.0, 0)
    partition = MbsfnPartition(np.array([[2.0, 2.0]]), 4.0, np.array([0, 0]), d_max=5.0)
    grid = evaluation_grid(4.0, 4.0, 4.0)
    shadowing = generate_shadowing(grid, topology, 0.0, 0.02, 0)
    profile = build_profile(grid, topology, partition, shadowing, 4.0, 1.0, 0.0)
    assert profile.counts.tolist() == [2]
    np.testing.assert_allclose(profile.omega[0], [0.5, 0.5])
    assert profile.shapes[0].tolist() == [1, 1]
    assert math.isclose(float(profile.omega[0].sum()), 1.0)


def test_profile_rejects_mismatched_shadowing():
    topology = NetworkTopology(np.array([[1.0, 1.0]]), 2.0, 0.0, 0)
    partition = build_partition(topology, 1.0)
    grid = evaluation_grid(2.0, 0.5, 2.0)
    wrong = generate_shadowing(evaluation_grid(2.0, 1.0, 2.0), topology, 0.0, 0.02, 0)
    with pytest.raises(ValueError):
        build_profile(grid, topology, partition, wrong, 3.5, 0.01, 0.5)
