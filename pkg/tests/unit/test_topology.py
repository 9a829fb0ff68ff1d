import numpy as np
import pytest
from scipy.spatial.distance import cdist

from mbsfn_abot.errors import EmptyCombiningSetError, PackingInfeasibleError, TopologyFormatError
from mbsfn_abot.topology import (
    MbsfnPartition,
    NetworkTopology,
    assign_mbsfn_areas,
    build_partition,
    combining_set,
    evaluation_grid,
    hex_grid_centers,
    place_base_stations,
    read_topology,
    resolve_links,
    serving_area,
    write_topology,
)


def two_area_layout() -> tuple[NetworkTopology, MbsfnPartition]:
    """Three stations: two share area 0, one sits alone in area 1."""
    topology = NetworkTopology(np.array([[1.0, 2.0], [2.0, 2.0], [3.5, 2.0]]), 4.0, 0.0, 0)
    partition = MbsfnPartition(np.array([[1.0, 2.0], [4.0, 2.0]]), 3.0, np.array([0, 0, 1]), d_max=5.0)
    return topology, partition


# ============================================================================
# PLACEMENT
# ============================================================================


def test_placement_respects_exclusion_radius():
    topology = place_base_stations(400, 20.0, 0.5, 11)
    assert topology.count == 400
    assert topology.min_separation() >= 0.5
    assert np.all((topology.stations >= 0.0) & (topology.stations <= 20.0))
    assert topology.density == pytest.approx(1.0)


def test_placement_is_deterministic_per_seed():
    first = place_base_stations(50, 10.0, 0.3, 5)
    second = place_base_stations(50, 10.0, 0.3, 5)
    other = place_base_stations(50, 10.0, 0.3, 6)
    np.testing.assert_array_equal(first.stations, second.stations)
    assert not np.array_equal(first.stations, other.stations)


def test_placement_without_exclusion():
    topology = place_base_stations(30, 5.0, 0.0, 2)
    assert topology.count == 30
    assert topology.r_bs == 0.0


def test_placement_infeasible_packing():
    with pytest.raises(PackingInfeasibleError) as exc:
        place_base_stations(50, 1.0, 0.9, 0, max_attempts=100)
    assert exc.value.exit_code == 3
    assert exc.value.placed < 50


def test_placement_overfull_arena():
    with pytest.raises(PackingInfeasibleError):
        place_base_stations(1000, 2.0, 0.5, 0)


@pytest.mark.parametrize("seed", range(100))
def test_exclusion_holds_for_every_seed(seed):
    assert place_base_stations(40, 8.0, 0.5, seed).min_separation() >= 0.5


def test_placement_rejects_bad_arguments():
    with pytest.raises(ValueError):
        place_base_stations(0, 10.0, 0.5, 0)
    with pytest.raises(ValueError):
        place_base_stations(10, 10.0, -0.1, 0)


def test_single_station_separation_is_infinite():
    assert place_base_stations(1, 5.0, 1.0, 0).min_separation() == float("inf")


# ============================================================================
# MBSFN AREAS
# ============================================================================


def test_hex_lattice_count_and_spacing():
    anchors = hex_grid_centers(20.0, 6.0)
    assert anchors.shape == (23, 2)
    gaps = cdist(anchors, anchors)
    np.fill_diagonal(gaps, np.inf)
    np.testing.assert_allclose(gaps.min(axis=1), 6.0)
    assert any(np.allclose(a, (10.0, 10.0)) for a in anchors)


def test_hex_lattice_small_spacing():
    anchors = hex_grid_centers(20.0, 3.0)
    gaps = cdist(anchors, anchors)
    np.fill_diagonal(gaps, np.inf)
    np.testing.assert_allclose(gaps.min(axis=1), 3.0, rtol=1e-9)


def test_wide_spacing_gives_single_area():
    anchors = hex_grid_centers(20.0, 40.0)
    np.testing.assert_allclose(anchors, [[10.0, 10.0]])
    partition = build_partition(place_base_stations(10, 20.0, 0.0, 1), 40.0)
    assert partition.area_of_station.tolist() == [0] * 10


def test_hex_lattice_rejects_nonpositive_spacing():
    with pytest.raises(ValueError):
        hex_grid_centers(20.0, 0.0)


def test_assignment_uses_nearest_anchor():
    topology = place_base_stations(200, 20.0, 0.5, 3)
    partition = build_partition(topology, 6.0)
    expected = np.argmin(cdist(topology.stations, partition.anchors), axis=1)
    np.testing.assert_array_equal(partition.area_of_station, expected)
    assert partition.d_sfn == 6.0
    assert 1 <= partition.occupied_areas() <= partition.area_count
    assert np.bincount(partition.area_of_station, minlength=partition.area_count).sum() == 200


def test_assignment_ties_go_to_lowest_anchor():
    topology = NetworkTopology(np.array([[2.0, 0.0]]), 4.0, 0.0, 0)
    partition = assign_mbsfn_areas(topology, [[4.0, 0.0], [0.0, 0.0]])
    assert partition.area_of_station.tolist() == [0]
    assert partition.d_sfn == pytest.approx(4.0)


# ============================================================================
# SERVING AREA AND COMBINING SETS
# ============================================================================


def test_serving_area_follows_nearest_station():
    topology, partition = two_area_layout()
    assert serving_area((1.1, 2.0), topology, partition) == 0
    assert serving_area((3.4, 2.5), topology, partition) == 1


def test_combining_set_is_same_area_within_reach():
    topology, partition = two_area_layout()
    assert combining_set((1.5, 2.0), topology, partition).tolist() == [0, 1]
    assert combining_set((3.8, 2.0), topology, partition).tolist() == [2]


def test_combining_set_respects_d_max():
    topology, _ = two_area_layout()
    short = MbsfnPartition(np.array([[1.0, 2.0], [4.0, 2.0]]), 3.0, np.array([0, 0, 1]), d_max=0.8)
    assert combining_set((1.1, 2.0), topology, short).tolist() == [0]
    with pytest.raises(EmptyCombiningSetError):
        combining_set((2.9, 3.5), topology, short)


def test_resolve_links_matches_pointwise_queries():
    topology = place_base_stations(60, 10.0, 0.3, 8)
    partition = build_partition(topology, 3.0, d_max=1.5)
    points = np.random.default_rng(1).uniform(0.0, 10.0, size=(40, 2))
    links = resolve_links(points, topology, partition)
    for j, point in enumerate(points):
        assert links.serving_area[j] == serving_area(point, topology, partition)
        if links.combining_counts[j]:
            np.testing.assert_array_equal(np.flatnonzero(links.combining[j]), combining_set(point, topology, partition))
        else:
            with pytest.raises(EmptyCombiningSetError):
                combining_set(point, topology, partition)


# ============================================================================
# EVALUATION GRID
# ============================================================================


def test_default_grid_dimensions():
    grid = evaluation_grid(20.0, 0.1, 10.0)
    assert grid.shape == (201, 201)
    assert grid.size == 201 * 201
    assert int(grid.eval_mask().sum()) == 101 * 101
    np.testing.assert_allclose(grid.points[0], (0.0, 0.0), atol=1e-12)
    np.testing.assert_allclose(grid.points[-1], (20.0, 20.0), atol=1e-9)


def test_eval_only_grid_covers_the_square():
    sub = evaluation_grid(20.0, 0.1, 10.0).eval_only()
    assert sub.shape == (101, 101)
    assert bool(sub.eval_mask().all())
    np.testing.assert_allclose(sub.points.min(axis=0), (5.0, 5.0), atol=1e-9)
    np.testing.assert_allclose(sub.points.max(axis=0), (15.0, 15.0), atol=1e-9)


def test_grid_points_are_row_major():
    grid = evaluation_grid(4.0, 1.0, 2.0)
    assert grid.nx == 5
    np.testing.assert_allclose(grid.points[1], (1.0, 0.0))
    np.testing.assert_allclose(grid.points[5], (0.0, 1.0))


def test_spacing_equal_to_arena_gives_one_point():
    grid = evaluation_grid(20.0, 20.0, 20.0)
    assert grid.size == 1
    np.testing.assert_allclose(grid.points[0], (10.0, 10.0))


def test_grid_rejects_bad_arguments():
    with pytest.raises(ValueError):
        evaluation_grid(20.0, 0.0, 10.0)
    with pytest.raises(ValueError):
        evaluation_grid(20.0, 0.1, 25.0)


# ============================================================================
# TOPOLOGY FILES
# ============================================================================


def test_topology_file_round_trip(tmp_path):
    topology = place_base_stations(25, 8.0, 0.4, 123)
    path = write_topology(topology, tmp_path / "topology.txt")
    loaded = read_topology(path)
    np.testing.assert_array_equal(loaded.stations, topology.stations)
    assert (loaded.d_net, loaded.r_bs, loaded.seed) == (8.0, 0.4, 123)


def test_topology_file_missing_header(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1.0 2.0\n", encoding="ascii")
    with pytest.raises(TopologyFormatError):
        read_topology(path)


def test_topology_file_wrong_row_count(tmp_path):
    path = tmp_path / "short.txt"
    path.write_text("mbsfn-topology v1 M=2 d_net=4.0 r_bs=0.0 seed=0\n1.0 1.0\n", encoding="ascii")
    with pytest.raises(TopologyFormatError) as exc:
        read_topology(path)
    assert exc.value.exit_code == 2


def test_topology_file_bad_coordinate(tmp_path):
    path = tmp_path / "text.txt"
    path.write_text("mbsfn-topology v1 M=1 d_net=4.0 r_bs=0.0 seed=0\none two\n", encoding="ascii")
    with pytest.raises(TopologyFormatError):
        read_topology(path)
