import numpy as np
import pytest

from videothreads.dataio import FeatureSequence
from videothreads.errors import GraphError
from videothreads.graph import (
    build_graph,
    nearest_indices,
    temporal_interpolate,
    temporal_subsample,
)


def seq(times, dim=3, seed=0):
    rng = np.random.default_rng(seed)
    times = np.asarray(times, dtype=np.float64)
    return FeatureSequence("v", times, rng.standard_normal((len(times), dim)))


class TestBuildGraph:
    def test_threshold_edges(self):
        g = build_graph(seq([0.0, 0.5, 1.0, 5.0]), 1.0)
        assert g.edges == {(0, 1), (0, 2), (1, 2)}
        assert g.level == 0

    def test_single_node_no_edges(self):
        g = build_graph(seq([0.0]), 1.0)
        assert g.edges == frozenset()

    def test_default_threshold_links_immediate_neighbors(self):
        # uniform 0.533 s spacing and threshold 1.0: interior nodes see one
        # neighbor on each side (2 * 0.533 > 1.0)
        times = np.arange(6) * (16.0 / 30.0)
        g = build_graph(seq(times), 1.0)
        expected = {(i, i + 1) for i in range(5)}
        assert g.edges == frozenset(expected)

    def test_empty_sequence_rejected(self):
        with pytest.raises(GraphError):
            build_graph(seq([]), 1.0)

    def test_nonpositive_threshold_rejected(self):
        with pytest.raises(GraphError):
            build_graph(seq([0.0, 1.0]), 0.0)

    def test_edge_symmetry_via_directed_edges(self):
        g = build_graph(seq([0.0, 0.4, 0.8, 1.2]), 1.0)
        dst, src = g.directed_edges()
        pairs = set(zip(dst.tolist(), src.tolist()))
        assert all((j, i) in pairs for i, j in pairs)
        assert len(pairs) == 2 * len(g.edges)


class TestTemporalSubsample:
    def test_even_positions_kept(self):
        g = build_graph(seq([0.0, 1.0, 2.0, 3.0, 4.0, 5.0]), 1.0)
        sub = temporal_subsample(g)
        assert np.array_equal(sub.timestamps, [0.0, 2.0, 4.0])
        assert sub.level == 1

    def test_single_node(self):
        g = build_graph(seq([3.0]), 1.0)
        sub = temporal_subsample(g)
        assert sub.num_nodes == 1
        assert sub.level == 1

    def test_ceil_rule_five_nodes(self):
        g = build_graph(seq([0.0, 1.0, 2.0, 3.0, 4.0]), 1.0)
        sub = temporal_subsample(g)
        assert np.array_equal(sub.timestamps, [0.0, 2.0, 4.0])

    def test_repeated_subsample_ceil_law(self):
        n = 37
        g = build_graph(seq(np.arange(n, dtype=float)), 1.0)
        for level in range(1, 6):
            g = temporal_subsample(g)
            assert g.num_nodes == -(-n // 2 ** level)  # ceil

    def test_edges_rebuilt_with_doubled_threshold(self):
        g = build_graph(seq([0.0, 1.0, 2.0, 3.0]), 1.0)
        sub = temporal_subsample(g)  # nodes at 0, 2; threshold now 2.0
        assert sub.edges == {(0, 1)}
        assert sub.effective_threshold == 2.0


class TestTemporalInterpolate:
    def test_linear_midpoint(self):
        g = build_graph(
            FeatureSequence("v", np.array([0.0, 2.0]),
                            np.array([[0.0, 0.0], [2.0, 2.0]])), 10.0)
        out = temporal_interpolate(g, [1.0])
        assert np.allclose(out, [[1.0, 1.0]])

    def test_clamped_before_start(self):
        g = build_graph(
            FeatureSequence("v", np.array([1.0, 2.0]),
                            np.array([[5.0], [9.0]])), 10.0)
        out = temporal_interpolate(g, [0.0, 3.0])
        assert np.allclose(out, [[5.0], [9.0]])

    def test_identity_at_coarse_timestamps(self):
        g = build_graph(seq([0.0, 0.7, 1.9, 3.2], dim=4, seed=3), 2.0)
        out = temporal_interpolate(g, g.timestamps)
        assert np.array_equal(out, g.embeddings)

    def test_single_source_node(self):
        g = build_graph(FeatureSequence("v", np.array([5.0]), np.array([[1.0, 2.0]])), 1.0)
        out = temporal_interpolate(g, [0.0, 5.0, 9.0])
        assert np.allclose(out, [[1.0, 2.0]] * 3)


class TestNearestIndices:
    def test_basic(self):
        src = np.array([0.0, 1.0, 2.0])
        assert np.array_equal(nearest_indices(src, [0.1, 0.9, 1.6, 5.0]), [0, 1, 2, 2])

    def test_tie_picks_earlier(self):
        src = np.array([0.0, 2.0])
        assert nearest_indices(src, [1.0])[0] == 0

    def test_exact_hits(self):
        src = np.array([0.0, 1.0, 2.0])
        assert np.array_equal(nearest_indices(src, src), [0, 1, 2])
