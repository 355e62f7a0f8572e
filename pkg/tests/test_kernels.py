import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from videothreads.errors import (
    ClusteringError,
    NonFiniteError,
    NotSymmetricError,
    ShapeError,
    ZeroNormRowError,
)
from videothreads.kernels import (
    _lloyd_once,
    cosine_similarity_matrix,
    kmeans,
    sym_eigen,
)
from videothreads.metrics import adjusted_rand_index


def random_symmetric(rng, n):
    a = rng.standard_normal((n, n))
    return 0.5 * (a + a.T)


class TestSymEigen:
    def test_diagonal_matrix(self):
        dec = sym_eigen(np.diag([2.0, 1.0]))
        assert np.allclose(dec.eigenvalues, [1.0, 2.0])
        assert np.allclose(dec.eigenvectors, [[0.0, 1.0], [1.0, 0.0]])

    def test_exchange_matrix(self):
        dec = sym_eigen([[0.0, 1.0], [1.0, 0.0]])
        r = 1.0 / np.sqrt(2.0)
        assert np.allclose(dec.eigenvalues, [-1.0, 1.0])
        assert np.allclose(dec.eigenvectors[:, 0], [r, -r])
        assert np.allclose(dec.eigenvectors[:, 1], [r, r])

    def test_reconstruction_seeded_6x6(self):
        # oracle: the decomposition must rebuild the input
        a = random_symmetric(np.random.default_rng(123), 6)
        dec = sym_eigen(a)
        rebuilt = dec.eigenvectors @ np.diag(dec.eigenvalues) @ dec.eigenvectors.T
        assert np.max(np.abs(rebuilt - a)) <= 1e-8

    def test_orthonormality_and_trace(self):
        rng = np.random.default_rng(7)
        for n in (1, 2, 5, 17):
            a = random_symmetric(rng, n)
            dec = sym_eigen(a)
            q = dec.eigenvectors
            assert np.max(np.abs(q.T @ q - np.eye(n))) <= 1e-8
            assert abs(np.trace(a) - dec.eigenvalues.sum()) <= 1e-8 * max(1.0, abs(np.trace(a)))

    def test_eigenpair_residuals(self):
        a = random_symmetric(np.random.default_rng(5), 12)
        dec = sym_eigen(a)
        scale = np.max(np.abs(a))
        for lam, v in zip(dec.eigenvalues, dec.eigenvectors.T):
            assert np.max(np.abs(a @ v - lam * v)) <= 1e-8 * scale
            assert abs(np.linalg.norm(v) - 1.0) <= 1e-10

    def test_eigenvalues_ascending(self):
        dec = sym_eigen(random_symmetric(np.random.default_rng(11), 9))
        assert np.all(np.diff(dec.eigenvalues) >= 0.0)

    def test_sign_convention(self):
        dec = sym_eigen(random_symmetric(np.random.default_rng(3), 8))
        for v in dec.eigenvectors.T:
            lead = np.flatnonzero(np.abs(v) > 1e-12 * np.max(np.abs(v)))[0]
            assert v[lead] > 0.0

    def test_rejects_non_square(self):
        with pytest.raises(ShapeError):
            sym_eigen(np.zeros((2, 3)))

    def test_rejects_asymmetric(self):
        with pytest.raises(NotSymmetricError):
            sym_eigen([[0.0, 1.0], [0.5, 0.0]])

    def test_rejects_non_finite(self):
        with pytest.raises(NonFiniteError):
            sym_eigen([[np.nan, 0.0], [0.0, 1.0]])

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=25, deadline=None)
    def test_reconstruction_property(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 16))
        a = random_symmetric(rng, n)
        dec = sym_eigen(a)
        rebuilt = dec.eigenvectors @ np.diag(dec.eigenvalues) @ dec.eigenvectors.T
        assert np.max(np.abs(rebuilt - a)) <= 1e-8 * max(1.0, np.max(np.abs(a)))


class TestKMeans:
    def test_well_separated_pairs(self):
        pts = np.array([[0.0], [0.1], [10.0], [10.1]])
        result = kmeans(pts, 2, seed=0)
        assert result.assignments[0] == result.assignments[1]
        assert result.assignments[2] == result.assignments[3]
        assert result.assignments[0] != result.assignments[2]

    def test_identical_points_zero_inertia(self):
        pts = np.ones((5, 3))
        result = kmeans(pts, 1, seed=0)
        assert result.inertia == 0.0
        assert np.allclose(result.centroids[0], 1.0)

    def test_planted_blobs_recovered(self):
        # oracle: the generator's own labels
        rng = np.random.default_rng(42)
        centers = rng.standard_normal((3, 8)) * 50.0
        points = np.concatenate([centers[i] + rng.standard_normal((30, 8)) for i in range(3)])
        labels = np.repeat(np.arange(3), 30)
        result = kmeans(points, 3, seed=1)
        assert adjusted_rand_index(result.assignments, labels) == 1.0

    def test_deterministic(self):
        pts = np.random.default_rng(0).standard_normal((40, 4))
        a = kmeans(pts, 4, seed=9)
        b = kmeans(pts, 4, seed=9)
        assert np.array_equal(a.assignments, b.assignments)
        assert np.array_equal(a.centroids, b.centroids)
        assert a.inertia == b.inertia

    def test_centroids_are_cluster_means(self):
        pts = np.random.default_rng(1).standard_normal((30, 3))
        result = kmeans(pts, 3, seed=2)
        for c in range(3):
            members = pts[result.assignments == c]
            if members.size:
                assert np.allclose(result.centroids[c], members.mean(axis=0))

    def test_inertia_monotone_within_run(self):
        pts = np.random.default_rng(2).standard_normal((60, 5))
        history: list[float] = []
        _lloyd_once(pts, 4, "euclidean", np.random.default_rng(3), 100, history=history)
        assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))

    def test_inertia_monotone_cosine(self):
        pts = np.random.default_rng(4).standard_normal((50, 6))
        history: list[float] = []
        _lloyd_once(pts / np.linalg.norm(pts, axis=1, keepdims=True), 3,
                    "cosine", np.random.default_rng(5), 100, history=history)
        assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))

    def test_permutation_equivariant_on_separated_blobs(self):
        rng = np.random.default_rng(6)
        centers = np.eye(3) * 100.0
        pts = np.concatenate([centers[i] + rng.standard_normal((20, 3)) for i in range(3)])
        perm = rng.permutation(len(pts))
        direct = kmeans(pts, 3, seed=7).assignments
        permuted = kmeans(pts[perm], 3, seed=7).assignments
        assert adjusted_rand_index(direct[perm], permuted) == 1.0

    def test_cosine_groups_by_angle(self):
        pts = np.array([[1.0, 0.0], [5.0, 0.0], [0.0, 1.0], [0.0, 7.0]])
        result = kmeans(pts, 2, metric="cosine", seed=0)
        assert result.assignments[0] == result.assignments[1]
        assert result.assignments[2] == result.assignments[3]
        assert result.assignments[0] != result.assignments[2]

    def test_k_exceeds_rows(self):
        with pytest.raises(ClusteringError):
            kmeans(np.zeros((2, 2)), 3)

    def test_empty_input(self):
        with pytest.raises(ClusteringError):
            kmeans(np.zeros((0, 2)), 1)

    def test_bad_metric(self):
        with pytest.raises(ClusteringError):
            kmeans(np.ones((3, 2)), 1, metric="manhattan")

    def test_cosine_zero_row(self):
        with pytest.raises(ZeroNormRowError) as info:
            kmeans(np.array([[1.0, 0.0], [0.0, 0.0]]), 1, metric="cosine")
        assert info.value.row == 1


class TestCosineSimilarityMatrix:
    def test_orthonormal_rows_identity(self):
        assert np.allclose(cosine_similarity_matrix(np.eye(4)), np.eye(4))

    def test_repeated_row_all_ones(self):
        sim = cosine_similarity_matrix(np.array([[1.0, 2.0], [1.0, 2.0]]))
        assert np.allclose(sim, 1.0)

    def test_antipodal(self):
        sim = cosine_similarity_matrix(np.array([[1.0, 0.0], [-1.0, 0.0]]))
        assert sim[0, 1] == pytest.approx(-1.0)

    def test_symmetric_unit_diagonal_bounded(self):
        x = np.random.default_rng(8).standard_normal((12, 5))
        sim = cosine_similarity_matrix(x)
        assert np.array_equal(sim, sim.T)
        assert np.allclose(np.diag(sim), 1.0, atol=1e-12)
        assert np.all(sim >= -1.0) and np.all(sim <= 1.0)

    def test_zero_row_names_index(self):
        with pytest.raises(ZeroNormRowError) as info:
            cosine_similarity_matrix(np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]]))
        assert info.value.row == 1
