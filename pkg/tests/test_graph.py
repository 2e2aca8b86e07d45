import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from sgnep.graph import (
    GraphError,
    MultiplierGraph,
    is_connected,
    laplacian,
    neighbor_disagreement,
)


class TestMultiplierGraph:

    def test_invariants_enforced(self):
        with pytest.raises(GraphError):
            MultiplierGraph(np.ones((2, 3)))
        with pytest.raises(GraphError):
            MultiplierGraph(np.array([[0.0, -1.0], [-1.0, 0.0]]))
        with pytest.raises(GraphError):
            MultiplierGraph(np.array([[1.0, 1.0], [1.0, 0.0]]))
        with pytest.raises(GraphError):
            MultiplierGraph(np.array([[0.0, 1.0], [2.0, 0.0]]))

    def test_neighbors(self):
        g = MultiplierGraph.star(4)
        assert_array_equal(g.neighbors(0), [1, 2, 3])
        assert_array_equal(g.neighbors(2), [0])

    def test_ring_two_nodes_single_edge(self):
        g = MultiplierGraph.ring(2)
        assert_allclose(g.weights, [[0.0, 1.0], [1.0, 0.0]])

    def test_complete_weights(self):
        g = MultiplierGraph.complete(3, weight=2.0)
        assert_allclose(g.weights, 2.0 * (np.ones((3, 3)) - np.eye(3)))


class TestLaplacian:

    def test_three_node_path(self):
        w = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
        view = laplacian(MultiplierGraph(w))
        assert_allclose(view.matrix, [[1.0, -1.0, 0.0],
                                      [-1.0, 2.0, -1.0],
                                      [0.0, -1.0, 1.0]])
        assert_allclose(view.degrees, [1.0, 2.0, 1.0])

    def test_three_node_complete(self):
        view = laplacian(MultiplierGraph.complete(3))
        assert_allclose(view.matrix, [[2.0, -1.0, -1.0],
                                      [-1.0, 2.0, -1.0],
                                      [-1.0, -1.0, 2.0]])

    def test_single_node(self):
        view = laplacian(MultiplierGraph(np.zeros((1, 1))))
        assert_allclose(view.matrix, [[0.0]])

    @settings(deadline=None, max_examples=30)
    @given(st.integers(0, 2 ** 31 - 1), st.integers(2, 6))
    def test_laplacian_psd_zero_row_sums(self, seed, n):
        rng = np.random.default_rng(seed)
        w = rng.uniform(0.0, 1.0, size=(n, n))
        w = np.triu(w, 1)
        w = w + w.T
        view = laplacian(MultiplierGraph(w))
        assert_allclose(view.matrix.sum(axis=1), np.zeros(n), atol=1e-12)
        assert_allclose(view.matrix, view.matrix.T)
        eigs = np.linalg.eigvalsh(view.matrix)
        assert eigs.min() >= -1e-10


class TestIsConnected:

    def test_two_nodes(self):
        assert is_connected(MultiplierGraph(np.array([[0.0, 1.0], [1.0, 0.0]])))
        assert not is_connected(MultiplierGraph(np.zeros((2, 2))))

    def test_four_node_ring(self):
        assert is_connected(MultiplierGraph.ring(4))

    def test_builders_connected(self):
        for n in (1, 2, 3, 7):
            assert is_connected(MultiplierGraph.ring(n))
            assert is_connected(MultiplierGraph.complete(n))
        assert is_connected(MultiplierGraph.star(5))

    def test_disconnected_components(self):
        w = np.zeros((4, 4))
        w[0, 1] = w[1, 0] = 1.0
        w[2, 3] = w[3, 2] = 1.0
        assert not is_connected(MultiplierGraph(w))

    @settings(deadline=None, max_examples=30)
    @given(st.integers(0, 2 ** 31 - 1), st.integers(2, 7))
    def test_matches_fiedler_eigenvalue(self, seed, n):
        # connectivity iff the second-smallest Laplacian eigenvalue is > 0
        rng = np.random.default_rng(seed)
        w = (rng.uniform(0.0, 1.0, size=(n, n)) < 0.4).astype(float)
        w = np.triu(w, 1)
        w = w + w.T
        graph = MultiplierGraph(w)
        eigs = np.sort(np.linalg.eigvalsh(laplacian(graph).matrix))
        assert is_connected(graph) == (eigs[1] > 1e-10)


class TestNeighborDisagreement:

    def test_consensus_kernel(self):
        g = MultiplierGraph.complete(3)
        v = np.tile([2.0, -1.0], (3, 1))
        assert_allclose(neighbor_disagreement(g, v), np.zeros((3, 2)))

    def test_two_node_hand_case(self):
        g = MultiplierGraph(np.array([[0.0, 1.0], [1.0, 0.0]]))
        out = neighbor_disagreement(g, np.array([[1.0], [3.0]]))
        assert_allclose(out, [[-2.0], [2.0]])

    def test_zero_weight_graph(self):
        g = MultiplierGraph(np.zeros((3, 3)))
        v = np.arange(6.0).reshape(3, 2)
        assert_allclose(neighbor_disagreement(g, v), np.zeros((3, 2)))

    def test_equals_blockwise_laplacian(self):
        rng = np.random.default_rng(3)
        w = rng.uniform(0.0, 1.0, size=(5, 5))
        w = np.triu(w, 1)
        w = w + w.T
        g = MultiplierGraph(w)
        v = rng.normal(size=(5, 4))
        assert_allclose(neighbor_disagreement(g, v), laplacian(g).matrix @ v)

    def test_row_count_mismatch(self):
        g = MultiplierGraph.ring(3)
        with pytest.raises(GraphError):
            neighbor_disagreement(g, np.zeros((2, 1)))
