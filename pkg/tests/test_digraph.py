import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from backstep_consensus.digraph import (
    BadRoot,
    DirectedGraph,
    GraphError,
    SingularBlock,
    ZeroInDegree,
    as_matrix,
    block_rank_schur,
    build_augmented_laplacian_c1,
    build_augmented_laplacian_c2,
    chain_graph,
    cycle_graph,
    has_spanning_tree,
    laplacian,
    partition_nodes,
    rank,
    spanning_tree_roots,
)
from backstep_consensus.verify import WEIGHTS, laplacian_checks, random_spanning_digraph


def test_laplacian_single_edge():
    g = DirectedGraph.from_edges(2, [(0, 1, 1.0)])
    np.testing.assert_array_equal(laplacian(g), [[0, 0], [-1, 1]])


def test_laplacian_empty_and_cycle():
    np.testing.assert_array_equal(laplacian(DirectedGraph(np.zeros((3, 3)))), np.zeros((3, 3)))
    # a_12 = a_23 = a_31 = 1
    g = DirectedGraph([[0, 1, 0], [0, 0, 1], [1, 0, 0]])
    np.testing.assert_array_equal(laplacian(g), [[1, -1, 0], [0, 1, -1], [-1, 0, 1]])


def test_cycle_edge_direction():
    # node 1 listens to node n, node 2 to node 1, ...
    g = cycle_graph(5)
    assert g.weights[0, 4] == 1 and g.weights[1, 0] == 1
    assert g.neighbors(0) == [4]


def test_diagonal_forced_to_zero_and_readonly():
    g = DirectedGraph([[3.0, 1.0], [1.0, 2.0]])
    assert g.weights[0, 0] == 0 and g.weights[1, 1] == 0
    with pytest.raises(ValueError):
        g.weights[0, 1] = 5.0


@pytest.mark.parametrize("bad", [[[0, -1], [0, 0]], [[0, np.nan], [0, 0]], [[0, 1, 0]], []])
def test_invalid_weights_rejected(bad):
    with pytest.raises(GraphError):
        DirectedGraph(bad)


def test_as_matrix_rejects_nonfinite():
    with pytest.raises(ValueError):
        as_matrix([[1.0, np.inf]])


def test_spanning_tree_examples():
    assert has_spanning_tree(chain_graph(3))
    assert spanning_tree_roots(chain_graph(3)) == [0]
    assert not has_spanning_tree(DirectedGraph(np.zeros((2, 2))))
    assert spanning_tree_roots(cycle_graph(5)) == list(range(5))


def test_partition_examples():
    assert partition_nodes(cycle_graph(5)) == ([0, 1, 2, 3, 4], [])
    assert partition_nodes(chain_graph(5)) == ([1, 2, 3, 4], [0])
    assert partition_nodes(DirectedGraph(np.zeros((2, 2)))) == ([], [0, 1])


def test_rank_examples():
    assert rank(np.eye(3)) == 3
    assert rank([[1, 2], [2, 4]]) == 1
    assert rank(laplacian(cycle_graph(3))) == 2
    assert rank(np.zeros((3, 3))) == 0


def test_rank_tolerance_is_relative():
    m = 1e-12 * np.array([[1.0, 0.0], [0.0, 1.0]])
    assert rank(m) == 2
    assert rank([[1.0, 0.0], [0.0, 1e-10]]) == 1


def test_block_rank_examples():
    assert block_rank_schur(np.eye(4), 2) == 4
    assert block_rank_schur([[1, 0, 1], [0, 1, 0], [1, 0, 1]], 2) == 2
    assert block_rank_schur([[2, 0], [0, 0]], 1) == 1


def test_block_rank_singular_block():
    with pytest.raises(SingularBlock):
        block_rank_schur([[0, 1], [1, 0]], 1)


def test_c1_two_nodes():
    g = DirectedGraph([[0, 1], [1, 0]])
    aug = build_augmented_laplacian_c1(g, -np.ones((2, 2)), 2)
    np.testing.assert_array_equal(aug, [[1, 0, -1, 0], [0, 1, 0, -1], [0, -1, 1, 0], [-1, 0, 0, 1]])
    assert rank(aug) == 3


def test_c1_single_stage():
    g = DirectedGraph([[0, 1], [1, 0]])
    np.testing.assert_array_equal(build_augmented_laplacian_c1(g, -np.ones((2, 1)), 1), [[1, -1], [-1, 1]])


def test_c1_requires_in_neighbors():
    with pytest.raises(ZeroInDegree):
        build_augmented_laplacian_c1(chain_graph(3), -np.ones((3, 2)), 2)


def test_c2_chain_of_two():
    aug = build_augmented_laplacian_c2(chain_graph(2), 0, -np.ones((2, 2)), 2)
    np.testing.assert_array_equal(aug, [[0, 0, 0], [0, 1, -1], [-1, 0, 1]])
    assert rank(aug) == 2


def test_c2_chain_of_three_rank():
    aug = build_augmented_laplacian_c2(chain_graph(3), 0, -np.ones((3, 2)), 2)
    assert rank(aug) == 4
    assert not aug[0].any()


def test_c2_bad_root():
    with pytest.raises(BadRoot):
        build_augmented_laplacian_c2(cycle_graph(3), 0, -np.ones((3, 2)), 2)
    two_roots = DirectedGraph.from_edges(3, [(0, 2, 1.0)])
    with pytest.raises(BadRoot):
        build_augmented_laplacian_c2(two_roots, 0, -np.ones((3, 2)), 2)


def test_positive_delta_rejected():
    with pytest.raises(ValueError):
        build_augmented_laplacian_c1(cycle_graph(3), np.ones((3, 2)), 2)


weights = st.sampled_from(WEIGHTS)


@st.composite
def digraphs(draw):
    n = draw(st.integers(1, 6))
    w = np.array(draw(st.lists(weights, min_size=n * n, max_size=n * n))).reshape(n, n)
    return DirectedGraph(w)


@settings(max_examples=200, deadline=None)
@given(digraphs())
def test_laplacian_rank_matches_spanning_tree(g):
    r = rank(laplacian(g))
    if has_spanning_tree(g):
        assert r == g.n - 1
    else:
        assert r <= g.n - 2


@settings(max_examples=200, deadline=None)
@given(digraphs())
def test_partition_is_disjoint_cover(g):
    v1, v2 = partition_nodes(g)
    assert sorted(v1 + v2) == list(range(g.n))
    if has_spanning_tree(g):
        assert len(v2) <= 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.booleans())
def test_augmented_laplacian_claims(seed, rootless):
    rng = np.random.default_rng(seed)
    g = random_spanning_digraph(rng, rootless)
    m = int(rng.integers(1, 4))
    delta = rng.uniform(-3.0, -0.1, (g.n, m))
    if rootless:
        aug, want = build_augmented_laplacian_c2(g, 0, delta, m), (g.n - 1) * m
    else:
        aug, want = build_augmented_laplacian_c1(g, delta, m), g.n * m - 1
    row, nonpos = laplacian_checks(aug)
    assert row <= 1e-12 and nonpos
    assert rank(aug) == want
