import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatialcox.errors import GraphError, NumericalError
from spatialcox.spatial_graph import (SpatialGraph, connected_components, correlation_matrix,
                                      graph_distance_matrix, lattice_graph, read_edge_list,
                                      validate_graph, write_edge_list)


def floyd_warshall(n, edges):
    d = np.full((n, n), math.inf)
    np.fill_diagonal(d, 0)
    for a, b in edges:
        d[a, b] = d[b, a] = 1
    for k in range(n):
        for i in range(n):
            for j in range(n):
                if d[i, k] + d[k, j] < d[i, j]:
                    d[i, j] = d[i, k] + d[k, j]
    return d


@st.composite
def connected_graphs(draw, max_n=10):
    n = draw(st.integers(1, max_n))
    # random spanning tree plus extra edges
    edges = {(draw(st.integers(0, i - 1)), i) for i in range(1, n)}
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=15))
    edges |= {tuple(sorted(e)) for e in extra if e[0] != e[1]}
    edges = {tuple(sorted(e)) for e in edges}
    return n, sorted(edges)


class TestDistances:
    def test_path(self):
        g = SpatialGraph("ABC", [("A", "B"), ("B", "C")])
        D = graph_distance_matrix(g)
        assert D[0, 2] == 2 and D[0, 1] == 1 and D[0, 0] == 0

    def test_complete_graph(self):
        g = SpatialGraph(range(5), itertools.combinations(range(5), 2))
        D = graph_distance_matrix(g)
        assert np.all(D[~np.eye(5, dtype=bool)] == 1)

    def test_lattice_is_manhattan(self):
        D = graph_distance_matrix(lattice_graph(8, 8))
        ij = np.array([(i, j) for i in range(8) for j in range(8)])
        manhattan = np.abs(ij[:, None, :] - ij[None, :, :]).sum(-1)
        assert np.array_equal(D, manhattan)
        assert D.dtype.kind == "i"

    @settings(max_examples=60, deadline=None)
    @given(connected_graphs())
    def test_matches_floyd_warshall(self, graph):
        n, edges = graph
        D = graph_distance_matrix(SpatialGraph(range(n), edges))
        assert np.array_equal(D, floyd_warshall(n, edges))

    @settings(max_examples=60, deadline=None)
    @given(connected_graphs())
    def test_metric_axioms(self, graph):
        n, edges = graph
        D = graph_distance_matrix(SpatialGraph(range(n), edges))
        assert np.array_equal(D, D.T)
        assert np.all(np.diag(D) == 0) and np.all(D[~np.eye(n, dtype=bool)] >= 1)
        for k in range(n):
            assert np.all(D <= D[:, [k]] + D[[k], :])


class TestValidation:
    def test_connected(self):
        validate_graph(SpatialGraph("ABC", [("A", "B"), ("B", "C")]))
        validate_graph(lattice_graph(8, 8))

    def test_disconnected_lists_components(self):
        g = SpatialGraph("AB", [])
        with pytest.raises(GraphError, match=r"\{A\}, \{B\}"):
            validate_graph(g)
        assert connected_components(g) == [["A"], ["B"]]

    def test_distance_refuses_disconnected(self):
        with pytest.raises(GraphError):
            graph_distance_matrix(SpatialGraph("ABCD", [("A", "B"), ("C", "D")]))

    @pytest.mark.parametrize("edges", [[("A", "A")], [("A", "B"), ("B", "A")], [("A", "Z")]])
    def test_bad_edges(self, edges):
        with pytest.raises(GraphError):
            SpatialGraph("AB", edges)

    def test_subgraph_order(self):
        g = lattice_graph(2, 2)
        assert list(g.subgraph_order(["r1c1", "r0c0"])) == [3, 0]
        with pytest.raises(GraphError, match="missing"):
            g.subgraph_order(["nowhere"])


class TestCorrelation:
    def test_spike_all_ones(self):
        D = graph_distance_matrix(lattice_graph(3, 3))
        assert np.array_equal(correlation_matrix(D, 0.0), np.ones((9, 9)))

    def test_study_decays(self):
        D = np.array([[0, 1], [1, 0]])
        assert correlation_matrix(D, 10.0)[0, 1] == pytest.approx(4.54e-5, rel=1e-3)
        assert correlation_matrix(D, 1.0)[0, 1] == pytest.approx(0.3679, abs=1e-4)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.0, 50.0))
    def test_lattice_positive_definite_with_nugget(self, gamma):
        D = graph_distance_matrix(lattice_graph(8, 8))
        H = correlation_matrix(D, gamma, nugget=1e-6)
        assert np.all(np.linalg.eigvalsh(H) > 0)
        assert np.allclose(np.diag(H), 1 + 1e-6)

    def test_non_pd_reports(self):
        # zero distances make exp(-gamma D) the singular all-ones matrix
        D = np.zeros((3, 3))
        with pytest.raises(NumericalError, match="nugget"):
            correlation_matrix(D, 1.0)


class TestEdgeListFiles:
    def test_round_trip_keeps_order(self, tmp_path):
        g = lattice_graph(3, 4)
        write_edge_list(g, tmp_path / "g.txt")
        back = read_edge_list(tmp_path / "g.txt")
        assert back.site_ids == g.site_ids and back.edges == g.edges

    def test_comments_duplicates_and_isolated(self, tmp_path):
        path = tmp_path / "g.txt"
        path.write_text("# header\nA B\nB A\n\nB C\nD\n")
        g = read_edge_list(path)
        assert g.site_ids == ("A", "B", "C", "D") and len(g.edges) == 2
        with pytest.raises(GraphError):
            validate_graph(g)

    def test_dataset_order_and_missing(self, tmp_path):
        path = tmp_path / "g.txt"
        path.write_text("A B\nB C\n")
        assert read_edge_list(path, ["C", "A"]).site_ids == ("C", "A", "B")
        with pytest.raises(GraphError, match="absent"):
            read_edge_list(path, ["A", "Q"])

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "g.txt"
        path.write_text("A B\nA B C\n")
        with pytest.raises(GraphError, match=":2:"):
            read_edge_list(path)
