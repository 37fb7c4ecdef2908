import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridfault.grid import (
    Bus,
    DisconnectedGraphError,
    Line,
    Load,
    NetworkError,
    NetworkGraph,
    build_adjacency,
    build_admittance,
    bundled_network_path,
    load_network,
    normalized_propagation,
    resolve_network,
)


def tiny_graph(n, edges, z=complex(0.2, 0.4)):
    return NetworkGraph(
        buses=tuple(Bus(i, str(i + 1), 13200.0) for i in range(n)),
        lines=tuple(Line(i, j, z) for i, j in edges),
    )


def random_connected_adjacency(rng, n):
    a = np.zeros((n, n))
    order = rng.permutation(n)
    for k in range(1, n):
        i, j = order[k], order[rng.integers(0, k)]
        a[i, j] = a[j, i] = 1.0
    extra = rng.integers(0, n)
    for _ in range(extra):
        i, j = rng.integers(0, n, size=2)
        if i != j:
            a[i, j] = a[j, i] = 1.0
    return a


class TestBuildAdjacency:
    def test_two_buses_no_lines_is_disconnected(self):
        with pytest.raises(DisconnectedGraphError):
            build_adjacency(tiny_graph(2, []))

    def test_two_buses_one_line(self):
        a = build_adjacency(tiny_graph(2, [(0, 1)]))
        assert a.tolist() == [[0.0, 1.0], [1.0, 0.0]]

    def test_potsdam_binary(self):
        g = resolve_network("potsdam13")
        a = build_adjacency(g)
        assert a.shape == (13, 13)
        assert np.array_equal(a, a.T)
        assert np.all(np.diag(a) == 0)
        assert set(np.unique(a)) <= {0.0, 1.0}

    def test_duplicate_lines_collapse_in_binary_mode(self):
        single = build_adjacency(tiny_graph(2, [(0, 1)]))
        doubled = build_adjacency(tiny_graph(2, [(0, 1), (0, 1), (1, 0)]))
        assert np.array_equal(single, doubled)

    def test_weighted_mode_uses_branch_admittance_magnitude(self):
        z = complex(3.0, 4.0)
        a = build_adjacency(tiny_graph(2, [(0, 1)], z=z), mode="admittance_weighted")
        assert a[0, 1] == pytest.approx(1.0 / 5.0)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            build_adjacency(tiny_graph(2, [(0, 1)]), mode="spectral")


class TestNormalizedPropagation:
    def test_single_node(self):
        assert normalized_propagation(np.zeros((1, 1))).tolist() == [[1.0]]

    def test_two_nodes_exact(self):
        p = normalized_propagation(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert p.tolist() == [[0.5, 0.5], [0.5, 0.5]]

    def test_three_node_path_matches_direct_arithmetic(self):
        a = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
        # independent oracle: explicit D^{-1/2} (A+I) D^{-1/2}
        at = a + np.eye(3)
        d = np.diag(1.0 / np.sqrt(at.sum(axis=1)))
        oracle = d @ at @ d
        p = normalized_propagation(a)
        assert np.abs(p - oracle).max() < 1e-14
        expected = np.array([
            [0.5, 1 / math.sqrt(6), 0.0],
            [1 / math.sqrt(6), 1 / 3, 1 / math.sqrt(6)],
            [0.0, 1 / math.sqrt(6), 0.5],
        ])
        assert np.abs(p - expected).max() < 1e-14

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            normalized_propagation(np.array([[0.0, 1.0], [0.0, 0.0]]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=2, max_value=12), st.integers(min_value=0, max_value=2**32 - 1))
    def test_symmetry_and_spectral_radius(self, n, seed):
        rng = np.random.default_rng(seed)
        a = random_connected_adjacency(rng, n)
        p = normalized_propagation(a)
        assert np.abs(p - p.T).max() == 0.0
        # power iteration for the dominant eigenvalue magnitude
        v = rng.standard_normal(n)
        for _ in range(200):
            w = p @ v
            v = w / np.linalg.norm(w)
        radius = abs(v @ (p @ v))
        assert radius <= 1.0 + 1e-9

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=2, max_value=10), st.integers(min_value=0, max_value=2**32 - 1))
    def test_permutation_consistency_exact(self, n, seed):
        rng = np.random.default_rng(seed)
        a = random_connected_adjacency(rng, n)
        perm = rng.permutation(n)
        pa = a[np.ix_(perm, perm)]
        left = normalized_propagation(pa)
        right = normalized_propagation(a)[np.ix_(perm, perm)]
        assert np.array_equal(left, right)


class TestBuildAdmittance:
    def test_single_bus_shunt(self):
        g = NetworkGraph(
            buses=(Bus(0, "1", 13200.0),),
            lines=(),
            loads=(Load(0, (2 + 1j, 2 + 1j, 2 + 1j)),),
        )
        y = build_admittance(g)
        assert y.shape == (3, 3)
        assert np.allclose(np.diag(y), 2 + 1j)
        assert np.count_nonzero(y - np.diag(np.diag(y))) == 0

    def test_two_bus_line_block(self):
        z = complex(0.0, 2.0)
        g = tiny_graph(2, [(0, 1)], z=z)
        y = build_admittance(g)
        yl = 1.0 / z
        for p in range(3):
            assert y[p, p] == yl
            assert y[p, 3 + p] == -yl
            assert y[3 + p, p] == -yl

    def test_complex_symmetric_and_zero_row_sums_without_shunts(self):
        g = tiny_graph(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
        y = build_admittance(g)
        assert np.array_equal(y, y.T)
        scale = np.abs(y).max()
        assert np.abs(y.sum(axis=1)).max() / scale < 1e-12

    def test_zero_impedance_line_rejected(self):
        with pytest.raises(NetworkError):
            build_admittance(tiny_graph(2, [(0, 1)], z=0j))

    def test_potsdam_shape(self):
        y = build_admittance(resolve_network("potsdam13"))
        assert y.shape == (39, 39)
        assert np.array_equal(y, y.T)


class TestLoadNetwork:
    def test_round_trip_minimal(self, tmp_path):
        doc = {
            "buses": [{"name": "1", "v_ll": 480.0}, {"name": "2", "v_ll": 480.0}],
            "lines": [{"from": "1", "to": "2", "z": [0.1, 0.2]}],
        }
        path = tmp_path / "net.json"
        path.write_text(json.dumps(doc))
        g = load_network(path)
        assert g.n_buses == 2 and g.n_lines == 1
        assert g.lines[0].z == complex(0.1, 0.2)

    def test_undeclared_bus(self, tmp_path):
        doc = {
            "buses": [{"name": "1", "v_ll": 480.0}, {"name": "2", "v_ll": 480.0}],
            "lines": [{"from": "1", "to": "7", "z": [0.1, 0.2]}],
        }
        path = tmp_path / "net.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(NetworkError, match="undeclared bus '7'"):
            load_network(path)

    def test_parse_error_reports_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{\n "buses": [,]\n}')
        with pytest.raises(NetworkError, match="line 2"):
            load_network(path)

    def test_bundled_potsdam_matches_diagram(self):
        g = load_network(bundled_network_path("potsdam13"))
        assert g.n_buses == 13
        assert len(g.sources) == 5
        names = [g.buses[i].name for i in g.measured_buses]
        assert names == ["1", "5", "8", "9", "10", "13"]

    def test_bundled_ieee123_main_buses(self):
        g = load_network(bundled_network_path("ieee123-main46"))
        assert g.n_buses == 46
        assert len(g.sources) == 1
        g.validate()
