import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydrocar.exceptions import NetworkError
from hydrocar.network import (
    PipeSegment,
    WaterNetwork,
    connected_components,
    downstream,
    downstream_distances,
    parse_network,
    simplify,
)
from hydrocar.precision import build_distance_precision

from oracles import dfs_reachable, random_dag, schur_complement


class TestParse:
    def test_y_network(self, y_network):
        assert y_network.nodes == ("A", "B", "C")
        assert len(y_network.segments) == 2
        assert y_network.coordinates["C"] == (0.0, 30.0)

    def test_single_node_no_segments(self):
        net = parse_network("node_id,x,y\nA,,\n", "from_node,to_node,length_m\n")
        assert net.nodes == ("A",)
        assert net.segments == ()
        assert net.coordinates == {}

    def test_unknown_node_is_named(self):
        with pytest.raises(NetworkError, match="'Z'") as info:
            parse_network("node_id\nA\nB\n", "from_node,to_node,length_m\nA,Z,3\n")
        assert info.value.node == "Z"

    @pytest.mark.parametrize("length", ["0", "-2.5"])
    def test_non_positive_length_reports_row(self, length):
        with pytest.raises(NetworkError, match="row 3"):
            parse_network("node_id\nA\nB\n", f"from_node,to_node,length_m\nA,B,1\nB,A,{length}\n")

    def test_duplicate_node(self):
        with pytest.raises(NetworkError, match="duplicate"):
            parse_network("node_id\nA\nA\n", "from_node,to_node,length_m\n")

    def test_duplicate_segment(self):
        with pytest.raises(NetworkError, match="duplicate segment"):
            parse_network("node_id\nA\nB\n", "from_node,to_node,length_m\nA,B,1\nA,B,2\n")

    def test_opposite_pair_allowed(self):
        net = parse_network("node_id\nA\nB\n", "from_node,to_node,length_m\nA,B,1\nB,A,2\n")
        assert len(net.segments) == 2

    def test_undirected_flag(self):
        net = parse_network("node_id\nA\nB\n", "from_node,to_node,length_m\nA,B,1\n", undirected=True)
        assert net.segments[0].bidirectional
        assert downstream(net, "B") == {"A", "B"}


class TestSimplify:
    def test_chain_lengths_add(self, chain):
        out = simplify(chain)
        assert out.nodes == ("A", "B")
        assert out.segments == (PipeSegment("A", "B", 12.0),)

    def test_anchored_survives(self, chain):
        net = chain.with_anchors({"X"})
        out = simplify(net)
        assert out.nodes == net.nodes and out.segments == net.segments

    def test_pure_cycle_unchanged(self):
        nodes = ("a", "b", "c", "d")
        segs = tuple(PipeSegment(nodes[i], nodes[(i + 1) % 4], 1.0 + i) for i in range(4))
        net = WaterNetwork(nodes, segs)
        out = simplify(net)
        assert out.nodes == nodes and out.segments == segs

    def test_loop_back_to_branch_node_unchanged(self):
        # P feeds a loop P->x->y->P and a tail P->T
        net = WaterNetwork(
            ("P", "x", "y", "T", "S"),
            (PipeSegment("S", "P", 1), PipeSegment("P", "x", 1), PipeSegment("x", "y", 1),
             PipeSegment("y", "P", 1), PipeSegment("P", "T", 1)),
            anchored={"S", "T"},
        )
        assert set(simplify(net).nodes) == {"P", "x", "y", "T", "S"}

    def test_converging_flow_kept(self):
        # X receives from both sides: a sink, not a pass-through
        net = WaterNetwork(("A", "X", "B"), (PipeSegment("A", "X", 1), PipeSegment("B", "X", 1)))
        assert simplify(net).nodes == ("A", "X", "B")

    def test_bidirectional_chain(self):
        net = WaterNetwork(
            ("A", "X", "B"),
            (PipeSegment("A", "X", 2, True), PipeSegment("X", "B", 3, True)),
        )
        out = simplify(net)
        assert out.segments == (PipeSegment("A", "B", 5, True),)

    def test_duplicate_replacement_skipped(self):
        # A->X->B alongside an existing A->B pipe
        net = WaterNetwork(
            ("A", "X", "B"),
            (PipeSegment("A", "X", 2), PipeSegment("X", "B", 3), PipeSegment("A", "B", 4)),
        )
        assert simplify(net).nodes == ("A", "X", "B")

    def test_branching_tree(self):
        # R -> a -> b -> J, J -> c -> L1, J -> L2
        net = WaterNetwork(
            ("R", "a", "b", "J", "c", "L1", "L2"),
            (PipeSegment("R", "a", 1), PipeSegment("a", "b", 2), PipeSegment("b", "J", 3),
             PipeSegment("J", "c", 4), PipeSegment("c", "L1", 5), PipeSegment("J", "L2", 6)),
        )
        out = simplify(net)
        assert set(out.nodes) == {"R", "J", "L1", "L2"}
        assert set(out.segments) == {PipeSegment("J", "L2", 6), PipeSegment("R", "J", 6), PipeSegment("J", "L1", 9)}
        assert downstream(out, "R") == set(out.nodes)

    def test_idempotent_on_random_trees(self):
        rng = random.Random(4)
        for _ in range(30):
            net = _random_tree(rng, rng.randint(2, 40))
            once = simplify(net)
            twice = simplify(once)
            assert once.nodes == twice.nodes and set(once.segments) == set(twice.segments)

    def test_marginalization_exact(self):
        rng = random.Random(11)
        for _ in range(30):
            net = _random_tree(rng, rng.randint(2, 30), anchor_prob=0.3)
            _assert_schur(net, simplify(net))

    def test_path_lengths_preserved(self):
        rng = random.Random(2)
        for _ in range(20):
            net = _random_tree(rng, rng.randint(2, 30))
            out = simplify(net)
            full = downstream_distances(net, net.nodes[0])
            short = downstream_distances(out, net.nodes[0])
            for node, d in short.items():
                assert d == pytest.approx(full[node], rel=1e-12)


def _random_tree(rng, n, anchor_prob=0.0):
    names = [f"n{i}" for i in range(n)]
    segs = []
    for i in range(1, n):
        segs.append(PipeSegment(names[rng.randrange(i)], names[i], rng.uniform(0.5, 10)))
    anchored = {m for m in names if rng.random() < anchor_prob}
    return WaterNetwork(tuple(names), tuple(segs), anchored=anchored)


def _assert_schur(full, simple):
    Qf = build_distance_precision(full).toarray()
    Qs = build_distance_precision(simple).toarray()
    idx = full.node_index
    keep = [idx[n] for n in simple.nodes]
    drop = [idx[n] for n in full.nodes if n not in set(simple.nodes)]
    np.testing.assert_allclose(Qs, schur_complement(Qf, keep, drop), atol=1e-12, rtol=0)


class TestDownstream:
    def test_chain_source_reaches_all(self):
        net = WaterNetwork(("A", "B", "C"), (PipeSegment("A", "B", 1), PipeSegment("B", "C", 1)))
        assert downstream(net, "A") == {"A", "B", "C"}
        assert downstream(net, "C") == {"C"}

    def test_unknown_origin(self, y_network):
        with pytest.raises(NetworkError):
            downstream(y_network, "Q")

    def test_matches_dfs_on_random_dags(self):
        rng = random.Random(7)
        for _ in range(20):
            names, edges = random_dag(50, 0.06, rng)
            net = WaterNetwork(tuple(names), tuple(PipeSegment(a, b, 1.0) for a, b in edges))
            for origin in rng.sample(names, 5):
                assert downstream(net, origin) == dfs_reachable(edges, origin)

    @settings(max_examples=60, deadline=None)
    @given(st.data())
    def test_contains_origin_and_monotone(self, data):
        n = data.draw(st.integers(2, 12))
        names = [f"v{i}" for i in range(n)]
        pairs = data.draw(st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))
                                  .filter(lambda p: p[0] != p[1]), max_size=20))
        net = WaterNetwork(tuple(names), tuple(PipeSegment(names[a], names[b], 1.0) for a, b in pairs))
        origin = names[data.draw(st.integers(0, n - 1))]
        before = downstream(net, origin)
        assert origin in before
        extra = data.draw(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).filter(lambda p: p[0] != p[1]))
        if extra not in pairs:
            bigger = net.add_segment(PipeSegment(names[extra[0]], names[extra[1]], 1.0))
            assert before <= downstream(bigger, origin)


class TestComponents:
    def test_y_network_single_component(self, y_network):
        assert connected_components(y_network) == [{"A", "B", "C"}]

    def test_two_disjoint_edges(self):
        net = WaterNetwork(("a", "b", "c", "d"), (PipeSegment("a", "b", 1), PipeSegment("d", "c", 1)))
        assert connected_components(net) == [{"a", "b"}, {"c", "d"}]

    def test_empty(self):
        assert connected_components(WaterNetwork(())) == []
