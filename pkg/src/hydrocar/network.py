"""Directed water-pipeline graphs: parsing, simplification and traversal."""

from __future__ import annotations

import csv
import heapq
import io
from dataclasses import dataclass, field
from typing import Iterable, Mapping, TextIO

from .exceptions import NetworkError

NodeId = str


@dataclass(frozen=True)
class PipeSegment:
    """A pipe carrying water from ``source`` to ``target``.

    ``bidirectional`` marks pipes whose flow direction is unknown; they are
    traversed both ways but count as a single pipe in the precision matrix.
    """

    source: NodeId
    target: NodeId
    length: float
    bidirectional: bool = False

    def __post_init__(self):
        if self.source == self.target:
            raise NetworkError(f"self-loop on node {self.source!r}")
        if not self.length > 0:
            raise NetworkError(
                f"segment {self.source!r}->{self.target!r} has non-positive length {self.length!r}"
            )

    @property
    def pair(self) -> frozenset:
        return frozenset((self.source, self.target))


@dataclass(frozen=True)
class WaterNetwork:
    nodes: tuple[NodeId, ...]
    segments: tuple[PipeSegment, ...] = ()
    coordinates: Mapping[NodeId, tuple[float, float]] = field(default_factory=dict)
    anchored: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "anchored", frozenset(self.anchored))
        object.__setattr__(self, "coordinates", dict(self.coordinates))
        seen = set()
        for node in self.nodes:
            if node in seen:
                raise NetworkError(f"duplicate node id {node!r}", node=node)
            seen.add(node)
        directed_pairs = set()
        for seg in self.segments:
            for end in (seg.source, seg.target):
                if end not in seen:
                    raise NetworkError(f"segment references unknown node {end!r}", node=end)
            keys = [(seg.source, seg.target)]
            if seg.bidirectional:
                keys.append((seg.target, seg.source))
            for key in keys:
                if key in directed_pairs:
                    raise NetworkError(f"duplicate segment {key[0]!r}->{key[1]!r}")
                directed_pairs.add(key)
        for node in self.anchored:
            if node not in seen:
                raise NetworkError(f"anchored node {node!r} not in network", node=node)

    def __len__(self):
        return len(self.nodes)

    @property
    def node_index(self) -> dict[NodeId, int]:
        return {node: i for i, node in enumerate(self.nodes)}

    def successors(self) -> dict[NodeId, list[tuple[NodeId, float]]]:
        """Outgoing adjacency following flow direction."""
        out: dict[NodeId, list[tuple[NodeId, float]]] = {n: [] for n in self.nodes}
        for seg in self.segments:
            out[seg.source].append((seg.target, seg.length))
            if seg.bidirectional:
                out[seg.target].append((seg.source, seg.length))
        return out

    def neighbors(self) -> dict[NodeId, set[NodeId]]:
        """Undirected neighbor sets."""
        nbrs: dict[NodeId, set[NodeId]] = {n: set() for n in self.nodes}
        for seg in self.segments:
            nbrs[seg.source].add(seg.target)
            nbrs[seg.target].add(seg.source)
        return nbrs

    def with_anchors(self, nodes: Iterable[NodeId]) -> "WaterNetwork":
        return WaterNetwork(
            self.nodes, self.segments, self.coordinates, self.anchored | frozenset(nodes)
        )

    def add_segment(self, segment: PipeSegment) -> "WaterNetwork":
        return WaterNetwork(
            self.nodes, self.segments + (segment,), self.coordinates, self.anchored
        )


def _read_rows(stream: TextIO | str, required: tuple[str, ...], what: str):
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.DictReader(stream)
    if reader.fieldnames is None:
        return []
    header = [h.strip() for h in reader.fieldnames]
    missing = [col for col in required if col not in header]
    if missing:
        raise NetworkError(f"{what}: missing column(s) {', '.join(missing)}")
    reader.fieldnames = header
    # data rows start at line 2 of the file
    return [(lineno, row) for lineno, row in enumerate(reader, start=2)]


def _parse_float(text: str | None, what: str, lineno: int) -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        raise NetworkError(f"{what} row {lineno}: cannot parse number {text!r}", row=lineno) from None


def parse_network(
    nodes_stream: TextIO | str,
    segments_stream: TextIO | str,
    undirected: bool = False,
) -> WaterNetwork:
    """Read a network from ``nodes.csv`` and ``segments.csv`` contents.

    nodes.csv columns are ``node_id,x,y`` (coordinates may be blank);
    segments.csv columns are ``from_node,to_node,length_m`` with an optional
    ``bidirectional`` column (0/1). ``undirected=True`` marks every segment
    bidirectional.
    """
    nodes: list[NodeId] = []
    coords: dict[NodeId, tuple[float, float]] = {}
    seen: set[NodeId] = set()
    for lineno, row in _read_rows(nodes_stream, ("node_id",), "nodes"):
        node = (row.get("node_id") or "").strip()
        if not node:
            raise NetworkError(f"nodes row {lineno}: empty node_id", row=lineno)
        if node in seen:
            raise NetworkError(f"nodes row {lineno}: duplicate node id {node!r}", node=node, row=lineno)
        seen.add(node)
        nodes.append(node)
        x, y = (row.get("x") or "").strip(), (row.get("y") or "").strip()
        if x and y:
            coords[node] = (_parse_float(x, "nodes", lineno), _parse_float(y, "nodes", lineno))

    segments: list[PipeSegment] = []
    for lineno, row in _read_rows(
        segments_stream, ("from_node", "to_node", "length_m"), "segments"
    ):
        src = (row["from_node"] or "").strip()
        dst = (row["to_node"] or "").strip()
        for end in (src, dst):
            if end not in seen:
                raise NetworkError(
                    f"segments row {lineno}: unknown node {end!r}", node=end, row=lineno
                )
        length = _parse_float(row["length_m"], "segments", lineno)
        if not length > 0:
            raise NetworkError(
                f"segments row {lineno}: non-positive length {length!r}", row=lineno
            )
        if src == dst:
            raise NetworkError(f"segments row {lineno}: self-loop on {src!r}", row=lineno)
        flag = (row.get("bidirectional") or "0").strip().lower() in ("1", "true", "yes")
        segments.append(PipeSegment(src, dst, length, bidirectional=undirected or flag))
    return WaterNetwork(tuple(nodes), tuple(segments), coords)


def write_network(net: WaterNetwork, nodes_stream: TextIO, segments_stream: TextIO) -> None:
    w = csv.writer(nodes_stream, lineterminator="\n")
    w.writerow(["node_id", "x", "y"])
    for node in net.nodes:
        xy = net.coordinates.get(node)
        w.writerow([node, repr(xy[0]), repr(xy[1])] if xy else [node, "", ""])
    w = csv.writer(segments_stream, lineterminator="\n")
    w.writerow(["from_node", "to_node", "length_m", "bidirectional"])
    for seg in net.segments:
        w.writerow([seg.source, seg.target, repr(seg.length), int(seg.bidirectional)])


def _pass_through(net: WaterNetwork, incident: dict[NodeId, list[PipeSegment]]) -> set[NodeId]:
    """Non-anchored nodes with two distinct neighbors and a consistent flow through them."""
    result = set()
    for node in net.nodes:
        segs = incident[node]
        if node in net.anchored or len(segs) != 2:
            continue
        ends = {s.target if s.source == node else s.source for s in segs}
        if len(ends) != 2:
            continue
        if all(s.bidirectional for s in segs):
            result.add(node)
        elif not any(s.bidirectional for s in segs):
            inflow = sum(s.target == node for s in segs)
            if inflow == 1:
                result.add(node)
    return result


def simplify(net: WaterNetwork) -> WaterNetwork:
    """Contract non-anchored pass-through junctions.

    Every maximal run of pass-through nodes between two distinct retained
    nodes is replaced by one segment whose length is the sum of the run's
    lengths. Runs that close on themselves (pure cycles, or loops returning to
    the same branch node) and runs whose replacement would duplicate an
    existing pipe are left alone.
    """
    while True:
        incident: dict[NodeId, list[PipeSegment]] = {n: [] for n in net.nodes}
        for seg in net.segments:
            incident[seg.source].append(seg)
            incident[seg.target].append(seg)
        contractible = _pass_through(net, incident)
        if not contractible:
            return net

        occupied = set()
        for seg in net.segments:
            occupied.add((seg.source, seg.target))
            if seg.bidirectional:
                occupied.add((seg.target, seg.source))

        removed: set[NodeId] = set()
        dropped: set[PipeSegment] = set()
        added: list[PipeSegment] = []
        visited: set[NodeId] = set()
        for start in net.nodes:
            if start not in contractible or start in visited:
                continue
            # walk to both ends of the run containing ``start``
            run = [start]
            visited.add(start)
            ends = []
            run_segments: set[PipeSegment] = set()
            closed = False
            for first in incident[start]:
                prev, seg = start, first
                while True:
                    run_segments.add(seg)
                    nxt = seg.target if seg.source == prev else seg.source
                    if nxt == start:
                        closed = True
                        break
                    if nxt not in contractible:
                        ends.append(nxt)
                        break
                    if nxt in visited:
                        closed = True
                        break
                    visited.add(nxt)
                    run.append(nxt)
                    seg = next(s for s in incident[nxt] if s is not seg)
                    prev = nxt
                if closed:
                    break
            if closed or len(ends) != 2 or ends[0] == ends[1]:
                continue
            a, b = ends
            bidirectional = all(s.bidirectional for s in run_segments)
            if not bidirectional:
                # orient along the flow: the end that feeds the run is the source
                feeds_a = any(s.source == a for s in run_segments)
                if not feeds_a:
                    a, b = b, a
            keys = [(a, b), (b, a)] if bidirectional else [(a, b)]
            if any(k in occupied for k in keys):
                continue
            occupied.update(keys)
            length = sum(s.length for s in run_segments)
            added.append(PipeSegment(a, b, length, bidirectional=bidirectional))
            removed.update(run)
            dropped.update(run_segments)

        if not removed:
            return net
        nodes = tuple(n for n in net.nodes if n not in removed)
        segments = tuple(s for s in net.segments if s not in dropped) + tuple(added)
        coords = {n: xy for n, xy in net.coordinates.items() if n not in removed}
        net = WaterNetwork(nodes, segments, coords, net.anchored)


def downstream(net: WaterNetwork, origin: NodeId) -> set[NodeId]:
    """Nodes reachable from ``origin`` by following the flow, origin included."""
    return set(downstream_distances(net, origin))


def downstream_distances(net: WaterNetwork, origin: NodeId) -> dict[NodeId, float]:
    """Shortest flow-path length from ``origin`` to every downstream node."""
    if origin not in net.node_index:
        raise NetworkError(f"unknown origin node {origin!r}", node=origin)
    succ = net.successors()
    dist = {origin: 0.0}
    heap = [(0.0, origin)]
    while heap:
        d, node = heapq.heappop(heap)
        if d > dist[node]:
            continue
        for nxt, length in succ[node]:
            nd = d + length
            if nd < dist.get(nxt, float("inf")):
                dist[nxt] = nd
                heapq.heappush(heap, (nd, nxt))
    return dist


def connected_components(net: WaterNetwork) -> list[set[NodeId]]:
    """Weakly connected components, ordered by first node appearance."""
    parent = {n: n for n in net.nodes}

    def find(n):
        while parent[n] != n:
            parent[n] = parent[parent[n]]
            n = parent[n]
        return n

    for seg in net.segments:
        ra, rb = find(seg.source), find(seg.target)
        if ra != rb:
            parent[rb] = ra

    blocks: dict[NodeId, set[NodeId]] = {}
    for node in net.nodes:
        blocks.setdefault(find(node), set()).add(node)
    return list(blocks.values())
