"""Sparse intrinsic CAR precision matrices.

Two weightings are supported. ``border`` gives every neighbor pair the value
-1 and puts the neighbor count on the diagonal. ``distance`` divides -1 by the
pipe length and puts the sum of the off-diagonal magnitudes on the diagonal,
so that nearby junctions are tied more tightly than distant ones.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence, TextIO

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components as _csgraph_components

from .exceptions import ValidationError
from .network import WaterNetwork


class Weighting(enum.Enum):
    BORDER = "border"
    DISTANCE = "distance"


@dataclass(frozen=True, eq=False)
class PrecisionMatrix:
    """Symmetric sparse precision with its row labels.

    ``components`` holds arrays of row indices, one per connected block of
    the sparsity graph; for intrinsic matrices each block carries one zero
    eigenvalue.
    """

    matrix: sp.csr_matrix
    labels: tuple[Hashable, ...]
    intrinsic: bool = False
    components: tuple[np.ndarray, ...] = field(default=None)

    def __post_init__(self):
        mat = sp.csr_matrix(self.matrix, dtype=float)
        mat.sort_indices()
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "labels", tuple(self.labels))
        if mat.shape != (len(self.labels), len(self.labels)):
            raise ValidationError(
                f"matrix shape {mat.shape} does not match {len(self.labels)} labels"
            )
        if self.components is None:
            object.__setattr__(self, "components", _components(mat))

    @property
    def dim(self) -> int:
        return len(self.labels)

    @property
    def index_map(self) -> dict:
        return {label: i for i, label in enumerate(self.labels)}

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def scaled(self, tau: float) -> "PrecisionMatrix":
        return PrecisionMatrix(self.matrix * tau, self.labels, self.intrinsic, self.components)

    def constraint_matrix(self) -> np.ndarray:
        """Sum-to-zero rows, one per connected component (intrinsic only)."""
        if not self.intrinsic:
            return np.zeros((0, self.dim))
        rows = np.zeros((len(self.components), self.dim))
        for k, comp in enumerate(self.components):
            rows[k, comp] = 1.0
        return rows


def _components(mat: sp.spmatrix) -> tuple[np.ndarray, ...]:
    if mat.shape[0] == 0:
        return ()
    n_comp, labels = _csgraph_components(mat != 0, directed=False)
    # order blocks by their smallest index for reproducible constraints
    order = {}
    for i, lab in enumerate(labels):
        order.setdefault(lab, len(order))
    blocks = [[] for _ in range(n_comp)]
    for i, lab in enumerate(labels):
        blocks[order[lab]].append(i)
    return tuple(np.asarray(b, dtype=np.intp) for b in blocks)


def _from_weights(labels, weights: Mapping[tuple[int, int], float]) -> PrecisionMatrix:
    n = len(labels)
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    for (i, j), w in weights.items():
        rows += [i, j]
        cols += [j, i]
        vals += [-w, -w]
        diag[i] += w
        diag[j] += w
    rows += list(range(n))
    cols += list(range(n))
    vals += list(diag)
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return PrecisionMatrix(mat, labels, intrinsic=True)


def build_border_precision(adjacency: Mapping[Hashable, Sequence[Hashable]]) -> PrecisionMatrix:
    """Neighbor-count precision from symmetric neighbor lists.

    Units keep the key order of ``adjacency``. The lists must be symmetric,
    so a neighbor that is not itself a key raises.
    """
    labels = tuple(adjacency)
    index = {label: i for i, label in enumerate(labels)}
    weights: dict[tuple[int, int], float] = {}
    for unit, nbrs in adjacency.items():
        i = index[unit]
        for nbr in set(nbrs):
            if nbr == unit:
                raise ValidationError(f"unit {unit!r} lists itself as a neighbor")
            if nbr not in index or unit not in adjacency[nbr]:
                raise ValidationError(f"adjacency is not symmetric: {unit!r} -> {nbr!r}")
            j = index[nbr]
            if i < j:
                weights[(i, j)] = 1.0
    return _from_weights(labels, weights)


def build_distance_precision(net: WaterNetwork) -> PrecisionMatrix:
    """Inverse-distance precision of a pipe network; flow direction is ignored.

    Parallel pipes between the same pair of junctions add their weights.
    """
    index = net.node_index
    weights: dict[tuple[int, int], float] = {}
    for seg in net.segments:
        if not seg.length > 0:
            raise ValidationError(f"segment {seg.source!r}->{seg.target!r} has zero length")
        i, j = sorted((index[seg.source], index[seg.target]))
        weights[(i, j)] = weights.get((i, j), 0.0) + 1.0 / seg.length
    return _from_weights(net.nodes, weights)


def build_precision(net: WaterNetwork, weighting: Weighting | str = Weighting.DISTANCE) -> PrecisionMatrix:
    weighting = Weighting(weighting)
    if weighting is Weighting.DISTANCE:
        return build_distance_precision(net)
    nbrs = net.neighbors()
    return build_border_precision({n: sorted(nbrs[n]) for n in net.nodes})


def iid_precision(dim: int, labels: Sequence[Hashable] | None = None) -> PrecisionMatrix:
    labels = tuple(range(dim)) if labels is None else tuple(labels)
    return PrecisionMatrix(sp.identity(dim, format="csr"), labels, intrinsic=False)


def assemble_block_precision(
    blocks: Sequence[PrecisionMatrix], scales: Sequence[float]
) -> PrecisionMatrix:
    """Block-diagonal precision, each block multiplied by its scale.

    Labels of the result are ``(block_index, label)`` pairs.
    """
    if len(blocks) != len(scales):
        raise ValidationError(f"{len(blocks)} blocks but {len(scales)} scales")
    for s in scales:
        if not s > 0:
            raise ValidationError(f"block scale must be positive, got {s!r}")
    if not blocks:
        return PrecisionMatrix(sp.csr_matrix((0, 0)), ())
    mat = sp.block_diag([b.matrix * s for b, s in zip(blocks, scales)], format="csr")
    labels = tuple((k, lab) for k, b in enumerate(blocks) for lab in b.labels)
    comps = []
    offset = 0
    for b in blocks:
        comps.extend(c + offset for c in b.components)
        offset += b.dim
    return PrecisionMatrix(mat, labels, any(b.intrinsic for b in blocks), tuple(comps))


def write_coo(pm: PrecisionMatrix, stream: TextIO) -> None:
    """Upper triangle as ``row,col,value`` lines, 0-based, row-major order."""
    upper = sp.triu(pm.matrix, format="csr")
    upper.sort_indices()
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["row", "col", "value"])
    for i in range(upper.shape[0]):
        for k in range(upper.indptr[i], upper.indptr[i + 1]):
            w.writerow([i, int(upper.indices[k]), repr(float(upper.data[k]))])


def write_index_map(pm: PrecisionMatrix, stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["index", "label"])
    for i, label in enumerate(pm.labels):
        w.writerow([i, label])


def read_coo(stream: TextIO, labels: Sequence[Hashable] | None = None, intrinsic: bool = False) -> PrecisionMatrix:
    rows, cols, vals = [], [], []
    for rec in csv.DictReader(stream):
        rows.append(int(rec["row"]))
        cols.append(int(rec["col"]))
        vals.append(float(rec["value"]))
    n = len(labels) if labels is not None else (max(rows + cols) + 1 if rows else 0)
    upper = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    full = upper + sp.triu(upper, k=1).T
    return PrecisionMatrix(full, tuple(range(n)) if labels is None else labels, intrinsic)


def read_index_map(stream: TextIO) -> list[str]:
    return [rec["label"] for rec in csv.DictReader(stream)]
