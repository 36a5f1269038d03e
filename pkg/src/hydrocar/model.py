"""Participants, model specifications, observation matrices and the Bernoulli-logit likelihood."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence, TextIO

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .exceptions import ValidationError
from .network import WaterNetwork, simplify
from .precision import (
    PrecisionMatrix,
    Weighting,
    build_border_precision,
    build_precision,
    iid_precision,
)

HOUSEHOLD = "household_iid"
SPATIAL = "spatial_lattice"
GRAPH = "water_graph"
LATENT_EFFECTS = (HOUSEHOLD, SPATIAL, GRAPH)
FIXED_EFFECTS = ("intercept", "age", "gender")

# command-line tokens
TOKENS = {
    "age": "age",
    "gender": "gender",
    "house": HOUSEHOLD,
    "spatial": SPATIAL,
    "graph": GRAPH,
}
LABELS = {
    "age": "Age",
    "gender": "Gender",
    HOUSEHOLD: "House ID",
    SPATIAL: "Spatial Effect",
    GRAPH: "Water Graph",
}

DEFAULT_HYPERPRIOR = (1.0, 5e-5)
DEFAULT_FIXED_PRECISION = 1e-3
DEFAULT_CELL_SIZE = 1000.0


@dataclass(frozen=True)
class Participant:
    id: str
    outcome: int
    age: float
    gender: int
    house_id: str
    node_id: str
    location: tuple[float, float] | None = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented participant table linked to a water network."""

    ids: np.ndarray
    outcome: np.ndarray
    age: np.ndarray
    gender: np.ndarray
    house_id: np.ndarray
    node_id: np.ndarray
    location: np.ndarray  # (n, 2), NaN where unknown
    network: WaterNetwork
    outcome_name: str = "outcome"

    def __post_init__(self):
        n = len(self.ids)
        for name in ("outcome", "age", "gender", "house_id", "node_id"):
            if len(getattr(self, name)) != n:
                raise ValidationError(f"column {name} has {len(getattr(self, name))} rows, expected {n}")
        loc = np.asarray(self.location, dtype=float).reshape(n, 2)
        object.__setattr__(self, "location", loc)
        if n and not set(np.unique(self.outcome)) <= {0, 1}:
            raise ValidationError("outcomes must be coded 0/1")
        if np.any(np.asarray(self.age) < 0):
            raise ValidationError("ages must be non-negative")
        if n and not set(np.unique(self.gender)) <= {0, 1}:
            raise ValidationError("gender must be coded 0 (female) / 1 (male)")
        known = set(self.network.nodes)
        bad = sorted({str(v) for v in self.node_id} - known)
        if bad:
            raise ValidationError(f"participants linked to unknown node(s): {', '.join(bad[:10])}")

    def __len__(self):
        return len(self.ids)

    @classmethod
    def from_participants(
        cls, participants: Sequence[Participant], network: WaterNetwork, outcome_name: str = "outcome"
    ) -> "Dataset":
        loc = np.array(
            [p.location if p.location is not None else (np.nan, np.nan) for p in participants],
            dtype=float,
        ).reshape(len(participants), 2)
        return cls(
            ids=np.array([str(p.id) for p in participants], dtype=object),
            outcome=np.array([p.outcome for p in participants], dtype=int),
            age=np.array([p.age for p in participants], dtype=float),
            gender=np.array([p.gender for p in participants], dtype=int),
            house_id=np.array([str(p.house_id) for p in participants], dtype=object),
            node_id=np.array([str(p.node_id) for p in participants], dtype=object),
            location=loc,
            network=network,
            outcome_name=outcome_name,
        )

    @property
    def participants(self) -> list[Participant]:
        out = []
        for i in range(len(self)):
            xy = self.location[i]
            out.append(
                Participant(
                    self.ids[i], int(self.outcome[i]), float(self.age[i]), int(self.gender[i]),
                    self.house_id[i], self.node_id[i],
                    None if np.isnan(xy).any() else (float(xy[0]), float(xy[1])),
                )
            )
        return out

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        return replace(
            self,
            ids=self.ids[mask], outcome=self.outcome[mask], age=self.age[mask],
            gender=self.gender[mask], house_id=self.house_id[mask],
            node_id=self.node_id[mask], location=self.location[mask],
        )

    def with_network(self, network: WaterNetwork) -> "Dataset":
        return replace(self, network=network)

    def anchored_network(self) -> WaterNetwork:
        """The network with every participant-linked node anchored."""
        return self.network.with_anchors(set(self.node_id))

    def simplified(self) -> "Dataset":
        return self.with_network(simplify(self.anchored_network()))

    def has_location(self) -> np.ndarray:
        return ~np.isnan(self.location).any(axis=1)


PARTICIPANT_COLUMNS = ("id", "outcome", "age", "gender", "house_id", "node_id", "x", "y")


def read_participants(
    stream: TextIO | str, network: WaterNetwork, outcome_name: str = "outcome"
) -> Dataset:
    """Parse participants.csv; rows with a blank outcome are dropped (complete cases)."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.DictReader(stream)
    header = [h.strip() for h in (reader.fieldnames or [])]
    missing = [c for c in PARTICIPANT_COLUMNS[:6] if c not in header]
    if missing:
        raise ValidationError(f"participants: missing column(s) {', '.join(missing)}")
    reader.fieldnames = header
    people = []
    for lineno, row in enumerate(reader, start=2):
        outcome = (row["outcome"] or "").strip()
        if outcome == "":
            continue
        try:
            x, y = (row.get("x") or "").strip(), (row.get("y") or "").strip()
            people.append(
                Participant(
                    id=row["id"].strip(),
                    outcome=int(outcome),
                    age=float(row["age"]),
                    gender=int(row["gender"]),
                    house_id=row["house_id"].strip(),
                    node_id=row["node_id"].strip(),
                    location=(float(x), float(y)) if x and y else None,
                )
            )
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"participants row {lineno}: {exc}") from None
    return Dataset.from_participants(people, network, outcome_name)


def write_participants(ds: Dataset, stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(PARTICIPANT_COLUMNS)
    for i in range(len(ds)):
        xy = ds.location[i]
        coords = ["", ""] if np.isnan(xy).any() else [repr(float(xy[0])), repr(float(xy[1]))]
        w.writerow(
            [ds.ids[i], int(ds.outcome[i]), repr(float(ds.age[i])), int(ds.gender[i]),
             ds.house_id[i], ds.node_id[i], *coords]
        )


@dataclass(frozen=True)
class ModelSpec:
    """Fixed effects (intercept first) plus an ordered set of latent effects.

    ``hyperprior`` maps a latent effect to the (shape, rate) of a Gamma prior
    on its precision; effects not listed use ``DEFAULT_HYPERPRIOR``.
    """

    fixed: tuple[str, ...] = ("intercept", "age", "gender")
    latent: tuple[str, ...] = ()
    hyperprior: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    fixed_prior_precision: float = DEFAULT_FIXED_PRECISION
    cell_size: float = DEFAULT_CELL_SIZE
    weighting: str = "distance"

    def __post_init__(self):
        fixed = tuple(self.fixed)
        if "intercept" not in fixed:
            fixed = ("intercept",) + fixed
        if fixed[0] != "intercept":
            fixed = ("intercept",) + tuple(f for f in fixed if f != "intercept")
        for f in fixed:
            if f not in FIXED_EFFECTS:
                raise ValidationError(f"unknown fixed effect {f!r}")
        if len(set(fixed)) != len(fixed):
            raise ValidationError("fixed effects must be unique")
        latent = tuple(self.latent)
        for name in latent:
            if name not in LATENT_EFFECTS:
                raise ValidationError(f"unknown latent effect {name!r}")
        if len(set(latent)) != len(latent):
            raise ValidationError("each latent effect may appear at most once")
        if not self.fixed_prior_precision > 0:
            raise ValidationError("fixed_prior_precision must be positive")
        if not self.cell_size > 0:
            raise ValidationError("cell_size must be positive")
        Weighting(self.weighting)
        object.__setattr__(self, "fixed", fixed)
        object.__setattr__(self, "latent", latent)
        object.__setattr__(self, "hyperprior", dict(self.hyperprior))

    @classmethod
    def parse(cls, text: str, **kwargs) -> "ModelSpec":
        """Build a spec from comma-separated tokens (age, gender, house, spatial, graph)."""
        tokens = [t.strip().lower() for t in text.split(",") if t.strip()]
        unknown = [t for t in tokens if t not in TOKENS]
        if unknown:
            raise ValidationError(
                f"unknown spec token(s) {', '.join(map(repr, unknown))}; "
                f"valid tokens: {', '.join(TOKENS)}"
            )
        if len(set(tokens)) != len(tokens):
            raise ValidationError(f"repeated spec token in {text!r}")
        fixed = ["intercept"] + [t for t in tokens if t in ("age", "gender")]
        latent = [TOKENS[t] for t in tokens if TOKENS[t] in LATENT_EFFECTS]
        return cls(tuple(fixed), tuple(latent), **kwargs)

    @property
    def label(self) -> str:
        parts = [LABELS[f] for f in self.fixed if f != "intercept"]
        parts += [LABELS[name] for name in self.latent]
        return ", ".join(parts) if parts else "Intercept"

    @property
    def tokens(self) -> str:
        inverse = {v: k for k, v in TOKENS.items()}
        return ",".join(inverse[e] for e in self.fixed[1:] + self.latent)

    def prior_for(self, effect: str) -> tuple[float, float]:
        return tuple(self.hyperprior.get(effect, DEFAULT_HYPERPRIOR))

    def requires(self) -> set[str]:
        """Dataset columns needed beyond outcome."""
        need = set()
        if "age" in self.fixed:
            need.add("age")
        if "gender" in self.fixed:
            need.add("gender")
        if HOUSEHOLD in self.latent:
            need.add("house_id")
        if SPATIAL in self.latent:
            need.add("location")
        if GRAPH in self.latent:
            need.add("node_id")
        return need


@dataclass(frozen=True)
class LatentLayout:
    """Positions of each block within the stacked latent vector."""

    slices: Mapping[str, slice]
    n: int

    def __getitem__(self, name: str) -> slice:
        return self.slices[name]

    @property
    def fixed(self) -> slice:
        return self.slices["fixed"]


def build_spatial_lattice(ds: Dataset, cell_size: float = DEFAULT_CELL_SIZE):
    """Square-grid cells over the participants' bounding box.

    Returns ``(adjacency, cells)``: rook adjacency between occupied cells and
    the ``(col, row)`` cell of each participant.
    """
    if not cell_size > 0:
        raise ValidationError(f"cell_size must be positive, got {cell_size!r}")
    has = ds.has_location()
    if not has.all():
        missing = [str(i) for i in ds.ids[~has]]
        raise ValidationError(f"participants without location: {', '.join(missing[:20])}")
    if len(ds) == 0:
        return {}, []
    origin = ds.location.min(axis=0)
    idx = np.floor((ds.location - origin) / cell_size).astype(np.int64)
    cells = [(int(c), int(r)) for c, r in idx]
    occupied = sorted(set(cells))
    occ = set(occupied)
    adjacency = {}
    for c, r in occupied:
        adjacency[(c, r)] = [
            nb for nb in ((c - 1, r), (c + 1, r), (c, r - 1), (c, r + 1)) if nb in occ
        ]
    return adjacency, cells


@dataclass(frozen=True, eq=False)
class LatentModel:
    """Everything needed to evaluate the latent Gaussian model for one spec."""

    spec: ModelSpec
    layout: LatentLayout
    design: sp.csr_matrix
    y: np.ndarray
    structures: Mapping[str, PrecisionMatrix]  # unscaled precision of each latent block
    age_center: float
    age_scale: float
    block_labels: Mapping[str, tuple]

    @property
    def n(self) -> int:
        return self.layout.n

    def prior_blocks(self) -> list[tuple[str, PrecisionMatrix]]:
        fixed = iid_precision(len(self.spec.fixed), self.spec.fixed)
        return [("fixed", fixed)] + [(name, self.structures[name]) for name in self.spec.latent]

    def constraint_matrix(self) -> np.ndarray:
        rows = []
        for name in self.spec.latent:
            pm = self.structures[name]
            if not pm.intrinsic:
                continue
            sl = self.layout[name]
            for comp in pm.components:
                row = np.zeros(self.n)
                row[sl.start + comp] = 1.0
                rows.append(row)
        return np.array(rows).reshape(len(rows), self.n)


def latent_layout(ds: Dataset, spec: ModelSpec) -> LatentLayout:
    return _structure(ds, spec)[0]


def _structure(ds: Dataset, spec: ModelSpec):
    sizes = {"fixed": len(spec.fixed)}
    structures: dict[str, PrecisionMatrix] = {}
    index_of: dict[str, np.ndarray] = {}
    labels: dict[str, tuple] = {"fixed": spec.fixed}
    for name in spec.latent:
        if name == HOUSEHOLD:
            houses, inverse = np.unique(ds.house_id.astype(str), return_inverse=True)
            structures[name] = iid_precision(len(houses), tuple(houses))
            index_of[name] = inverse
        elif name == SPATIAL:
            adjacency, cells = build_spatial_lattice(ds, spec.cell_size)
            pm = build_border_precision(adjacency)
            structures[name] = pm
            lookup = pm.index_map
            index_of[name] = np.array([lookup[c] for c in cells], dtype=np.intp)
        elif name == GRAPH:
            pm = build_precision(ds.network, spec.weighting)
            structures[name] = pm
            lookup = pm.index_map
            index_of[name] = np.array([lookup[v] for v in ds.node_id], dtype=np.intp)
        sizes[name] = structures[name].dim
        labels[name] = structures[name].labels
    slices = {}
    start = 0
    for name in ("fixed",) + spec.latent:
        slices[name] = slice(start, start + sizes[name])
        start += sizes[name]
    return LatentLayout(slices, start), structures, index_of, labels


def design_matrix(ds: Dataset, spec: ModelSpec, layout: LatentLayout | None = None) -> sp.csr_matrix:
    return build_latent_model(ds, spec, layout).design


def build_latent_model(ds: Dataset, spec: ModelSpec, layout: LatentLayout | None = None) -> LatentModel:
    """Observation matrix ``A`` with ``eta = A @ x`` plus the block priors."""
    computed, structures, index_of, labels = _structure(ds, spec)
    if layout is not None and layout != computed:
        raise ValidationError("layout does not match the dataset and spec")
    layout = computed
    m = len(ds)
    age = np.asarray(ds.age, dtype=float)
    center = float(age.mean()) if m else 0.0
    scale = float(age.std()) if m else 1.0
    if not scale > 0:
        scale = 1.0

    nnz_per_row = len(spec.fixed) + len(spec.latent)
    cols = np.empty((m, nnz_per_row), dtype=np.intp)
    vals = np.empty((m, nnz_per_row))
    k = 0
    for j, name in enumerate(spec.fixed):
        cols[:, k] = layout.fixed.start + j
        if name == "intercept":
            vals[:, k] = 1.0
        elif name == "age":
            vals[:, k] = (age - center) / scale
        else:
            vals[:, k] = np.asarray(ds.gender, dtype=float)
        k += 1
    for name in spec.latent:
        cols[:, k] = layout[name].start + index_of[name]
        vals[:, k] = 1.0
        k += 1
    # explicit zeros (e.g. gender 0) are kept so every row has the same pattern
    order = np.argsort(cols, axis=1, kind="stable")
    cols = np.take_along_axis(cols, order, axis=1)
    vals = np.take_along_axis(vals, order, axis=1)
    indptr = np.arange(0, m * nnz_per_row + 1, nnz_per_row)
    A = sp.csr_matrix((vals.ravel(), cols.ravel(), indptr), shape=(m, layout.n))
    return LatentModel(
        spec=spec,
        layout=layout,
        design=A,
        y=np.asarray(ds.outcome, dtype=float),
        structures=structures,
        age_center=center,
        age_scale=scale,
        block_labels=labels,
    )


def loglik(y, eta):
    """Bernoulli-logit log-likelihood, its gradient in eta and the weights p(1-p)."""
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if y.shape != eta.shape:
        raise ValidationError(f"y has shape {y.shape} but eta has shape {eta.shape}")
    if y.size and not np.all((y == 0) | (y == 1)):
        raise ValidationError("outcomes must be 0 or 1")
    value = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    p = expit(eta)
    return value, y - p, p * expit(-eta)


def deviance(y, eta) -> float:
    return -2.0 * loglik(y, eta)[0]
