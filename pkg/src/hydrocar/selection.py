"""Stepwise DIC comparison over a ladder of model specifications."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import HydrocarError, ValidationError
from .inference import fit
from .model import SPATIAL, Dataset, ModelSpec

logger = logging.getLogger(__name__)

SIGNIFICANT_REDUCTION = 10.0

DEFAULT_LADDER = (
    "age,gender",
    "age,gender,house",
    "age,gender,house,spatial",
    "age,gender,house,spatial,graph",
    "age,gender,graph",
    "graph",
)


def default_ladder(**spec_kwargs) -> list[ModelSpec]:
    return [ModelSpec.parse(tokens, **spec_kwargs) for tokens in DEFAULT_LADDER]


def significance(dic_a: float, dic_b: float, threshold: float = SIGNIFICANT_REDUCTION) -> str:
    """``"supported"`` when model b lowers the DIC of model a by at least ``threshold``."""
    return "supported" if dic_b <= dic_a - threshold else "not_supported"


def row_seed(base_seed: int, row_index: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(row_index)]).generate_state(1)[0])


def complete_cases(ds: Dataset, ladder: Sequence[ModelSpec]) -> Dataset:
    """Drop participants missing any variable used anywhere in the ladder."""
    if any(SPATIAL in spec.latent for spec in ladder):
        keep = ds.has_location()
        if not keep.all():
            logger.info("dropping %d participants without location", int((~keep).sum()))
            return ds.subset(keep)
    return ds


@dataclass
class ComparisonRow:
    label: str
    spec: str
    dic: float
    p_eff: float
    delta_dic: float
    supported: bool
    status: str
    n_observations: int
    error: str = ""


@dataclass
class ComparisonTable:
    rows: list[ComparisonRow]
    n_observations: int

    def to_text(self) -> str:
        header = ("Model", "DIC", "p_eff", "dDIC", "Supported")
        body = []
        for r in self.rows:
            if r.status != "ok":
                body.append((r.label, "failed", "", "", r.error))
                continue
            body.append(
                (r.label, f"{r.dic:.2f}", f"{r.p_eff:.2f}",
                 f"{r.delta_dic:+.2f}", "yes" if r.supported else "no")
            )
        widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
        lines = []
        for row in [header] + body:
            cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
            lines.append("  ".join(cells).rstrip())
        lines.append(f"N: {self.n_observations}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "spec", "dic", "p_eff", "delta_dic", "supported", "status", "n_observations"])
        for r in self.rows:
            w.writerow([r.label, r.spec, repr(r.dic), repr(r.p_eff), repr(r.delta_dic),
                        int(r.supported), r.status, r.n_observations])
        return buf.getvalue()


def run_ladder(ds: Dataset, ladder: Sequence[ModelSpec], seed: int = 1, n_draws: int = 1000) -> ComparisonTable:
    """Fit every spec on the same complete cases; flag rows that beat the first row by 10 DIC."""
    ladder = list(ladder)
    if not ladder:
        raise ValidationError("ladder must contain at least one model")
    data = complete_cases(ds, ladder)
    n_obs = len(data)
    results = []
    for i, spec in enumerate(ladder):
        try:
            res = fit(data, spec, seed=row_seed(seed, i), n_draws=n_draws)
            results.append((spec, res.dic, res.p_eff, ""))
        except HydrocarError as exc:
            logger.warning("row %d (%s) failed: %s", i, spec.label, exc)
            results.append((spec, math.nan, math.nan, str(exc)))
    baseline = results[0][1]
    rows = []
    for i, (spec, dic, p_eff, err) in enumerate(results):
        ok = not err
        delta = dic - baseline if ok else math.nan
        supported = ok and i > 0 and not math.isnan(baseline) and significance(baseline, dic) == "supported"
        rows.append(
            ComparisonRow(spec.label, spec.tokens, dic, p_eff, delta, supported,
                          "ok" if ok else "failed", n_obs, err)
        )
    return ComparisonTable(rows, n_obs)
