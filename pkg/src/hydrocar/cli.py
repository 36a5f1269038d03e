"""Command-line interface.

Exit codes: 0 success, 2 bad input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys
from pathlib import Path

from .exceptions import HydrocarError, NumericalError, ValidationError
from .inference import fit
from .model import DEFAULT_CELL_SIZE, ModelSpec, read_participants, write_participants
from .network import parse_network, simplify, write_network
from .precision import build_precision, write_coo, write_index_map
from .selection import default_ladder, run_ladder
from .synth import ContaminationEvent, SimulationConfig, pick_origin, simulate_dataset, simulate_network

SEED_ENV = "HYDROCAR_SEED"

logger = logging.getLogger("hydrocar")


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return 1


def _open_text(path: str):
    try:
        return open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None


def _load_network(args):
    with _open_text(args.nodes) as nf, _open_text(args.segments) as sf:
        net = parse_network(nf, sf, undirected=args.undirected)
    if args.anchor:
        net = net.with_anchors(args.anchor)
    return net


def _load_dataset(args):
    net = _load_network(args)
    with _open_text(args.participants) as pf:
        ds = read_participants(pf, net, args.outcome_name)
    if len(ds) == 0:
        raise ValidationError("no participants with an observed outcome")
    if args.simplify:
        ds = ds.simplified()
    return ds


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot write {path}: {exc.strerror}") from None


def _spec_kwargs(args) -> dict:
    return {"cell_size": args.cell_size, "weighting": args.weighting}


def cmd_build_qmatrix(args) -> int:
    net = _load_network(args)
    if args.simplify:
        net = simplify(net)
    pm = build_precision(net, args.weighting)
    out = Path(args.output)
    buf = io.StringIO()
    write_coo(pm, buf)
    _write(out, buf.getvalue())
    buf = io.StringIO()
    write_index_map(pm, buf)
    _write(out.with_name(out.name + ".index.csv"), buf.getvalue())
    print(f"wrote {pm.dim}x{pm.dim} precision to {out}")
    return 0


def cmd_fit(args) -> int:
    spec = ModelSpec.parse(args.spec, **_spec_kwargs(args))
    ds = _load_dataset(args)
    result = fit(ds, spec, seed=_seed(args), n_draws=args.draws)
    doc = result.to_json()
    if args.output:
        _write(Path(args.output), doc)
    else:
        sys.stdout.write(doc)
    print(f"dic {result.dic:.4f}")
    print(f"p_eff {result.p_eff:.4f}")
    return 0


def _parse_ladder(text: str, **kwargs) -> list[ModelSpec]:
    if text == "default":
        return default_ladder(**kwargs)
    return [ModelSpec.parse(part, **kwargs) for part in text.split(";") if part.strip()]


def cmd_compare(args) -> int:
    ladder = _parse_ladder(args.ladder, **_spec_kwargs(args))
    ds = _load_dataset(args)
    table = run_ladder(ds, ladder, seed=_seed(args), n_draws=args.draws)
    text = table.to_text()
    out = Path(args.output_dir)
    _write(out / "comparison.txt", text)
    _write(out / "comparison.csv", table.to_csv())
    sys.stdout.write(text)
    if not any(row.status == "ok" for row in table.rows):
        return 3
    return 0


def cmd_simulate(args) -> int:
    if args.nodes < 1 or args.participants < 1:
        raise ValidationError("--nodes and --participants must be at least 1")
    seed = _seed(args)
    net = simulate_network(args.nodes, seed=seed)
    events = ()
    if args.effect != 0:
        origin = args.origin or pick_origin(net)
        if origin not in net.node_index:
            raise ValidationError(f"unknown origin node {origin!r}")
        events = (ContaminationEvent(origin, args.effect, args.decay),)
    config = SimulationConfig(
        n_participants=args.participants,
        beta0=args.beta0,
        beta_age=args.beta_age,
        beta_gender=args.beta_gender,
        tau_house=args.tau_house,
        tau_spatial=args.tau_spatial,
        tau_graph=args.tau_graph,
        events=events,
        seed=seed,
    )
    ds, truth = simulate_dataset(net, config)
    out = Path(args.output_dir)
    nodes_buf, seg_buf, part_buf = io.StringIO(), io.StringIO(), io.StringIO()
    write_network(net, nodes_buf, seg_buf)
    write_participants(ds, part_buf)
    _write(out / "nodes.csv", nodes_buf.getvalue())
    _write(out / "segments.csv", seg_buf.getvalue())
    _write(out / "participants.csv", part_buf.getvalue())
    _write(out / "truth.json", json.dumps(truth.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(net)} nodes, {len(net.segments)} segments, {len(ds)} participants to {out}")
    return 0


def _network_args(p):
    p.add_argument("--nodes", required=True, help="nodes.csv (node_id,x,y)")
    p.add_argument("--segments", required=True, help="segments.csv (from_node,to_node,length_m)")
    p.add_argument("--undirected", action="store_true", help="treat every segment as bidirectional")
    p.add_argument("--anchor", action="append", default=[], metavar="NODE",
                   help="node that simplification must keep (repeatable)")
    p.add_argument("--simplify", action="store_true", help="contract pass-through junctions")
    p.add_argument("--weighting", choices=("border", "distance"), default="distance")


def _model_args(p):
    _network_args(p)
    p.add_argument("--participants", required=True, help="participants.csv")
    p.add_argument("--outcome-name", default="outcome")
    p.add_argument("--cell-size", type=float, default=DEFAULT_CELL_SIZE,
                   help="spatial lattice cell size in meters")
    p.add_argument("--draws", type=int, default=1000, help="posterior draws for DIC")
    p.add_argument("--seed", type=int, default=None, help=f"random seed (default ${SEED_ENV} or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hydrocar", description="CAR disease models on water-supply networks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-qmatrix", help="write the precision matrix of a network")
    _network_args(p)
    p.add_argument("--output", required=True, help="coordinate-list output file")
    p.set_defaults(func=cmd_build_qmatrix)

    p = sub.add_parser("fit", help="fit one model and report its DIC")
    _model_args(p)
    p.add_argument("--spec", required=True,
                   help="comma-separated tokens from age,gender,house,spatial,graph")
    p.add_argument("--output", help="FitResult JSON file (default: standard output)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", help="fit a ladder of models and compare DIC")
    _model_args(p)
    p.add_argument("--ladder", default="default",
                   help='"default" or specs separated by ";" e.g. "age,gender;age,gender,graph"')
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("simulate", help="write a synthetic network and participants")
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--participants", type=int, required=True)
    p.add_argument("--effect", type=float, default=2.0,
                   help="log-odds effect of one contamination event (0 disables it)")
    p.add_argument("--origin", default=None, help="contamination origin node")
    p.add_argument("--decay", type=float, default=0.0, help="per-meter decay of the event effect")
    p.add_argument("--tau-graph", type=float, default=0.0, help="precision of the graph CAR effect (0 disables)")
    p.add_argument("--tau-house", type=float, default=0.0)
    p.add_argument("--tau-spatial", type=float, default=0.0)
    p.add_argument("--beta0", type=float, default=-0.5)
    p.add_argument("--beta-age", type=float, default=0.2)
    p.add_argument("--beta-gender", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except HydrocarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
