"""Command-line entry point: ``fairkit {run,compare,ita,augment,probe,audit}``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import FairkitError

log = logging.getLogger("fairkit")


def _add_config_args(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="seed (else config seed, else $FAIRKIT_SEED, else 0)")


def _config(args):
    from .experiments import load_config

    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(args.config, overrides)


def cmd_run(args):
    from .experiments import Experiment, write_run

    cfg = _config(args)
    root = write_run(Experiment(cfg), args.out)
    print((root / "report.txt").read_text(), end="")
    print(f"artifacts written to {root}")
    return 0


def cmd_compare(args):
    from .experiments import compare, read_report_csv

    base = read_report_csv(args.baseline)
    cands = [read_report_csv(p) for p in args.candidates] or [base]
    text, _ = compare(base, cands, baseline_column=args.baseline_column)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_ita(args):
    from . import ita

    regions = None
    if args.regions:
        regions = json.loads(Path(args.regions).read_text())
    rows, values = [], []
    for path in args.images:
        image = ita.read_image(path)
        r = regions.get(Path(path).name, regions.get("*")) if isinstance(regions, dict) else regions
        res = ita.image_ita(image, args.method, regions=r, cutoff=args.cutoff)
        rows.append((Path(path).stem, res))
        values.append(res.ita_degrees)
    text = ita.results_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    if args.density:
        Path(args.density).write_text(ita.histogram_csv(values))
    return 0


def cmd_augment(args):
    from .data import emit_csv
    from .experiments import Experiment

    cfg = dataclasses.replace(_config(args), dataset="synth_images", methods=("baseline",))
    exp = Experiment(cfg)
    res = exp.synthetic()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_csv(res.dataset, out / "synthetic.csv")
    from .augment import trajectory_csv

    for kind, traj in res.trajectories.items():
        (out / f"ascent_{kind}.csv").write_text(trajectory_csv(traj))
    (out / "augment_manifest.txt").write_text("\n".join(exp.manifest_notes) + "\n")
    print("\n".join(exp.manifest_notes))
    print(f"wrote {res.accepted} synthetic rows to {out / 'synthetic.csv'}")
    return 0


def cmd_probe(args):
    from .adversarial import TrainedPair, adversary_probe
    from .experiments import Experiment, load_config, _safe
    from .nn import checkpoint

    run = Path(args.run)
    cfg = load_config(run / "config.txt")
    exp = Experiment(cfg)
    name = _safe(args.method)
    side = json.loads((run / "checkpoints" / f"{name}.json").read_text())
    F = checkpoint.load(run / "checkpoints" / f"{name}.predictor.fknt")
    A = checkpoint.load(run / "checkpoints" / f"{name}.adversary.fknt")
    pair = TrainedPair(F, A, side["tap_index"], None)
    test = exp.partition.test
    res = adversary_probe(pair, test.X, test.s, seed=exp.config.seed)
    print(f"probe accuracy on S: {100 * res.accuracy:.2f}  majority baseline: "
          f"{100 * res.majority_baseline:.2f}  (fit {res.n_fit} / eval {res.n_eval} rows)")
    return 0


def cmd_audit(args):
    from .experiments import audit

    problems = audit(args.run)
    for p in problems:
        print(p)
    print("audit ok" if not problems else f"{len(problems)} mismatches")
    return 0 if not problems else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="fairkit", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train the configured methods and write a report")
    _add_config_args(p)
    p.add_argument("--out", default="out", help="output root (default: out)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="conjunctive improvement table from report CSVs")
    p.add_argument("baseline", help="report CSV holding the baseline column")
    p.add_argument("candidates", nargs="*", help="report CSVs with candidate columns")
    p.add_argument("--baseline-column", help="column to use as reference (default: baseline)")
    p.add_argument("--out", help="also write the table here")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("ita", help="per-image ITA for PNG/PPM files")
    p.add_argument("images", nargs="+")
    p.add_argument("--method", default="fundus_mask",
                   choices=("fundus_mask", "face_regions", "whole_image"))
    p.add_argument("--regions", help="JSON polygons: list, or {image name or '*': list}")
    p.add_argument("--cutoff", type=float, help="dark-skin cutoff (default per method)")
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.add_argument("--density", help="write an ITA density CSV here")
    p.set_defaults(func=cmd_ita)

    p = sub.add_parser("augment", help="synthesize rows for the excluded toy-image cell")
    _add_config_args(p)
    p.add_argument("--out", default="out/augment")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("probe", help="fresh-probe leakage of S from a saved predictor")
    p.add_argument("run", help="run directory written by 'fairkit run'")
    p.add_argument("--method", default="AD")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("audit", help="recompute a run's report from its dumps")
    p.add_argument("run")
    p.set_defaults(func=cmd_audit)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FairkitError as exc:
        where = getattr(args, "config", None) or getattr(args, "run", None) or "-"
        print(f"fairkit {args.command}: {type(exc).__name__} in {_origin(exc)} "
              f"(config {where}): {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"fairkit {args.command}: {exc}", file=sys.stderr)
        return 2


def _origin(exc):
    tb = exc.__traceback__
    name = "fairkit"
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("fairkit") and mod != "fairkit.cli":
            name = mod
        tb = tb.tb_next
    return name


if __name__ == "__main__":
    sys.exit(main())
