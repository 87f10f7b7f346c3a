"""Command line entry point: ``seammosaic {mosaic,synth,report}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import bundle
from .harness import SceneSpec, generate, seam_energy
from .histmatch import SkipRule
from .mosaic import MosaicConfig, MosaicJob, run
from .poisson import METHODS, SolverConfig

logger = logging.getLogger("seammosaic")

PROVENANCE_LEVELS = (0, 65535)


def _image_id(path: str) -> str:
    return bundle.sidecar_path(path).with_suffix("").name


def cmd_mosaic(args) -> int:
    levels = tuple(args.levels)
    config = MosaicConfig(
        d=None if args.d_max else args.d,
        levels=levels,
        skip=SkipRule(args.skip_min_overlap, args.skip_min_levels),
        solver=SolverConfig(args.tol, args.max_iters, args.solver),
        histmatch=not args.no_histmatch,
        poisson=not args.no_poisson,
    )
    reference = (_image_id(args.reference), bundle.load(args.reference, levels))
    candidates = [(_image_id(p), bundle.load(p, levels)) for p in args.inputs]
    result = run(MosaicJob(reference, candidates, config))

    out = bundle.save(result.raster, args.out, levels)
    prov_path = args.provenance or out.with_name(out.stem + ".provenance.json")
    bundle.save(result.provenance, prov_path, PROVENANCE_LEVELS)
    log_path = Path(args.log)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps({"labels": result.labels, "order": result.order}, sort_keys=True)
    log_path.write_text("\n".join([header, *result.log_lines(args.log_timings)]) + "\n")

    problems = [(r.image, r.error) for r in result.records if r.status == "failed"]
    problems += [(name, "never intersects the mosaic") for name in result.unreachable]
    for name, why in problems:
        print(f"{name}: {why}", file=sys.stderr)
    return 1 if problems else 0


def cmd_synth(args) -> int:
    spec = SceneSpec.load(args.spec)
    tiles = generate(spec, args.seed)
    out_dir = Path(args.out_dir)
    for name, tile in zip(spec.names(), tiles):
        path = bundle.save(tile, out_dir / f"{name}.json", spec.levels)
        print(path)
    return 0


FIELDS = ("label", "band", "pairs", "max", "mean", "rms")


def cmd_report(args) -> int:
    if len(args.mosaic) != len(args.provenance):
        raise SystemExit("report: give one --provenance per --mosaic")
    labels = args.label or [_image_id(m) for m in args.mosaic]
    if len(labels) != len(args.mosaic):
        raise SystemExit("report: give one --label per --mosaic")
    rows = []
    for label, m, p in zip(labels, args.mosaic, args.provenance):
        levels = tuple(args.levels)
        rep = seam_energy(bundle.load(m, levels), bundle.load(p, PROVENANCE_LEVELS))
        rows.append((label, "all", rep.overall))
        if args.per_band:
            rows += [(label, str(b), s) for b, s in enumerate(rep.per_band)]
        if args.per_seam:
            rows += [(label, f"seam {a}-{b}", s) for (a, b), s in rep.by_pair.items()]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FIELDS)
        for label, band, s in rows:
            writer.writerow([label, band, s.pairs, f"{s.max:.6g}", f"{s.mean:.6g}", f"{s.rms:.6g}"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seammosaic", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mosaic", help="mosaic co-registered bundles onto a reference")
    m.add_argument("--reference", required=True, help="reference bundle sidecar")
    m.add_argument("--inputs", nargs="+", default=[], help="candidate bundle sidecars")
    m.add_argument("-d", type=int, default=150, help="seam band radius in pixels (default 150)")
    m.add_argument("--d-max", action="store_true", help="solve over the whole target region")
    m.add_argument("--skip-min-overlap", type=int, default=1000,
                   help="skip matching below this many overlap pixels")
    m.add_argument("--skip-min-levels", type=int, default=16,
                   help="skip matching when an overlap band has fewer distinct levels")
    m.add_argument("--tol", type=float, default=1e-8, help="relative residual tolerance")
    m.add_argument("--max-iters", type=int, default=10_000)
    m.add_argument("--solver", choices=METHODS, default="conjugate_gradient")
    m.add_argument("--levels", type=int, nargs=2, default=(0, 255), metavar=("MIN", "MAX"),
                   help="gray range samples are quantised onto")
    m.add_argument("--no-histmatch", action="store_true")
    m.add_argument("--no-poisson", action="store_true")
    m.add_argument("--out", required=True, help="output bundle sidecar")
    m.add_argument("--provenance", help="provenance bundle (default: next to --out)")
    m.add_argument("--log", required=True, help="merge log, one JSON record per line")
    m.add_argument("--log-timings", action="store_true",
                   help="include wall times in the log (makes it run-dependent)")
    m.set_defaults(func=cmd_mosaic)

    s = sub.add_parser("synth", help="generate synthetic tiles from a scene spec")
    s.add_argument("--spec", required=True, help="scene spec (JSON)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("report", help="seam statistics as CSV")
    r.add_argument("--mosaic", nargs="+", required=True)
    r.add_argument("--provenance", nargs="+", required=True)
    r.add_argument("--label", nargs="+")
    r.add_argument("--levels", type=int, nargs=2, default=(0, 255), metavar=("MIN", "MAX"))
    r.add_argument("--per-band", action="store_true")
    r.add_argument("--per-seam", action="store_true")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (bundle.BundleError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
