"""Command-line interface: ``windemos generate|fit|verify|experiment|report``."""

import argparse
import json
import sys
from dataclasses import replace
from datetime import date
from pathlib import Path

from . import data, pipeline, report
from .exceptions import WindEmosError

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def parse_combos(text):
    """``"100,0;0,50"`` -> ``[(100, 0), (0, 50)]``."""
    combos = []
    for part in filter(None, (p.strip() for p in text.split(";"))):
        try:
            m_low, m_high = (int(v) for v in part.split(","))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad member combination {part!r}; expected M_L,M_H") from None
        combos.append((m_low, m_high))
    return combos


def parse_pair(text):
    combos = parse_combos(text)
    if len(combos) != 1:
        raise argparse.ArgumentTypeError(f"expected one M_L,M_H pair, got {text!r}")
    return combos[0]


def parse_strategies(text):
    return [s.strip() for s in text.split(",") if s.strip()]


def parse_leads(text):
    """``"1-5"`` or ``"1,3,7"``."""
    leads = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-")
            leads.extend(range(int(lo), int(hi) + 1))
        elif part.strip():
            leads.append(int(part))
    return tuple(leads)


def _add_experiment_args(p, need_combos=True):
    p.add_argument("--data", required=True, help="dataset directory (CSV files or a synthetic manifest)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--combos", type=parse_combos, default=[(100, 0), (0, 50), (100, 50)],
                   help='member combinations, e.g. "100,0;0,50;100,50"')
    p.add_argument("--strategy", type=parse_strategies, default=["local"],
                   help="comma-separated subset of regional,local,semi_local")
    p.add_argument("--window-days", type=int, default=60)
    p.add_argument("--clusters", type=int, default=None, help="cluster count for semi_local")
    p.add_argument("--reference", type=parse_pair, default=None, help='reference combination, e.g. "0,50"')
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--bootstrap-replicates", type=int, default=2000)
    p.add_argument("--leads", type=parse_leads, default=None, help='lead times, e.g. "1-5" (default: all)')
    p.add_argument("--start", type=date.fromisoformat, default=None, help="first verification date")
    p.add_argument("--end", type=date.fromisoformat, default=None, help="last verification date")


def build_parser():
    parser = argparse.ArgumentParser(prog="windemos", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dual-resolution dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=None, help="master seed (default: config default)")
    g.add_argument("--stations", type=int, default=None)
    g.add_argument("--dates", type=int, default=None)
    g.add_argument("--config", default=None, help="JSON file with generator settings")
    g.add_argument("--manifest-only", action="store_true",
                   help="write only manifest.json; consumers regenerate the data from it")

    f = sub.add_parser("fit", help="rolling EMOS fits; writes coefficients.json")
    _add_experiment_args(f)

    v = sub.add_parser("verify", help="score raw and fitted forecasts; writes scores.csv and summary.csv")
    _add_experiment_args(v)
    v.add_argument("--fits", default=None, help="directory with coefficients.json (default: --out)")
    v.add_argument("--no-scores", action="store_true", help="skip writing scores.csv")

    e = sub.add_parser("experiment", help="fit, verify and report in one run")
    _add_experiment_args(e)
    e.add_argument("--no-scores", action="store_true", help="skip writing scores.csv")

    r = sub.add_parser("report", help="SVG plots from summary.csv")
    r.add_argument("--summary", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--metric", action="append", default=None, help="metric to plot (repeatable; default all)")
    return parser


def _spec(args):
    return pipeline.ExperimentSpec(
        combinations=args.combos,
        strategies=args.strategy,
        window_days=args.window_days,
        cluster_count=args.clusters,
        reference=args.reference,
        start=args.start,
        end=args.end,
        leads=args.leads,
        seed=args.seed,
        bootstrap_replicates=args.bootstrap_replicates,
        threads=args.threads,
    )


def cmd_generate(args):
    settings = {}
    if args.config:
        settings = json.loads(Path(args.config).read_text())
    config = data.SyntheticConfig.from_dict(settings)
    overrides = {"seed": args.seed, "station_count": args.stations, "date_count": args.dates}
    config = replace(config, **{k: v for k, v in overrides.items() if v is not None})
    if args.manifest_only:
        data.save_manifest(config, args.out)
    else:
        data.save(data.generate(config), args.out)
    print(f"wrote dataset to {args.out}")
    return EXIT_OK


def cmd_fit(args):
    spec = _spec(args)
    dataset = data.open_dataset(args.data)
    spec.check_dataset(dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fits = pipeline.fit_models(dataset, spec)
    pipeline.write_fits(fits, out)
    rep = pipeline.run_report(spec, dataset, fits, {}, sum(f.seconds for f in fits))
    (out / "run_report.json").write_text(json.dumps(rep, indent=1) + "\n")
    print(f"wrote {len(fits)} model fits to {out / 'coefficients.json'}")
    return EXIT_FAILURE if rep["status"] == "failed" else EXIT_OK


def cmd_verify(args):
    spec = _spec(args)
    dataset = data.open_dataset(args.data)
    spec.check_dataset(dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fits = pipeline.read_fits(dataset, spec, args.fits or out)
    res = pipeline.verify(dataset, spec, fits, out, write_scores=not args.no_scores)
    (out / "verify_report.json").write_text(json.dumps(res.report, indent=1) + "\n")
    report.write_report(res.summary, out)
    print(f"wrote summary for {res.summary['model_id'].nunique()} models to {out / 'summary.csv'}")
    return EXIT_OK if len(res.summary) else EXIT_FAILURE


def cmd_experiment(args):
    spec = _spec(args)
    dataset = data.open_dataset(args.data)
    res = pipeline.run_experiment(spec, dataset, args.out, write_scores=not args.no_scores)
    print(f"experiment finished in {res.report['seconds']:.1f} s; outputs in {args.out}")
    return EXIT_FAILURE if res.report["status"] == "failed" else EXIT_OK


def cmd_report(args):
    paths = report.write_report(report.read_summary(args.summary), args.out, args.metric)
    print(f"wrote {len(paths)} SVG files to {args.out}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "verify": cmd_verify,
    "experiment": cmd_experiment,
    "report": cmd_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (WindEmosError, ValueError) as exc:
        print(f"windemos: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"windemos: I/O error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
