"""Command-line interface: simulate, oracle, run, report."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, closed_form
from .config import parse_config
from .errors import SheetZeroError
from .field_sim import GridSpec, export_field, simulate_sheet
from .runner import EXIT_CODES, run, verify_manifest


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def cmd_simulate(args) -> int:
    spec = GridSpec(args.N, args.level, (args.upper,) * args.N)
    field = simulate_sheet(spec, args.d, args.seed, workers=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = export_field(field, out / f"sheet_N{args.N}_d{args.d}_n{args.level}_s{args.seed}.bin")
    print(json.dumps({"sha256": manifest["sha256"], "shape": manifest["shape"]}))
    return 0


def cmd_oracle(args) -> int:
    name = args.oracle
    if name == "covariance":
        value = closed_form.covariance(_floats(args.s), _floats(args.t))
    elif name == "ehm":
        value = closed_form.ehm_dimension(args.N, args.d)
    elif name == "davis":
        value = closed_form.davis(args.a, args.r, args.R)
    elif name == "gamma":
        value = closed_form.gamma_simplex(_floats(args.b))
    else:
        value = closed_form.ou_covariance(args.s1, args.s2, args.t)
    print(repr(value))
    return 0


def cmd_run(args) -> int:
    overrides = {}
    if args.seeds is not None:
        overrides["seeds"] = tuple(_ints(args.seeds))
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    cfg = parse_config(Path(args.config).read_text(), overrides)
    manifest, code = run(cfg, args.out, args.threads, args.dry_run)
    print(f"{cfg.experiment}: {manifest['verdict']}")
    for f in manifest.get("findings", [])[:20]:
        print(f"  finding: {f}")
    return code


def cmd_report(args) -> int:
    manifest, bad = verify_manifest(args.dir)
    cfg = manifest["config"]
    print(f"experiment {cfg.get('experiment')}  verdict {manifest['verdict']}  version {manifest['version']}")
    print(f"started {manifest['started']}  finished {manifest.get('finished')}")
    for key, val in manifest.get("summary", {}).items():
        print(f"  {key}: {json.dumps(val)}")
    for art in manifest["artifacts"]:
        status = "MISMATCH" if art["path"] in bad else "ok"
        print(f"  {art['path']}  {art['sha256'][:16]}  {status}")
    if bad:
        return EXIT_CODES["fail"]
    return EXIT_CODES[manifest["verdict"]]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sheetzero", description="Brownian-sheet zero-set experiments")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="simulate one sheet and dump it")
    sp.add_argument("--N", type=int, default=2)
    sp.add_argument("--d", type=int, default=1)
    sp.add_argument("--level", type=int, default=8)
    sp.add_argument("--upper", type=float, default=2.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="runs/simulate")
    sp.add_argument("--threads", type=int, default=1)
    sp.set_defaults(func=cmd_simulate)

    op = sub.add_parser("oracle", help="evaluate a closed-form oracle")
    osub = op.add_subparsers(dest="oracle", required=True)
    o = osub.add_parser("covariance")
    o.add_argument("--s", required=True, help="comma-separated parameter point")
    o.add_argument("--t", required=True)
    o = osub.add_parser("ehm")
    o.add_argument("--N", type=int, required=True)
    o.add_argument("--d", type=int, required=True)
    o = osub.add_parser("davis")
    o.add_argument("--a", type=float, required=True, help="|a|")
    o.add_argument("--r", type=float, required=True)
    o.add_argument("--R", type=float, required=True)
    o = osub.add_parser("gamma")
    o.add_argument("--b", required=True, help="comma-separated exponents")
    o = osub.add_parser("ou-covariance")
    o.add_argument("--s1", type=float, required=True)
    o.add_argument("--s2", type=float, required=True)
    o.add_argument("--t", type=float, required=True)
    op.set_defaults(func=cmd_oracle)

    rp = sub.add_parser("run", help="run the experiment described by a config file")
    rp.add_argument("config")
    rp.add_argument("--seed", type=int, help="master seed (replaces the configured one)")
    rp.add_argument("--seeds", help="explicit comma-separated seed list")
    rp.add_argument("--out", help="output directory")
    rp.add_argument("--threads", type=int, default=None)
    rp.add_argument("--dry-run", action="store_true", help="validate and write the manifest only")
    rp.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="summarize a run directory and check digests")
    rep.add_argument("dir")
    rep.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SheetZeroError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
