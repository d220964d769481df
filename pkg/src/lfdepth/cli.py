"""``lfdepth`` command line: estimate, synth, eval, heatmap.

Exit codes: 0 success, 1 bad input, 2 solver or internal failure.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

from .core import LightFieldError
from .diffusion import ConvergenceError, SingularSystemError
from .io import depth_name, load_lightfield, read_depth_dir, read_pfm, save_lightfield, write_pfm
from .metrics import BAD_THRESHOLDS, report_dict, write_report
from .pipeline import PipelineConfig, ViewsMode, run
from .synth import SceneSpec, synth_lightfield
from .viz import render_heatmap

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INTERNAL = 2


class InputError(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lfdepth", description="Light-field disparity estimation tools.")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="estimate disparity maps from a light field")
    e.add_argument("--input", required=True, help="manifest.json of the light field")
    e.add_argument("--output", required=True, help="output directory")
    e.add_argument("--views", choices=[m.value for m in ViewsMode], default=None)
    e.add_argument("--config", help="JSON file with PipelineConfig fields")
    e.add_argument("--threads", type=int, default=None)

    s = sub.add_parser("synth", help="render a synthetic layered light field")
    s.add_argument("--scene", required=True, help="scene spec JSON")
    s.add_argument("--out", required=True)
    s.add_argument("--views", type=int, nargs=2, metavar=("U", "V"), default=(9, 9))
    s.add_argument("--size", type=int, nargs=2, metavar=("H", "W"), default=(64, 64))

    v = sub.add_parser("eval", help="score estimated maps against ground truth")
    v.add_argument("--est", required=True)
    v.add_argument("--gt", required=True)
    v.add_argument("--target-view", type=int, nargs=2, metavar=("U", "V"), default=None)
    v.add_argument("--report", required=True)

    h = sub.add_parser("heatmap", help="render a PFM as a colour PNG")
    h.add_argument("--input", required=True)
    h.add_argument("--out", required=True)
    h.add_argument("--range", type=float, nargs=2, metavar=("LO", "HI"), default=None)
    h.add_argument("--mode", choices=("value", "error"), default="value")
    h.add_argument("--ref", help="reference PFM for --mode error")
    return p


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    base: dict = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(base, dict):
            raise InputError(f"config {args.config} is not a JSON object")
    # flags override the file
    if args.views is not None:
        base["views_mode"] = args.views
    if args.threads is not None:
        base["threads"] = args.threads
    try:
        return PipelineConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid config: {exc}") from exc


def cmd_estimate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    lf = load_lightfield(args.input, threads=cfg.threads)
    out = Path(args.output)
    existed = out.exists()
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    try:
        result = run(lf, cfg)
        for view, dm in sorted(result.maps.items()):
            path = out / depth_name(view)
            write_pfm(path, dm)
            written.append(path)
        meta = {
            "input": str(args.input),
            "config": cfg.to_dict(),
            "views": [list(v) for v in sorted(result.maps)],
            "timings": result.timings,
            "label_counts": result.label_counts,
        }
        path = out / "run.json"
        path.write_text(json.dumps(meta, indent=2), encoding="utf-8")
        written.append(path)
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        if not existed:
            shutil.rmtree(out, ignore_errors=True)
        raise
    print(f"wrote {len(result.maps)} maps to {out}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SceneSpec.load(args.scene)
    U, V = args.views
    H, W = args.size
    lf, gt = synth_lightfield(spec, U, V, H, W)
    out = Path(args.out)
    save_lightfield(lf, out)
    for view, dm in sorted(gt.items()):
        write_pfm(out / depth_name(view, "gt"), dm)
    print(f"wrote {U * V} views and ground truth to {out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    est = read_depth_dir(args.est)
    gt = read_depth_dir(args.gt)
    if not est:
        raise InputError(f"no depth maps found in {args.est}")
    missing = sorted(set(est) - set(gt))
    if missing:
        raise InputError("ground truth missing for views: " + ", ".join(f"{u},{v}" for u, v in missing))
    target = tuple(args.target_view) if args.target_view else None
    if target is not None and target not in est:
        raise InputError(f"target view {target} is not among the estimates")
    report = report_dict(est, gt, target)
    write_report(args.report, report)
    keys = ["mse_x100"] + [f"bad_{round(t * 100):03d}" for t in BAD_THRESHOLDS]
    print("view    " + " ".join(f"{k:>10}" for k in keys))
    for name, acc in report["accuracy"].items():
        print(f"{name:8}" + " ".join(f"{acc[k]:10.4f}" for k in keys))
    g = report["global"]
    print("mean    " + " ".join(f"{g[k]:10.4f}" for k in keys))
    if report["consistency"] is not None:
        c = report["consistency"]
        print(f"consistency (target {c['target'][0]},{c['target'][1]}): {c['consistency_mean']:.6g}")
    return EXIT_OK


def cmd_heatmap(args: argparse.Namespace) -> int:
    dm = read_pfm(args.input)
    ref = None
    if args.mode == "error":
        if not args.ref:
            raise InputError("--mode error needs --ref")
        ref = read_pfm(args.ref)
    if args.range is not None and not args.range[0] < args.range[1]:
        raise InputError(f"--range needs LO < HI, got {args.range[0]} {args.range[1]}")
    try:
        render_heatmap(args.out, dm, tuple(args.range) if args.range else None, ref)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    return EXIT_OK


COMMANDS = {
    "estimate": cmd_estimate,
    "synth": cmd_synth,
    "eval": cmd_eval,
    "heatmap": cmd_heatmap,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConvergenceError, SingularSystemError) as exc:
        print(f"lfdepth: solver failure: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (InputError, LightFieldError, OSError, ValueError) as exc:
        print(f"lfdepth: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        print(f"lfdepth: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
