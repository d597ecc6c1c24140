"""Command-line entry point: `python -m elc <command> ...`.

Exit codes: 0 success, 1 a stage could not produce a result, 2 bad input or usage.
Result records go to stdout or --out; logs go to stderr.
"""

from dotenv import load_dotenv
load_dotenv()

import argparse
import csv
import json
import logging
import os
import sys
from typing import List, Optional

from pydantic import ValidationError

from elc.config import PipelineConfig, load_config, seed_from_env
from elc.errors import AnalysisError, InputError, StageFailure
from elc.evaluation import write_report
from elc.frames_extract import extract_frames
from elc.linecall import CourtLine, CourtLineSpec, load_court, parse_line_arg, save_court
from elc.pipeline import (
    analyze_source,
    detect_frames,
    evaluate_manifest,
    load_source,
    run_pipeline,
    write_overlay,
)
from elc.synth import (
    COURT_BLUE,
    SynthParams,
    generate_dataset,
    generate_trajectory,
    label_truth,
    observed_log,
    render_frames,
    write_json,
)

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = "ELC_LOG_LEVEL"
EXIT_OK = 0
EXIT_FAILED = 1
EXIT_BAD_INPUT = 2


def configure_logging() -> None:
    level = os.environ.get(LOG_LEVEL_ENV, "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _emit(data, out_path: Optional[str] = None) -> None:
    text = json.dumps(data, indent=2, sort_keys=True) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as f:
            f.write(text)
        logger.info(f"Wrote {out_path}")
    else:
        sys.stdout.write(text)


def _config(args) -> PipelineConfig:
    return load_config(args.config, args.overrides)


def _court(args, cfg: PipelineConfig) -> Optional[CourtLineSpec]:
    if getattr(args, "court", None):
        return load_court(args.court)
    if cfg.court:
        return load_court(cfg.court)
    return None


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_detect(args, parser) -> int:
    cfg = _config(args)
    log = detect_frames(args.frames, cfg)
    _emit(log.to_records(), args.out)
    return EXIT_OK


def cmd_analyze(args, parser) -> int:
    cfg = _config(args)
    court = _court(args, cfg)
    if court is None:
        parser.error("analyze needs --court (or `court` in the config file)")
    result = analyze_source(load_source(args.detections), cfg, court)
    if args.overlay:
        write_overlay(result, args.overlay, args.frames, cfg)
    _emit(result.to_record(include_timings=args.timings), args.out)
    return EXIT_OK


def cmd_run(args, parser) -> int:
    cfg = _config(args)
    court = _court(args, cfg)
    if court is None:
        parser.error("run needs --court (or `court` in the config file)")
    result = run_pipeline(args.frames, cfg, court, sample_id=args.id, overlay_path=args.overlay)
    _emit(result.to_record(include_timings=args.timings), args.out)
    return EXIT_OK


def cmd_synth(args, parser) -> int:
    seed = seed_from_env(args.seed)
    if args.count:
        manifest = generate_dataset(
            args.out, args.count, base_seed=seed, confusing_fraction=args.confusing_fraction,
            width=args.width, height=args.height, noise_sigma=args.noise, dropout_p=args.dropout,
            render=not args.no_render, lead_in=args.lead_in,
        )
        _emit({"manifest": manifest, "count": args.count})
        return EXIT_OK

    data = {}
    if args.params:
        with open(args.params, "r", encoding="utf-8") as f:
            data = json.load(f)
    data["seed"] = seed
    params = SynthParams.model_validate(data)
    court = load_court(args.court) if args.court else None

    os.makedirs(args.out, exist_ok=True)
    write_json(os.path.join(args.out, "params.json"), params.model_dump(mode="json"))
    if args.no_render:
        _, observed, truth = generate_trajectory(params)
        if court is not None:
            truth = label_truth(truth, court)
        write_json(os.path.join(args.out, "detections.json"), observed_log(params, observed).to_records())
        write_json(os.path.join(args.out, "ground_truth.json"), truth.model_dump(mode="json"))
    else:
        _, truth = render_frames(params, COURT_BLUE, os.path.join(args.out, "frames"), args.lead_in, court)
    _emit(truth.model_dump(mode="json"))
    return EXIT_OK


def cmd_eval(args, parser) -> int:
    cfg = _config(args)
    report = evaluate_manifest(args.manifest, cfg, workers=args.workers)
    write_report(report, args.out, args.csv)
    sys.stdout.write(report.table() + "\n")
    return EXIT_OK


def _lines_from_csv(path: str) -> List[CourtLine]:
    lines = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for row in csv.reader(f):
            row = [cell.strip() for cell in row]
            if not row or not row[0] or row[0].lower() == "name":
                continue
            fields = {"name": row[0], "p0": (float(row[1]), float(row[2])), "p1": (float(row[3]), float(row[4]))}
            if len(row) > 5 and row[5]:
                fields["thickness"] = float(row[5])
            if len(row) > 6 and row[6]:
                fields["in_side"] = int(row[6])
            lines.append(CourtLine(**fields))
    return lines


def cmd_init_court(args, parser) -> int:
    lines = [parse_line_arg(text) for text in args.line or []]
    if args.from_csv:
        lines.extend(_lines_from_csv(args.from_csv))
    if not lines:
        parser.error("init-court needs at least one --line or --from-csv")
    court = CourtLineSpec(lines=lines, delta=args.delta)
    if args.out:
        save_court(court, args.out)
        logger.info(f"Court spec with {len(lines)} line(s) written to {args.out}")
    else:
        _emit(court.model_dump(mode="json"))
    return EXIT_OK


def cmd_extract_frames(args, parser) -> int:
    count = extract_frames(args.video, args.out, fps=args.fps)
    _emit({"frames": count, "out": args.out})
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="Pipeline config JSON")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="Override a config value, e.g. --set bounce.K_max=8 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elc", description="Monocular tennis line calling")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="Frames directory -> detections file")
    p.add_argument("--frames", required=True, help="Directory of numbered frames")
    p.add_argument("--out", help="Detections JSON (default: stdout)")
    _add_config_args(p)
    p.set_defaults(handler=cmd_detect)

    p = sub.add_parser("analyze", help="Detections or trajectory file + court -> bounce and verdict")
    p.add_argument("--detections", required=True, help="Detections or trajectory JSON")
    p.add_argument("--court", help="Court spec JSON")
    p.add_argument("--out", help="Result JSON (default: stdout)")
    p.add_argument("--overlay", help="Write an annotated PNG here")
    p.add_argument("--frames", help="Frames directory for the overlay background")
    p.add_argument("--timings", action="store_true", help="Include per-stage wall times")
    _add_config_args(p)
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("run", help="Frames directory + court -> verdict")
    p.add_argument("--frames", required=True, help="Directory of numbered frames")
    p.add_argument("--court", help="Court spec JSON")
    p.add_argument("--id", help="Sample id recorded in the result")
    p.add_argument("--out", help="Result JSON (default: stdout)")
    p.add_argument("--overlay", help="Write an annotated PNG here")
    p.add_argument("--timings", action="store_true", help="Include per-stage wall times")
    _add_config_args(p)
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("synth", help="Synthetic rally (or a whole dataset with --count)")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--params", help="SynthParams JSON for a single rally")
    p.add_argument("--court", help="Court spec to paint and label the truth against")
    p.add_argument("--seed", type=int, default=0, help="Base seed (overridden by $ELC_SEED)")
    p.add_argument("--lead-in", type=int, default=30, help="Empty-court frames before the rally")
    p.add_argument("--no-render", action="store_true", help="Write detections instead of frames")
    p.add_argument("--count", type=int, default=0, help="Generate a dataset of this many rallies")
    p.add_argument("--confusing-fraction", type=float, default=0.05)
    p.add_argument("--width", type=int, default=320)
    p.add_argument("--height", type=int, default=240)
    p.add_argument("--noise", type=float, default=1.0, help="Centroid noise sigma, px")
    p.add_argument("--dropout", type=float, default=0.05, help="Per-frame miss probability")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("eval", help="Manifest -> accuracy report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="Report JSON")
    p.add_argument("--csv", help="Per-sample CSV")
    p.add_argument("--workers", type=int, default=1)
    _add_config_args(p)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("init-court", help="Write a court spec from line endpoints")
    p.add_argument("--line", action="append", metavar="NAME:X0,Y0:X1,Y1[:THICKNESS[:IN_SIDE]]")
    p.add_argument("--from-csv", help="CSV rows name,x0,y0,x1,y1[,thickness[,in_side]]")
    p.add_argument("--delta", type=float, default=0.0, help="Tolerance band, px")
    p.add_argument("--out", help="Court JSON (default: stdout)")
    p.set_defaults(handler=cmd_init_court)

    p = sub.add_parser("extract-frames", help="Video -> numbered PNG frames (needs ffmpeg)")
    p.add_argument("--video", required=True)
    p.add_argument("--out", required=True, help="Frames directory")
    p.add_argument("--fps", type=float, help="Resample to this rate")
    p.set_defaults(handler=cmd_extract_frames)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args, parser)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_BAD_INPUT
    except StageFailure as exc:
        logger.error(f"{exc.stage} stage failed: {exc.reason}")
        return EXIT_FAILED
    except AnalysisError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return EXIT_FAILED
    except (InputError, ValidationError, OSError, ValueError) as exc:
        logger.error(f"Bad input: {type(exc).__name__}: {exc}")
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
