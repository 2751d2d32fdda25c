"""Command-line interface.

Subcommands:
    convert  -- run the full dataset conversion.
    compose  -- composite + tile a single keyframe for inspection.
    score    -- score a prediction file against ground truth.
    inspect  -- draw a converted record's boxes onto its composite.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import boxer, metrics, pipeline
from .cameras import Camera
from .compositor import CompositeImage, ViewImage, compose, read_image, save_tileset, tile, write_png
from .geometry import DEFAULT_LAYOUT, NormBox, denormalize
from .tags import parse_tags_lenient

log = logging.getLogger("driveforge")


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--workers", type=int, default=1,
                        help="parallel conversion workers (default 1)")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed recorded in the run config (default 0)")
    parser.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])
    parser.add_argument("--resume", action="store_true",
                        help="skip records whose outputs already verify")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driveforge",
        description="Multi-view driving VQA dataset conversion and scoring.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert a QA annotation file")
    p.add_argument("--input", required=True, help="QA annotation JSON")
    p.add_argument("--images", required=True, help="image root directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--backend", choices=["synthetic", "sidecar"],
                   default="synthetic")
    p.add_argument("--sidecar-cmd",
                   help="segmentation sidecar command line "
                        f"(or ${boxer.SIDECAR_ENV_VAR})")
    p.add_argument("--temporal", action="store_true",
                   help="pair each keyframe with its previous keyframe")
    p.add_argument("--style", choices=["tags", "inline-box"], default="tags",
                   help="box serialization style in output texts")
    _add_common(p)

    p = sub.add_parser("compose", help="composite and tile one keyframe")
    p.add_argument("--input", required=True, help="QA annotation JSON")
    p.add_argument("--images", required=True, help="image root directory")
    p.add_argument("--frame", required=True, help="frame id to render")
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)

    p = sub.add_parser("score", help="score predictions against ground truth")
    p.add_argument("--pred", required=True, help="predictions JSONL")
    p.add_argument("--gt", required=True,
                   help="ground truth JSONL (records.jsonl or id/question/answer)")
    p.add_argument("--judge", choices=["none", "stub", "http"], default="stub")
    p.add_argument("--judge-url", help="judge endpoint for --judge http")
    p.add_argument("--judge-timeout", type=float, default=30.0)
    p.add_argument("--judge-retries", type=int, default=2)
    p.add_argument("--weights", default="0.25,0.25,0.25,0.25",
                   help="accuracy,chatgpt,match,language weights (sum to 1)")
    p.add_argument("--match-threshold", type=float,
                   default=metrics.DEFAULT_MATCH_THRESHOLD)
    p.add_argument("--out", help="write the JSON report here")
    _add_common(p)

    p = sub.add_parser("inspect", help="draw a record's boxes on its composite")
    p.add_argument("--run", required=True, help="a convert output directory")
    p.add_argument("--record", required=True, help="sample id to render")
    p.add_argument("--out", help="output PNG (default <run>/<record>_inspect.png)")
    _add_common(p)
    return parser


def cmd_convert(args) -> int:
    config = pipeline.RunConfig(
        qa_json=Path(args.input), image_root=Path(args.images),
        out_dir=Path(args.out), backend=args.backend,
        sidecar_cmd=args.sidecar_cmd, workers=args.workers, seed=args.seed,
        temporal=args.temporal, resume=args.resume, style=args.style)
    manifest = pipeline.run(config)
    counts = manifest.counts
    print(f"converted {counts['ok']}/{counts['total']} records "
          f"({counts['error']} errors) -> {args.out}")
    if counts["error"]:
        for rec in manifest.records:
            if rec["status"] == "error":
                print(f"  {rec['sample_id']}: [{rec['stage']}] {rec['message']}",
                      file=sys.stderr)
    return 0


def cmd_compose(args) -> int:
    for item in pipeline.ingest(args.input, args.images):
        if isinstance(item, pipeline.RecordError):
            continue
        if item.frame_id != args.frame:
            continue
        views = [ViewImage(cam, read_image(path))
                 for cam, path in item.image_paths.items()]
        composite = compose(views)
        tiles = tile(composite)
        paths = save_tileset(tiles, composite, args.out,
                             f"{item.scene_id}__{item.frame_id}")
        print(f"wrote {len(paths)} images to {args.out}")
        return 0
    print(f"frame {args.frame!r} not found in {args.input}", file=sys.stderr)
    return 1


def _parse_weights(spec: str) -> metrics.ScoreWeights:
    parts = [float(x) for x in spec.split(",")]
    if len(parts) != 4:
        raise metrics.WeightError(f"need 4 comma-separated weights, got {len(parts)}")
    return metrics.ScoreWeights(*parts)


def cmd_score(args) -> int:
    weights = _parse_weights(args.weights)
    if args.judge == "stub":
        judge = metrics.StubJudge()
    elif args.judge == "http":
        if not args.judge_url:
            print("--judge http requires --judge-url", file=sys.stderr)
            return 2
        judge = metrics.HttpJudge(args.judge_url, timeout=args.judge_timeout,
                                  retries=args.judge_retries)
    else:
        judge = None
    preds = metrics.load_predictions(args.pred)
    gt_rows = metrics.load_ground_truth(args.gt)
    report = metrics.score_corpus(preds, gt_rows, judge=judge, weights=weights,
                                  match_threshold=args.match_threshold)
    print(report.render_table())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(report.to_json_dict(), f, indent=2, ensure_ascii=False)
            f.write("\n")
        print(f"report written to {args.out}")
    return 0


def _draw_rect(pixels: np.ndarray, x1: int, y1: int, x2: int, y2: int,
               color=(255, 0, 0), width: int = 2):
    h, w = pixels.shape[:2]
    x1, x2 = sorted((max(0, min(w - 1, x1)), max(0, min(w - 1, x2))))
    y1, y2 = sorted((max(0, min(h - 1, y1)), max(0, min(h - 1, y2))))
    for d in range(width):
        pixels[min(y1 + d, h - 1), x1:x2 + 1] = color
        pixels[max(y2 - d, 0), x1:x2 + 1] = color
        pixels[y1:y2 + 1, min(x1 + d, w - 1)] = color
        pixels[y1:y2 + 1, max(x2 - d, 0)] = color


def cmd_inspect(args) -> int:
    run_dir = Path(args.run)
    records_path = run_dir / "records.jsonl"
    if not records_path.is_file():
        print(f"no records.jsonl under {run_dir}", file=sys.stderr)
        return 1
    record = None
    with open(records_path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                obj = json.loads(line)
                if obj["sample_id"] == args.record:
                    record = obj
                    break
    if record is None:
        print(f"record {args.record!r} not found", file=sys.stderr)
        return 1
    pixels = read_image(run_dir / record["composite_image"]).copy()
    tags = []
    for text in (record["user_text"], record["assistant_text"]):
        tags.extend(parse_tags_lenient(text).tags)
    drawn = 0
    for tag in tags:
        g = tag.geometry
        if not isinstance(g, NormBox):
            continue  # only normalized boxes are drawable on the composite
        box = denormalize(g, DEFAULT_LAYOUT)
        _draw_rect(pixels, round(box.x1), round(box.y1),
                   round(box.x2), round(box.y2))
        drawn += 1
    out = Path(args.out) if args.out else run_dir / f"{args.record}_inspect.png"
    write_png(out, pixels)
    print(f"drew {drawn} box(es) -> {out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"convert": cmd_convert, "compose": cmd_compose,
                "score": cmd_score, "inspect": cmd_inspect}
    try:
        return handlers[args.command](args)
    except (metrics.MetricInputError, metrics.WeightError,
            pipeline.SchemaError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
