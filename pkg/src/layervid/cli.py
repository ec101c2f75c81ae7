"""Command-line front end: ``layervid {generate,blend,metrics,interp}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from layervid import frameio
from layervid.compositing import HarmonizeError, blend_layers, harmonize, union_masks
from layervid.scene import SceneError, SceneSpec, parse_scene

log = logging.getLogger("layervid")

GUIDANCE_FLAGS = {
    "lam": "lambda",
    "gamma_key": "gamma_key",
    "mu1": "mu1",
    "mu2": "mu2",
    "t_eps": "t_eps_fraction",
}


class CommandError(Exception):
    pass


def scene_from_args(args: argparse.Namespace) -> SceneSpec:
    """Load ``--scene`` and apply command-line overrides before validation."""
    path = Path(args.scene)
    if not path.is_file():
        raise CommandError(f"scene file not found: {path}")
    try:
        document = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CommandError(f"cannot read scene {path}: {exc}") from None
    if not isinstance(document, dict):
        raise CommandError(f"scene {path} must hold a JSON object")
    for flag in ("seed", "steps", "frames"):
        value = getattr(args, flag, None)
        if value is not None:
            document[flag] = value
    guidance = dict(document.get("guidance", {}))
    for flag, key in GUIDANCE_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            guidance[key] = value
    if guidance:
        document["guidance"] = guidance
    return parse_scene(document)


def write_tsv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------- commands


def cmd_generate(args: argparse.Namespace) -> int:
    from layervid.pipeline import run_scene

    scene = scene_from_args(args)
    out = Path(args.out)
    run_scene(scene, hook=args.hook, out_dir=out)
    print(f"wrote {len(scene.layers)} layer(s), {scene.frames} frames to {out}")
    return 0


def cmd_blend(args: argparse.Namespace) -> int:
    """Re-blend an existing output tree and re-run the harmonizer."""
    root = Path(args.out)
    try:
        background = frameio.read_frames(root / "bg")
    except (OSError, ValueError) as exc:
        raise CommandError(f"cannot read background frames: {exc}") from None
    layers, masks = [], []
    for d in sorted(root.glob("layer_[0-9][0-9]")):
        layers.append(frameio.read_frames(d, "frame", expected=background.shape[0]))
        masks.append(frameio.read_frames(d, "mask", expected=background.shape[0]))
    blend = blend_layers(background, layers)
    frameio.write_frames(root / "blend", blend)
    harmonized = harmonize(blend, union_masks(masks, blend.shape[:-1]), args.hook)
    frameio.write_frames(root / "harmonized", harmonized)
    print(f"blended {len(layers)} layer(s) over {background.shape[0]} frames in {root}")
    return 0


def cmd_metrics(args: argparse.Namespace) -> int:
    from layervid.metrics import evaluate_scene, load_detections

    scene = scene_from_args(args)
    try:
        records = load_detections(args.detections)
    except OSError as exc:
        raise CommandError(f"cannot read detections {args.detections}: {exc.strerror}") from None
    report = evaluate_scene(records, scene)
    cd = "undefined" if report.cd is None else f"{report.cd:.6f}"
    print(f"mIoU\t{report.miou:.6f}")
    print(f"AP50\t{report.ap50:.6f}")
    print(f"Cov\t{report.coverage:.6f}")
    print(f"CD\t{cd}")
    if args.out:
        from layervid.plotting import plot_metrics

        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(report.to_document(), indent=2) + "\n")
        write_tsv(
            out / "per_object.tsv",
            ["video", "object", "miou", "cd", "detected_frames", "frames"],
            [[o["video"], o["object"], o["miou"], "" if o["cd"] is None else o["cd"], o["detected_frames"], o["frames"]]
             for o in report.per_object],
        )
        plot_metrics(report, out / "metrics.png")
    return 0


def cmd_interp(args: argparse.Namespace) -> int:
    scene = scene_from_args(args)
    rows = []
    for i, track in enumerate(scene.tracks(), start=1):
        for n, box in enumerate(track.boxes, start=1):
            rows.append([i, n, *(repr(v) for v in box.as_list()), int(track.is_key(n))])
    header = ["layer", "frame", "x0", "y0", "x1", "y1", "key"]
    writer = csv.writer(sys.stdout, delimiter="\t", lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    if args.out:
        from layervid.plotting import plot_tracks

        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_tsv(out / "tracks.tsv", header, rows)
        plot_tracks(scene, out / "tracks.png")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="layervid", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def overrides(p: argparse.ArgumentParser) -> None:
        p.add_argument("--scene", required=True, help="scene JSON file")
        p.add_argument("--seed", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--frames", type=int)
        p.add_argument("--lambda", dest="lam", type=float, help="cross-attention guidance scale")
        p.add_argument("--gamma-key", type=float, help="key-frame amplification")
        p.add_argument("--mu1", type=float, help="within-plane sharing weight inside the box")
        p.add_argument("--mu2", type=float, help="cross-plane sharing weight inside the box")
        p.add_argument("--t-eps", type=float, help="stage switch as a fraction of T")

    p = sub.add_parser("generate", help="generate background, layers, blend")
    overrides(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--hook", help="harmonizer command, run as CMD FRAMES MASKS OUT")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("blend", help="re-blend an existing output directory")
    p.add_argument("--out", required=True, help="output directory written by generate")
    p.add_argument("--hook", help="harmonizer command, run as CMD FRAMES MASKS OUT")
    p.set_defaults(func=cmd_blend)

    p = sub.add_parser("metrics", help="trajectory metrics from a detection file")
    overrides(p)
    p.add_argument("--detections", required=True, help="JSON-lines detections")
    p.add_argument("--out", help="directory for metrics.json, per_object.tsv, metrics.png")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("interp", help="dump interpolated per-frame boxes")
    overrides(p)
    p.add_argument("--out", help="directory for tracks.tsv and tracks.png")
    p.set_defaults(func=cmd_interp)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (CommandError, SceneError, HarmonizeError, ValueError, OSError) as exc:
        print(f"layervid {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
