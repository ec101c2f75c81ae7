import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from layervid.cli import main
from layervid.frameio import read_frames
from layervid.metrics import evaluate_scene, load_detections
from layervid.pipeline import run_scene
from layervid.scene import parse_scene

from conftest import REFERENCE_TRACKS, SCENES, small_scene_doc

HOOK = Path(__file__).parent / "data" / "invert_hook.py"


def tree_digest(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def test_generate_two_layers(scene_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["generate", "--scene", str(scene_file()), "--out", str(out)]) == 0
    assert len(list((out / "layer_01").glob("frame_*.png"))) == 4
    assert len(list((out / "layer_02").glob("mask_*.png"))) == 4
    assert "2 layer(s)" in capsys.readouterr().out


def test_generate_missing_scene(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["generate", "--scene", str(missing), "--out", str(tmp_path / "o")]) != 0
    err = capsys.readouterr().err.strip()
    assert str(missing) in err and len(err.splitlines()) == 1


def test_seed_override_matches_library(scene_file, tmp_path):
    path = scene_file(seed=1)
    cli_out, lib_out = tmp_path / "cli", tmp_path / "lib"
    assert main(["generate", "--scene", str(path), "--out", str(cli_out), "--seed", "7"]) == 0
    manifest = json.loads((cli_out / "manifest.json").read_text())
    assert manifest["seed"] == 7
    run_scene(parse_scene(small_scene_doc(seed=7)), out_dir=lib_out)
    assert tree_digest(cli_out) == tree_digest(lib_out)


def test_generate_rerun_is_byte_identical(scene_file, tmp_path):
    out = tmp_path / "out"
    path = str(scene_file(layers=1))
    main(["generate", "--scene", path, "--out", str(out)])
    first = tree_digest(out)
    main(["generate", "--scene", path, "--out", str(out)])
    assert tree_digest(out) == first


def test_guidance_overrides(scene_file, tmp_path):
    out = tmp_path / "out"
    args = ["generate", "--scene", str(scene_file(layers=1)), "--out", str(out),
            "--lambda", "1.0", "--gamma-key", "1.5", "--mu1", "1.1", "--mu2", "1.3", "--t-eps", "0.25", "--steps", "3"]
    assert main(args) == 0
    doc = json.loads((out / "manifest.json").read_text())["scene"]
    assert doc["steps"] == 3
    assert doc["guidance"]["lambda"] == 1.0 and doc["guidance"]["t_eps_fraction"] == 0.25


def test_invalid_override_rejected(scene_file, tmp_path, capsys):
    assert main(["generate", "--scene", str(scene_file()), "--out", str(tmp_path / "o"), "--mu1", "0.5"]) != 0
    assert "mu1" in capsys.readouterr().err


def test_blend_with_hook(scene_file, tmp_path):
    out = tmp_path / "out"
    main(["generate", "--scene", str(scene_file()), "--out", str(out)])
    hook = f"{sys.executable} {HOOK}"
    assert main(["blend", "--out", str(out), "--hook", hook]) == 0
    blend = read_frames(out / "blend")
    harmonized = read_frames(out / "harmonized")
    masks = read_frames(out / "layer_01", "mask") | read_frames(out / "layer_02", "mask")
    np.testing.assert_allclose(harmonized[masks], 1 - blend[masks], atol=1e-9)
    np.testing.assert_allclose(harmonized[~masks], blend[~masks], atol=1e-9)


def _write_detections(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


def _metrics_lines(out):
    return dict(line.split("\t") for line in out.strip().splitlines())


def test_metrics_perfect(scene_file, tmp_path, capsys):
    s = parse_scene(small_scene_doc())
    recs = [
        {"video": "v0", "object": i, "frame": n, "box": b.as_list(), "confidence": 1.0}
        for i, tr in enumerate(s.tracks(), start=1)
        for n, b in enumerate(tr.boxes, start=1)
    ]
    det = _write_detections(tmp_path / "det.jsonl", recs)
    report_dir = tmp_path / "report"
    assert main(["metrics", "--scene", str(scene_file()), "--detections", str(det), "--out", str(report_dir)]) == 0
    vals = _metrics_lines(capsys.readouterr().out)
    assert vals == {"mIoU": "1.000000", "AP50": "1.000000", "Cov": "1.000000", "CD": "0.000000"}
    report = json.loads((report_dir / "metrics.json").read_text())
    assert (report["miou"], report["ap50"], report["coverage"], report["cd"]) == (1.0, 1.0, 1.0, 0.0)
    assert (report_dir / "per_object.tsv").read_text().startswith("video\tobject")
    assert (report_dir / "metrics.png").exists()


def test_metrics_empty(scene_file, tmp_path, capsys):
    det = tmp_path / "det.jsonl"
    det.write_text("")
    assert main(["metrics", "--scene", str(scene_file()), "--detections", str(det)]) == 0
    vals = _metrics_lines(capsys.readouterr().out)
    assert vals == {"mIoU": "0.000000", "AP50": "0.000000", "Cov": "0.000000", "CD": "undefined"}


def test_metrics_mixed_matches_library(scene_file, tmp_path, capsys):
    s = parse_scene(small_scene_doc())
    rng = np.random.default_rng(0)
    recs = []
    for video in ("a", "b"):
        for i, tr in enumerate(s.tracks(), start=1):
            for n, b in enumerate(tr.boxes, start=1):
                if rng.uniform() < 0.3:
                    continue
                c = np.clip(np.array(b.as_list()) + rng.normal(scale=0.05, size=4), 0, 1)
                box = [min(c[0], c[2]), min(c[1], c[3]), max(c[0], c[2]), max(c[1], c[3])]
                recs.append({"video": video, "object": i, "frame": n, "box": box, "confidence": float(rng.uniform())})
    det = _write_detections(tmp_path / "det.jsonl", recs)
    out = tmp_path / "rep"
    assert main(["metrics", "--scene", str(scene_file()), "--detections", str(det), "--out", str(out)]) == 0
    lib = evaluate_scene(load_detections(det), s)
    assert json.loads((out / "metrics.json").read_text()) == json.loads(json.dumps(lib.to_document()))


def test_metrics_malformed_line(scene_file, tmp_path, capsys):
    det = tmp_path / "det.jsonl"
    det.write_text('{"video": "a", "object": 1, "frame": 1, "box": [0, 0, 1, 1], "confidence": 1}\nnot json\n')
    assert main(["metrics", "--scene", str(scene_file()), "--detections", str(det)]) != 0
    assert "line 2" in capsys.readouterr().err


def _interp_rows(text):
    lines = text.strip().splitlines()
    assert lines[0].split("\t") == ["layer", "frame", "x0", "y0", "x1", "y1", "key"]
    return [line.split("\t") for line in lines[1:]]


def test_interp_clownfish_endpoints(capsys):
    assert main(["interp", "--scene", str(SCENES / "coral_reef.json")]) == 0
    rows = _interp_rows(capsys.readouterr().out)
    fish = {int(r[1]): [float(v) for v in r[2:6]] for r in rows if r[0] == "1"}
    assert fish[1] == REFERENCE_TRACKS["clownfish"][0][1]
    assert fish[16] == REFERENCE_TRACKS["clownfish"][1][1]
    assert len(rows) == 32


def test_interp_polar_bear_turning_point(tmp_path, capsys):
    assert main(["interp", "--scene", str(SCENES / "snow_field.json"), "--out", str(tmp_path)]) == 0
    rows = _interp_rows(capsys.readouterr().out)
    bear = {int(r[1]): [float(v) for v in r[2:6]] for r in rows if r[0] == "1"}
    assert bear[8] == [0.67, 0.26, 0.97, 0.58]
    assert (tmp_path / "tracks.tsv").exists() and (tmp_path / "tracks.png").exists()


def test_interp_static_layer(tmp_path, capsys):
    doc = small_scene_doc(layers=3)
    doc["layers"] = doc["layers"][2:]
    path = tmp_path / "s.json"
    path.write_text(json.dumps(doc))
    assert main(["interp", "--scene", str(path)]) == 0
    rows = _interp_rows(capsys.readouterr().out)
    assert len(rows) == 4 and len({tuple(r[2:6]) for r in rows}) == 1


def test_bad_keyframe_reports_error(tmp_path, capsys):
    doc = small_scene_doc()
    doc["layers"][0]["keyframes"][1]["frame"] = 20
    path = tmp_path / "s.json"
    path.write_text(json.dumps(doc))
    assert main(["interp", "--scene", str(path)]) != 0
    assert "20" in capsys.readouterr().err


def test_module_entry_point(scene_file):
    import subprocess

    proc = subprocess.run([sys.executable, "-m", "layervid", "interp", "--scene", str(scene_file())],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("layer\tframe")
