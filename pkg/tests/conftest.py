import json
from pathlib import Path

import pytest

from layervid.scene import Box, KeyframeBox

SCENES = Path(__file__).resolve().parent.parent / "scenes"

# Reference key-frame tracks: name -> [(frame, box), ...]
REFERENCE_TRACKS = {
    "clownfish": [(1, [0.7, 0.6, 0.9, 0.8]), (16, [0.1, 0.6, 0.3, 0.8])],
    "crab": [(1, [0.1, 0.7, 0.3, 0.9]), (16, [0.7, 0.7, 0.9, 0.9])],
    "polar_bear": [(1, [0.03, 0.36, 0.29, 0.66]), (8, [0.67, 0.26, 0.97, 0.58]), (16, [0.36, 0.63, 0.67, 0.98])],
    "drone": [(1, [0.67, 0.59, 0.97, 0.88]), (16, [0.03, 0.59, 0.32, 0.88])],
    "corgi": [(1, [0.06, 0.40, 0.31, 0.64]), (9, [0.37, 0.70, 0.64, 0.96]), (16, [0.66, 0.39, 0.97, 0.63])],
    "ball": [(1, [0.69, 0.68, 0.93, 0.94]), (16, [0.06, 0.47, 0.30, 0.71])],
}


def keyframes(pairs):
    return [KeyframeBox(n, Box(*b)) for n, b in pairs]


def small_scene_doc(layers=2, frames=4, steps=6, seed=3, latent=8, res=32):
    boxes = [
        [(1, [0.1, 0.1, 0.5, 0.5]), (frames, [0.5, 0.4, 0.9, 0.8])],
        [(1, [0.6, 0.2, 0.9, 0.6]), (frames, [0.2, 0.3, 0.6, 0.7])],
        [(1, [0.3, 0.5, 0.7, 0.9])],
        [(1, [0.0, 0.0, 0.4, 0.3]), (frames, [0.6, 0.6, 1.0, 0.9])],
    ]
    prompts = ["a cat walking", "an eagle flying", "a robot standing", "a crab crawling"]
    return {
        "background_prompt": "a quiet beach",
        "frames": frames,
        "steps": steps,
        "seed": seed,
        "resolution": {"width": res, "height": res},
        "latent": {"h": latent, "w": latent, "ch": 4},
        "layers": [
            {"prompt": prompts[i], "keyframes": [{"frame": n, "box": b} for n, b in boxes[i]]}
            for i in range(layers)
        ],
    }


@pytest.fixture
def scene_file(tmp_path):
    def make(**kwargs):
        path = tmp_path / "scene.json"
        path.write_text(json.dumps(small_scene_doc(**kwargs)))
        return path

    return make


# ------------------------------------------------ acceptance summary lines

_acceptance = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_ac" in report.nodeid and report.when == "call":
        _acceptance[report.nodeid.split("::")[-1]] = report.outcome
    elif "test_acceptance.py::test_ac" in report.nodeid and report.failed:
        _acceptance[report.nodeid.split("::")[-1]] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance, key=lambda n: int(n.split("_")[1][2:])):
        status = "PASS" if _acceptance[name] == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}")
