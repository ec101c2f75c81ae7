"""Background-then-layers generation and final blending.

For the i-th foreground layer the background plane is conditioned on the
raw background video while ``t > t_eps`` and on the blend of the
background with layers ``1 .. i-1`` once ``t <= t_eps``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from layervid import __version__, frameio
from layervid.compositing import Hook, blend_layers, harmonize, union_masks
from layervid.denoiser import (
    DenoiserDims,
    EncodedCondition,
    SamplerSchedule,
    StepTrace,
    ToyDenoiser,
    TrackGeometry,
    build_toy_denoiser,
    encode_prompt,
    initial_noise,
)
from layervid.scene import BBoxTrack, SceneSpec, interpolate_track
from layervid.transparency import (
    DEFAULT_LOW_THRESH,
    DEFAULT_MASK_THRESH,
    TransparencyCodec,
    adjust_latent,
    build_toy_codec,
    decode_rgb,
    decode_rgba,
    extract_foreground_mask,
)

log = logging.getLogger(__name__)

# Fixed seed of the stand-in "pretrained" weights; the scene seed only drives noise.
MODEL_SEED = 0


class MissingPriorLayerError(ValueError):
    pass


@dataclass
class LayerArtifact:
    layer_index: int
    rgba: np.ndarray  # [f, H, W, 4], alpha cleaned
    masks: np.ndarray  # [f, H, W] bool
    track: BBoxTrack
    trace: list[StepTrace]
    latent: np.ndarray | None = field(default=None, repr=False)


@dataclass
class HCBState:
    """Condition schedule for one foreground layer."""

    t_eps: int
    background: EncodedCondition
    blend: EncodedCondition

    def condition(self, t: int) -> EncodedCondition:
        return self.background if t > self.t_eps else self.blend


@dataclass
class SceneResult:
    background: np.ndarray
    background_trace: list[StepTrace]
    layers: list[LayerArtifact]
    blend: np.ndarray
    harmonized: np.ndarray
    masks: np.ndarray


def switch_step(t_eps_fraction: float, T: int) -> int:
    return int(math.floor(t_eps_fraction * T + 0.5))


class LayerPipeline:
    """Generates a scene layer by layer with one denoiser and one codec."""

    def __init__(
        self,
        denoiser: ToyDenoiser,
        codec: TransparencyCodec,
        low_thresh: float = DEFAULT_LOW_THRESH,
        mask_thresh: float = DEFAULT_MASK_THRESH,
        unguided: bool = False,
    ):
        if denoiser.encoder.scale_factor != codec.scale_factor:
            raise ValueError("denoiser and codec disagree on the latent scale factor")
        self.denoiser = denoiser
        self.codec = codec
        self.low_thresh = low_thresh
        self.mask_thresh = mask_thresh
        self.unguided = unguided

    @classmethod
    def for_scene(cls, scene: SceneSpec, **kwargs) -> "LayerPipeline":
        dims = DenoiserDims(channels=scene.channels, scale_factor=scene.scale_factor)
        denoiser = build_toy_denoiser(MODEL_SEED, dims)
        codec = build_toy_codec(MODEL_SEED, scene.channels, scene.scale_factor)
        return cls(denoiser, codec, **kwargs)

    def _streams(self, scene: SceneSpec) -> list[np.random.Generator]:
        children = np.random.SeedSequence(scene.seed).spawn(len(scene.layers) + 1)
        return [np.random.default_rng(c) for c in children]

    def _check_scene(self, scene: SceneSpec) -> None:
        if scene.channels != self.codec.channels or scene.scale_factor != self.codec.scale_factor:
            raise ValueError("scene latent layout does not match this pipeline")

    def generate_background(self, scene: SceneSpec) -> tuple[np.ndarray, list[StepTrace]]:
        """Unguided single-plane run decoded with the base decoder."""
        self._check_scene(scene)
        rng = self._streams(scene)[0]
        x = initial_noise(rng, (scene.frames, 1, scene.latent_h, scene.latent_w, scene.channels))
        prompt = encode_prompt(scene.background_prompt, self.denoiser.dims.d_text, foreground=False)
        schedule = SamplerSchedule(scene.steps)
        trace = []
        for t in schedule.timesteps():
            x, tr = self.denoiser.step(x, prompt, None, None, t, schedule, scene.guidance)
            trace.append(tr)
        return decode_rgb(x[:, 0], self.codec), trace

    def generate_foreground_layer(
        self,
        scene: SceneSpec,
        layer_index: int,
        background: np.ndarray,
        prior_layers: Sequence[LayerArtifact],
    ) -> LayerArtifact:
        """Generate transparent layer ``layer_index`` (1-based) over the given priors."""
        self._check_scene(scene)
        if not 1 <= layer_index <= len(scene.layers):
            raise IndexError(f"layer index {layer_index} outside [1, {len(scene.layers)}]")
        got = [a.layer_index for a in prior_layers]
        if got != list(range(1, layer_index)):
            raise MissingPriorLayerError(
                f"layer {layer_index} needs prior layers {list(range(1, layer_index))}, got {got}"
            )
        height, width = scene.image_size
        if background.shape != (scene.frames, height, width, 3):
            raise ValueError(f"background video {background.shape} does not match the scene")

        spec = scene.layers[layer_index - 1]
        track = interpolate_track(spec.track, scene.frames)
        geometry = TrackGeometry.from_track(track, scene.latent_h, scene.latent_w)
        prompt = encode_prompt(spec.prompt, self.denoiser.dims.d_text, foreground=True)
        schedule = SamplerSchedule(scene.steps)

        bg_cond = self.denoiser.encode_condition(background, "background")
        if prior_layers:
            blended = blend_layers(background, [a.rgba for a in prior_layers])
            blend_cond = self.denoiser.encode_condition(blended, "blend")
        else:
            blend_cond = bg_cond
        hcb = HCBState(switch_step(scene.guidance.t_eps_fraction, scene.steps), bg_cond, blend_cond)

        rng = self._streams(scene)[layer_index]
        x = initial_noise(rng, (scene.frames, 2, scene.latent_h, scene.latent_w, scene.channels))
        trace = []
        for t in schedule.timesteps():
            x, tr = self.denoiser.step(
                x, prompt, hcb.condition(t), geometry, t, schedule, scene.guidance, unguided=self.unguided
            )
            trace.append(tr)

        x_a = adjust_latent(x[:, 0], self.codec)
        masks, rgba = extract_foreground_mask(decode_rgba(x_a, self.codec), self.low_thresh, self.mask_thresh)
        return LayerArtifact(layer_index, rgba, masks, track, trace, latent=x)

    def run_scene(self, scene: SceneSpec, hook: Hook = None, out_dir: str | Path | None = None) -> SceneResult:
        """Background, then every layer in order, then blend and harmonize.

        With ``out_dir`` every artifact is written as soon as it exists, so
        a failing harmonizer leaves the blend on disk.
        """
        writer = OutputWriter(out_dir, scene) if out_dir is not None else None
        log.info("generating background: %s", scene.background_prompt)
        background, bg_trace = self.generate_background(scene)
        if writer:
            writer.background(background, bg_trace)
        layers: list[LayerArtifact] = []
        for i in range(1, len(scene.layers) + 1):
            log.info("generating layer %d: %s", i, scene.layers[i - 1].prompt)
            artifact = self.generate_foreground_layer(scene, i, background, layers)
            layers.append(artifact)
            if writer:
                writer.layer(artifact)
        blend = blend_layers(background, [a.rgba for a in layers])
        masks = union_masks([a.masks for a in layers], blend.shape[:-1])
        if writer:
            writer.blend(blend)
        harmonized = harmonize(blend, masks, hook)
        result = SceneResult(background, bg_trace, layers, blend, harmonized, masks)
        if writer:
            writer.finish(result)
        return result


def run_scene(scene: SceneSpec, hook: Hook = None, out_dir: str | Path | None = None) -> SceneResult:
    return LayerPipeline.for_scene(scene).run_scene(scene, hook, out_dir)


class OutputWriter:
    """Writes the on-disk layout of a generated scene."""

    def __init__(self, out_dir: str | Path, scene: SceneSpec):
        self.root = Path(out_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.scene = scene
        self._trace_lines: list[str] = []

    def _trace(self, layer: int, trace: list[StepTrace]) -> None:
        for tr in trace:
            for rec in tr.records(layer=layer):
                self._trace_lines.append(json.dumps(rec, sort_keys=True))

    def background(self, video: np.ndarray, trace: list[StepTrace]) -> None:
        frameio.write_frames(self.root / "bg", video)
        self._trace(0, trace)

    def layer(self, artifact: LayerArtifact) -> None:
        d = self.root / f"layer_{artifact.layer_index:02d}"
        frameio.write_frames(d, artifact.rgba)
        frameio.write_masks(d, artifact.masks)
        self._trace(artifact.layer_index, artifact.trace)

    def blend(self, video: np.ndarray) -> None:
        frameio.write_frames(self.root / "blend", video)
        (self.root / "trace.jsonl").write_text("\n".join(self._trace_lines) + "\n")

    def finish(self, result: SceneResult) -> None:
        from layervid import plotting

        frameio.write_frames(self.root / "harmonized", result.harmonized)
        write_manifest(self.root, self.scene)
        figures = self.root / "figures"
        figures.mkdir(exist_ok=True)
        plotting.plot_tracks(self.scene, figures / "tracks.png")
        plotting.plot_schedule(result, self.scene, figures / "schedule.png")


def write_manifest(root: Path, scene: SceneSpec) -> None:
    manifest = {
        "scene": scene.to_document(),
        "seed": scene.seed,
        "model_seed": MODEL_SEED,
        "versions": {"layervid": __version__, "numpy": np.__version__},
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
