"""Layered text-to-video generation with bbox-track attention control.

A background video is generated first; each foreground object is then
generated as its own transparent RGBA layer, conditioned on what came
before, and the layers are alpha-composited in generation order.
"""

from layervid.attention import GuidanceConfig
from layervid.scene import Box, BBoxTrack, KeyframeBox, LayerSpec, SceneSpec, parse_scene

__version__ = "0.1.0"

__all__ = [
    "Box",
    "BBoxTrack",
    "GuidanceConfig",
    "KeyframeBox",
    "LayerSpec",
    "SceneSpec",
    "parse_scene",
    "__version__",
]
