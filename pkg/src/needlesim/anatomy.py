"""Layered surface anatomy models and acupoint catalogs.

A model is an ordered stack of named mesh layers (skin, muscle, bone, ...)
with per-layer visibility, plus landmark sets and target points defined in
model space. Catalogs are data files, not code: meshes are OBJ, the rest is
JSON, so real models drop in without touching the package.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgument, ParseError, UnknownLayer
from .ingest import Mesh, load_mesh
from .registration import LandmarkSet, SimilarityTransform, apply

DEFAULT_TOLERANCE_MM = 5.0


@dataclass(frozen=True)
class Layer:
    name: str
    mesh: Mesh
    visible: bool = True
    color: tuple = (0.8, 0.8, 0.8)
    avoid: bool = False  # crossing this layer counts as a forbidden contact


@dataclass(frozen=True)
class Acupoint:
    """Named needle target in model space with a clinical tolerance sphere."""

    name: str
    position: np.ndarray
    tolerance_radius: float = DEFAULT_TOLERANCE_MM
    target_layer: str | None = None
    max_safe_depth: float | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "position", np.asarray(self.position, dtype=np.float64).reshape(3)
        )
        if self.tolerance_radius <= 0:
            raise InvalidArgument(
                f"tolerance_radius must be positive, got {self.tolerance_radius}"
            )

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "position": self.position.tolist(),
            "tolerance_radius": self.tolerance_radius,
        }
        if self.target_layer is not None:
            d["target_layer"] = self.target_layer
        if self.max_safe_depth is not None:
            d["max_safe_depth"] = self.max_safe_depth
        return d


@dataclass
class AnatomyModel:
    name: str
    layers: list
    landmarks: dict = field(default_factory=dict)   # name -> LandmarkSet
    acupoints: dict = field(default_factory=dict)   # name -> Acupoint

    def __post_init__(self):
        if not self.layers:
            raise InvalidArgument("model needs at least one layer")
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise InvalidArgument(f"duplicate layer names in {names}")
        for ap in self.acupoints.values():
            if ap.target_layer is not None and ap.target_layer not in names:
                raise UnknownLayer(
                    f"acupoint {ap.name!r} targets unknown layer {ap.target_layer!r}"
                )

    def layer(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise UnknownLayer(f"no layer named {name!r} in model {self.name!r}")

    def visible_layers(self) -> list:
        return [layer for layer in self.layers if layer.visible]

    def avoid_layer_names(self) -> set:
        return {layer.name for layer in self.layers if layer.avoid}


def set_layer_visibility(model: AnatomyModel, layer_name: str, visible: bool) -> AnatomyModel:
    """New model with exactly one visibility flag changed; meshes are shared."""
    found = False
    layers = []
    for layer in model.layers:
        if layer.name == layer_name:
            layers.append(replace(layer, visible=bool(visible)))
            found = True
        else:
            layers.append(layer)
    if not found:
        raise UnknownLayer(f"no layer named {layer_name!r} in model {model.name!r}")
    return AnatomyModel(
        name=model.name,
        layers=layers,
        landmarks=model.landmarks,
        acupoints=model.acupoints,
    )


def acupoint_world_position(ap: Acupoint, pose: SimilarityTransform) -> np.ndarray:
    return apply(pose, ap.position)


# ---------------------------------------------------------------------------
# JSON loaders

def load_acupoints(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        try:
            entries = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: {e.msg}", line=e.lineno)
    if not isinstance(entries, list):
        raise ParseError(f"{path}: expected a JSON list of acupoints")
    points = {}
    for entry in entries:
        ap = Acupoint(
            name=entry["name"],
            position=entry["position"],
            tolerance_radius=entry.get("tolerance_radius", DEFAULT_TOLERANCE_MM),
            target_layer=entry.get("target_layer"),
            max_safe_depth=entry.get("max_safe_depth"),
        )
        if ap.name in points:
            raise ParseError(f"{path}: duplicate acupoint name {ap.name!r}")
        points[ap.name] = ap
    return points


def _parse_landmark_sets(raw: dict) -> dict:
    if not raw:
        return {}
    # Either one bare set {left:[...],...} or named sets {label:{left:...}}.
    if set(k.lower() for k in raw) <= set(("left", "right", "top", "bottom", "front", "back")):
        return {"default": LandmarkSet.from_dict(raw)}
    return {name: LandmarkSet.from_dict(d) for name, d in raw.items()}


def load_model(manifest_path) -> AnatomyModel:
    """Read a model manifest JSON and everything it references.

    Manifest shape: {name, layers:[{name, mesh_path, color, visible, avoid}],
    landmarks:{...}, acupoints_path}; paths resolve relative to the manifest.
    """
    manifest_path = os.fspath(manifest_path)
    base = os.path.dirname(manifest_path)
    with open(manifest_path, "r", encoding="utf-8") as f:
        try:
            manifest = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"{manifest_path}: {e.msg}", line=e.lineno)

    layers = []
    for entry in manifest.get("layers", []):
        layers.append(Layer(
            name=entry["name"],
            mesh=load_mesh(os.path.join(base, entry["mesh_path"])),
            visible=bool(entry.get("visible", True)),
            color=tuple(entry.get("color", (0.8, 0.8, 0.8))),
            avoid=bool(entry.get("avoid", False)),
        ))

    acupoints = {}
    if manifest.get("acupoints_path"):
        acupoints = load_acupoints(os.path.join(base, manifest["acupoints_path"]))

    return AnatomyModel(
        name=manifest.get("name", os.path.basename(base) or "model"),
        layers=layers,
        landmarks=_parse_landmark_sets(manifest.get("landmarks", {})),
        acupoints=acupoints,
    )
