"""Session state: one training scene and its deterministic mutation log.

A session aggregates the loaded volume and anatomy model, the registration
between them, slicing planes, needles, transfer function, render settings,
and camera. Mutation goes through a single command dispatcher that bumps a
revision counter; persistence is JSON with content-hashed asset references,
so replaying a command list or reloading a file reproduces the same scene.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import anatomy as _anatomy
from .anatomy import AnatomyModel, acupoint_world_position, load_model
from .errors import (
    Conflict,
    InvalidArgument,
    ParseError,
    UnknownId,
    UnsupportedVersion,
)
from .ingest import Volume, histogram, load_dicom_series, load_nrrd
from .needling import Needle, insert_needle, project_needle, score, traverse
from .registration import (
    LAYOUT_MODES,
    LAYOUT_OVERLAPPING,
    LandmarkSet,
    OrientedBox,
    SimilarityTransform,
    align,
    apply as apply_transform,
    box_from_landmarks,
    layout,
)
from .render import (
    Camera,
    Image,
    Overlays,
    PLANE_VIEW,
    RenderSettings,
    SlicingPlane,
    draw_segment_2d,
    iso_hit,
    plane_uv_to_pixel,
    render,
    resample_view_plane,
)
from .transfer import TransferFunction1D, default_tf

SCHEMA_VERSION = 1

COMMAND_TYPES = (
    "SetTF", "AddPlane", "MovePlane", "RemovePlane",
    "AddNeedle", "InsertNeedle", "RemoveNeedle",
    "SetLayerVisibility", "SetRegistration", "SetLayout",
    "SetCamera", "SetRenderSettings",
)

_NEEDLE_COLOR = (0.92, 0.92, 0.96)
_ACUPOINT_COLOR = (1.0, 0.45, 0.1)


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass(frozen=True)
class AssetRef:
    """Path (relative to the data root when possible) plus content hash."""

    path: str
    sha256: str

    def resolve(self, root) -> str:
        return self.path if os.path.isabs(self.path) else os.path.join(root, self.path)


def _make_ref(path, root) -> AssetRef:
    path = os.path.abspath(os.fspath(path))
    root = os.path.abspath(os.fspath(root))
    stored = os.path.relpath(path, root)
    if stored.startswith(".."):
        stored = path
    return AssetRef(path=stored, sha256=file_sha256(path))


def load_volume_file(path) -> Volume:
    path = os.fspath(path)
    if os.path.isdir(path):
        return load_dicom_series(path)
    return load_nrrd(path)


def default_camera(volume: Volume, image_size=(512, 512)) -> Camera:
    """Frame the whole volume from an oblique three-quarter view."""
    nx, ny, nz = volume.dims
    center = volume.index_to_world(((nx - 1) / 2.0, (ny - 1) / 2.0, (nz - 1) / 2.0))
    extent = np.linalg.norm(
        (np.array([nx, ny, nz]) - 1.0) * np.asarray(volume.spacing)
    )
    view = np.array([0.45, -0.8, 0.4])
    view = view / np.linalg.norm(view)
    distance = max(extent, 1.0) * 1.6
    return Camera(
        position=center + distance * view,
        target=center,
        up=np.array([0.0, 0.0, 1.0]),
        vertical_fov_deg=45.0,
        image_size=image_size,
    )


def volume_box(volume: Volume) -> OrientedBox:
    nx, ny, nz = volume.dims
    center = volume.index_to_world(((nx - 1) / 2.0, (ny - 1) / 2.0, (nz - 1) / 2.0))
    half = np.maximum(
        (np.array([nx, ny, nz]) - 1.0) * np.asarray(volume.spacing) / 2.0, 1e-6
    )
    return OrientedBox(center=center, axes=volume.orientation.copy(), half_extents=half)


@dataclass
class Session:
    id: str
    volume: Volume
    volume_ref: AssetRef
    model: AnatomyModel | None = None
    model_ref: AssetRef | None = None
    registration: SimilarityTransform | None = None
    target_box: OrientedBox | None = None
    layout_mode: str = LAYOUT_OVERLAPPING
    layout_gap_mm: float = 50.0
    planes: list = field(default_factory=list)
    needles: list = field(default_factory=list)
    tf: TransferFunction1D = None
    settings: RenderSettings = field(default_factory=RenderSettings)
    camera: Camera = None
    revision: int = 0

    def __post_init__(self):
        if self.tf is None:
            self.tf = default_tf(self.volume.value_range)
        if self.camera is None:
            self.camera = default_camera(self.volume)

    # -- lookups ------------------------------------------------------------

    def plane(self, plane_id: str) -> SlicingPlane:
        for p in self.planes:
            if p.id == plane_id:
                return p
        raise UnknownId(f"no plane with id {plane_id!r}")

    def needle(self, needle_id: str) -> Needle:
        for n in self.needles:
            if n.id == needle_id:
                return n
        raise UnknownId(f"no needle with id {needle_id!r}")

    def acupoint(self, name: str):
        if self.model is None or name not in self.model.acupoints:
            raise UnknownId(f"no acupoint named {name!r}")
        return self.model.acupoints[name]

    # -- derived scene geometry ----------------------------------------------

    def model_pose(self) -> SimilarityTransform:
        """Registration plus layout offset; identity before registration."""
        t = self.registration or SimilarityTransform.identity()
        box = self.target_box or volume_box(self.volume)
        return layout(self.layout_mode, t, box, self.layout_gap_mm)

    def posed_layers(self) -> list:
        """(name, world-space mesh) for every visible model layer."""
        if self.model is None:
            return []
        pose = self.model_pose()
        return [
            (layer.name, apply_transform(pose, layer.mesh))
            for layer in self.model.visible_layers()
        ]

    def acupoint_world(self, name: str) -> np.ndarray:
        return acupoint_world_position(self.acupoint(name), self.model_pose())

    def to_dict(self) -> dict:
        model_ref = None
        if self.model_ref is not None:
            model_ref = {"path": self.model_ref.path, "sha256": self.model_ref.sha256}
        target_box = None
        if self.target_box is not None:
            target_box = {
                "center": self.target_box.center.tolist(),
                "axes": self.target_box.axes.tolist(),
                "half_extents": self.target_box.half_extents.tolist(),
            }
        return {
            "schema_version": SCHEMA_VERSION,
            "id": self.id,
            "volume": {"path": self.volume_ref.path, "sha256": self.volume_ref.sha256},
            "model": model_ref,
            "registration": None if self.registration is None else self.registration.to_dict(),
            "target_box": target_box,
            "layout": {"mode": self.layout_mode, "gap_mm": self.layout_gap_mm},
            "planes": [p.to_dict() for p in self.planes],
            "needles": [n.to_dict() for n in self.needles],
            "tf": self.tf.to_dict(),
            "settings": self.settings.to_dict(),
            "camera": self.camera.to_dict(),
            "revision": self.revision,
        }


def new_session(session_id: str, volume_path, model_path=None,
                data_root=None) -> Session:
    """Load assets and build a session with serviceable defaults."""
    data_root = os.path.dirname(os.path.abspath(volume_path)) if data_root is None else data_root
    volume = load_volume_file(volume_path)
    model = None
    model_ref = None
    if model_path is not None:
        model = load_model(model_path)
        model_ref = _make_ref(model_path, data_root)
    return Session(
        id=session_id,
        volume=volume,
        volume_ref=_make_ref(volume_path, data_root),
        model=model,
        model_ref=model_ref,
    )


# ---------------------------------------------------------------------------
# Mutation

def mutate(session: Session, command: dict,
           expected_revision: int | None = None) -> Session:
    """Apply one command and return the successor session.

    The input session is never modified: a failed command raises and leaves
    the caller's snapshot intact. ``expected_revision`` enables optimistic
    concurrency; a mismatch raises Conflict.
    """
    if expected_revision is not None and expected_revision != session.revision:
        raise Conflict(
            f"expected revision {expected_revision}, session is at {session.revision}"
        )
    if not isinstance(command, dict) or "type" not in command:
        raise InvalidArgument("command must be an object with a 'type' field")
    ctype = command["type"]
    if ctype not in COMMAND_TYPES:
        raise InvalidArgument(f"unknown command type {ctype!r}")
    handler = _HANDLERS[ctype]
    updated = handler(session, command)
    return replace(updated, revision=session.revision + 1)


def _require(command, *keys):
    missing = [k for k in keys if k not in command]
    if missing:
        raise InvalidArgument(f"{command['type']} command missing fields: {missing}")


def _set_tf(session, command):
    _require(command, "tf")
    return replace(session, tf=TransferFunction1D.from_dict(command["tf"]))


def _add_plane(session, command):
    _require(command, "plane")
    plane = SlicingPlane.from_dict(command["plane"])
    if any(p.id == plane.id for p in session.planes):
        raise InvalidArgument(f"duplicate plane id {plane.id!r}")
    return replace(session, planes=session.planes + [plane])


def _move_plane(session, command):
    _require(command, "id")
    target = session.plane(command["id"])
    d = target.to_dict()
    for key_src, key_dst in (("p", "p"), ("n", "n"), ("axes", "axes"),
                             ("extent", "extent"), ("resolution", "resolution")):
        if key_src in command:
            d[key_dst] = command[key_src]
    if "n" in command and "axes" not in command:
        d.pop("axes", None)  # stale axes no longer match the new normal
    moved = SlicingPlane.from_dict(d)
    return replace(
        session,
        planes=[moved if p.id == target.id else p for p in session.planes],
    )


def _remove_plane(session, command):
    _require(command, "id")
    session.plane(command["id"])
    return replace(
        session, planes=[p for p in session.planes if p.id != command["id"]]
    )


def _add_needle(session, command):
    _require(command, "needle")
    needle = Needle.from_dict(command["needle"])
    if any(n.id == needle.id for n in session.needles):
        raise InvalidArgument(f"duplicate needle id {needle.id!r}")
    return replace(session, needles=session.needles + [needle])


def _insert_needle(session, command):
    _require(command, "id", "depth_mm")
    needle = session.needle(command["id"])
    entry = command.get("entry", needle.entry_point.tolist())
    direction = command.get("dir", needle.direction.tolist())
    updated = insert_needle(needle, entry, direction, command["depth_mm"])
    return replace(
        session,
        needles=[updated if n.id == needle.id else n for n in session.needles],
    )


def _remove_needle(session, command):
    _require(command, "id")
    session.needle(command["id"])
    return replace(
        session, needles=[n for n in session.needles if n.id != command["id"]]
    )


def _set_layer_visibility(session, command):
    _require(command, "layer", "visible")
    if session.model is None:
        raise InvalidArgument("session has no anatomy model")
    model = _anatomy.set_layer_visibility(
        session.model, command["layer"], command["visible"]
    )
    return replace(session, model=model)


def _set_registration(session, command):
    if "transform" in command:
        t = SimilarityTransform.from_dict(command["transform"])
        box = session.target_box
        if "target_landmarks" in command:
            box = box_from_landmarks(LandmarkSet.from_dict(command["target_landmarks"]))
        return replace(session, registration=t, target_box=box)
    _require(command, "source_landmarks", "target_landmarks")
    source = LandmarkSet.from_dict(command["source_landmarks"])
    target = LandmarkSet.from_dict(command["target_landmarks"])
    return replace(
        session,
        registration=align(source, target),
        target_box=box_from_landmarks(target),
    )


def _set_layout(session, command):
    _require(command, "mode")
    mode = command["mode"]
    if mode not in LAYOUT_MODES:
        raise InvalidArgument(f"unknown layout mode {mode!r}")
    gap = float(command.get("gap_mm", session.layout_gap_mm))
    if gap < 0:
        raise InvalidArgument(f"gap_mm must be >= 0, got {gap}")
    return replace(session, layout_mode=mode, layout_gap_mm=gap)


def _set_camera(session, command):
    _require(command, "camera")
    return replace(session, camera=Camera.from_dict(command["camera"]))


def _set_render_settings(session, command):
    _require(command, "settings")
    return replace(session, settings=RenderSettings.from_dict(command["settings"]))


_HANDLERS = {
    "SetTF": _set_tf,
    "AddPlane": _add_plane,
    "MovePlane": _move_plane,
    "RemovePlane": _remove_plane,
    "AddNeedle": _add_needle,
    "InsertNeedle": _insert_needle,
    "RemoveNeedle": _remove_needle,
    "SetLayerVisibility": _set_layer_visibility,
    "SetRegistration": _set_registration,
    "SetLayout": _set_layout,
    "SetCamera": _set_camera,
    "SetRenderSettings": _set_render_settings,
}


def replay(session: Session, commands) -> Session:
    """Fold a command list over a session; pure given the inputs."""
    for command in commands:
        session = mutate(session, command)
    return session


# ---------------------------------------------------------------------------
# Persistence

def save(session: Session, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(session.to_dict(), f, indent=2)
        f.write("\n")


def load(path, data_root=None, verify_hashes: bool = True) -> Session:
    path = os.fspath(path)
    root = os.path.dirname(os.path.abspath(path)) if data_root is None else data_root
    with open(path, "r", encoding="utf-8") as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: {e.msg}", line=e.lineno)
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise UnsupportedVersion(
            f"{path}: schema_version {version!r} not supported (expected {SCHEMA_VERSION})"
        )

    volume_ref = AssetRef(path=d["volume"]["path"], sha256=d["volume"]["sha256"])
    volume_path = volume_ref.resolve(root)
    if verify_hashes and file_sha256(volume_path) != volume_ref.sha256:
        raise InvalidArgument(f"{volume_path}: content hash differs from session reference")
    volume = load_volume_file(volume_path)

    model = None
    model_ref = None
    if d.get("model"):
        model_ref = AssetRef(path=d["model"]["path"], sha256=d["model"]["sha256"])
        model_path = model_ref.resolve(root)
        if verify_hashes and file_sha256(model_path) != model_ref.sha256:
            raise InvalidArgument(f"{model_path}: content hash differs from session reference")
        model = load_model(model_path)

    target_box = None
    if d.get("target_box"):
        tb = d["target_box"]
        target_box = OrientedBox(
            center=np.asarray(tb["center"], dtype=np.float64),
            axes=np.asarray(tb["axes"], dtype=np.float64),
            half_extents=np.asarray(tb["half_extents"], dtype=np.float64),
        )

    lay = d.get("layout", {})
    return Session(
        id=d["id"],
        volume=volume,
        volume_ref=volume_ref,
        model=model,
        model_ref=model_ref,
        registration=(
            None if d.get("registration") is None
            else SimilarityTransform.from_dict(d["registration"])
        ),
        target_box=target_box,
        layout_mode=lay.get("mode", LAYOUT_OVERLAPPING),
        layout_gap_mm=float(lay.get("gap_mm", 50.0)),
        planes=[SlicingPlane.from_dict(p) for p in d.get("planes", [])],
        needles=[Needle.from_dict(n) for n in d.get("needles", [])],
        tf=TransferFunction1D.from_dict(d["tf"]),
        settings=RenderSettings.from_dict(d.get("settings", {})),
        camera=Camera.from_dict(d["camera"]),
        revision=int(d.get("revision", 0)),
    )


# ---------------------------------------------------------------------------
# Scene-level rendering, scoring, picking (shared by service and batch paths)

def scene_overlays(session: Session) -> Overlays:
    layer_colors = {}
    if session.model is not None:
        layer_colors = {layer.name: layer.color for layer in session.model.layers}
    meshes = [
        (mesh, layer_colors.get(name, (0.8, 0.8, 0.8)))
        for name, mesh in session.posed_layers()
    ]
    needles = [(n.base, n.tip, _NEEDLE_COLOR) for n in session.needles]
    points = []
    if session.model is not None:
        pose = session.model_pose()
        for ap in session.model.acupoints.values():
            points.append((
                acupoint_world_position(ap, pose), ap.tolerance_radius, _ACUPOINT_COLOR,
            ))
    return Overlays(meshes=meshes, needles=needles, points=points)


def render_frame(session: Session, width: int | None = None,
                 height: int | None = None, tiles: int = 1) -> Image:
    camera = session.camera
    if width is not None or height is not None:
        w = int(width or camera.image_size[0])
        h = int(height or camera.image_size[1])
        camera = Camera(
            position=camera.position, target=camera.target, up=camera.up,
            vertical_fov_deg=camera.vertical_fov_deg, image_size=(w, h),
        )
    return render(
        session.volume, session.tf, session.settings, camera,
        planes=session.planes, overlays=scene_overlays(session), tiles=tiles,
    )


def slice_image(session: Session, plane_id: str, width: int | None = None,
                height: int | None = None, needles: bool = False,
                colorize: bool = False) -> Image:
    plane = session.plane(plane_id)
    if plane.kind != PLANE_VIEW:
        raise InvalidArgument(f"plane {plane_id!r} is not a view plane")
    if width is not None or height is not None:
        d = plane.to_dict()
        d["resolution"] = [
            int(width or plane.resolution[0]), int(height or plane.resolution[1])
        ]
        plane = SlicingPlane.from_dict(d)
    image = resample_view_plane(session.volume, plane, session.tf, colorize=colorize)
    if needles:
        step = session.settings.resolve_step(session.volume)
        for needle in session.needles:
            proj = project_needle(needle, plane, step_mm=step)
            px = plane_uv_to_pixel(plane, np.stack([proj.base_2d, proj.tip_2d]))
            color = (1.0, 0.85, 0.1) if proj.highlight else (0.25, 0.95, 0.35)
            draw_segment_2d(image, px[0], px[1], color, thickness=2)
    return image


def score_needle(session: Session, needle_id: str, acupoint_name: str):
    needle = session.needle(needle_id)
    ap = session.acupoint(acupoint_name)
    step = session.settings.resolve_step(session.volume)
    crossings = traverse(
        needle,
        layers=session.posed_layers(),
        volume=session.volume,
        iso_threshold=session.settings.iso_threshold,
        step_mm=step,
    )
    avoid = session.model.avoid_layer_names() if session.model else set()
    max_depth = ap.max_safe_depth
    return score(
        needle,
        session.acupoint_world(acupoint_name),
        ap.tolerance_radius,
        max_depth,
        crossings,
        avoid_layers=avoid,
        acupoint_name=acupoint_name,
    ), crossings


def volume_histogram(session: Session, bins: int):
    return histogram(session.volume, bins)


def pick_surface(session: Session, x: float, y: float,
                 width: int, height: int) -> dict:
    """Cast the pixel ray and return the first surface point along it.

    Tries visible model layers first (nearest triangle hit), then the
    volume threshold surface. Supports needle placement from frame clicks.
    """
    from .needling import _segment_mesh_hits  # same geometry the needles use

    camera = Camera(
        position=session.camera.position, target=session.camera.target,
        up=session.camera.up, vertical_fov_deg=session.camera.vertical_fov_deg,
        image_size=(int(width), int(height)),
    )
    right, up, fwd = camera.basis
    tan_half = np.tan(np.radians(camera.vertical_fov_deg) / 2.0)
    aspect = width / height
    ndc_x = 2.0 * (x + 0.5) / width - 1.0
    ndc_y = 1.0 - 2.0 * (y + 0.5) / height
    direction = fwd + ndc_x * tan_half * aspect * right + ndc_y * tan_half * up
    direction = direction / np.linalg.norm(direction)

    best_t = np.inf
    best_source = None
    for name, mesh in session.posed_layers():
        hits = _segment_mesh_hits(camera.position, direction, 1e9, mesh)
        if hits.size and hits[0] < best_t:
            best_t = float(hits[0])
            best_source = f"layer:{name}"
    if best_source is None:
        lo, hi = session.volume.value_range
        threshold = session.settings.iso_threshold
        if threshold is None or not lo <= threshold <= hi:
            threshold = lo + 0.25 * (hi - lo)
        hit = iso_hit(
            camera.position, direction, session.volume, threshold,
            session.settings.resolve_step(session.volume),
        )
        if hit is not None:
            best_t = float(np.linalg.norm(hit[0] - camera.position))
            best_source = "volume"

    if best_source is None:
        return {"hit": False, "point": None, "direction": direction.tolist(),
                "source": None}
    point = camera.position + best_t * direction
    return {"hit": True, "point": point.tolist(),
            "direction": direction.tolist(), "source": best_source}
