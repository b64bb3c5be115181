"""Needle placement, projection onto view planes, traversal, and scoring.

A needle is a zero-width segment of fixed clinical length. Insertion fixes
its pose from a skin entry point, a direction, and a depth; the un-inserted
shaft stays outside the skin. Traversal reports which anatomy layers the
inserted segment passes through and scoring compares the tip against an
acupoint's tolerance sphere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, InvalidDepth
from .ingest import Mesh, Volume
from .render import SlicingPlane, sample

NEEDLE_LENGTHS_MM = (15.0, 25.0, 40.0, 75.0)

VOLUME_ISO_LABEL = "volume_iso"


def _unit(v, what):
    v = np.asarray(v, dtype=np.float64).reshape(3)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise InvalidArgument(f"{what} must be a nonzero vector")
    return v / n


@dataclass
class Needle:
    """Clinical needle as a directed segment; tip = base + length·direction."""

    id: str
    length_mm: float
    base: np.ndarray
    direction: np.ndarray
    inserted_depth_mm: float = 0.0

    def __post_init__(self):
        self.length_mm = float(self.length_mm)
        if self.length_mm not in NEEDLE_LENGTHS_MM:
            raise InvalidArgument(
                f"length_mm must be one of {NEEDLE_LENGTHS_MM}, got {self.length_mm}"
            )
        self.base = np.asarray(self.base, dtype=np.float64).reshape(3)
        self.direction = _unit(self.direction, "direction")
        self.inserted_depth_mm = float(self.inserted_depth_mm)
        if not 0.0 <= self.inserted_depth_mm <= self.length_mm:
            raise InvalidDepth(
                f"depth {self.inserted_depth_mm} outside [0, {self.length_mm}]"
            )

    @property
    def tip(self) -> np.ndarray:
        return self.base + self.length_mm * self.direction

    @property
    def entry_point(self) -> np.ndarray:
        """Where the shaft meets the skin: depth_mm behind the tip."""
        return self.tip - self.inserted_depth_mm * self.direction

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "length_mm": self.length_mm,
            "base": self.base.tolist(),
            "dir": self.direction.tolist(),
            "depth_mm": self.inserted_depth_mm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Needle":
        return cls(
            id=d["id"],
            length_mm=d["length_mm"],
            base=np.asarray(d["base"], dtype=np.float64),
            direction=np.asarray(d["dir"], dtype=np.float64),
            inserted_depth_mm=d.get("depth_mm", 0.0),
        )


@dataclass
class ProjectedNeedle:
    plane_id: str
    tip_2d: np.ndarray
    base_2d: np.ndarray
    highlight: bool


@dataclass
class LayerCrossing:
    layer: str
    entry_depth_mm: float
    exit_depth_mm: float | None = None

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "entry_depth_mm": self.entry_depth_mm,
            "exit_depth_mm": self.exit_depth_mm,
        }


@dataclass
class ScoreReport:
    needle_id: str
    acupoint: str | None
    tip_distance_mm: float
    hit: bool
    depth_violation: bool
    forbidden_contacts: list = field(default_factory=list)
    shallow_angle: bool | None = None

    def to_dict(self) -> dict:
        return {
            "needle_id": self.needle_id,
            "acupoint": self.acupoint,
            "tip_distance_mm": self.tip_distance_mm,
            "hit": self.hit,
            "depth_violation": self.depth_violation,
            "forbidden_contacts": list(self.forbidden_contacts),
            "shallow_angle": self.shallow_angle,
        }


def insert_needle(needle: Needle, skin_entry, direction, depth_mm: float) -> Needle:
    """Re-pose a needle: tip goes depth_mm past the entry point.

    tip = entry + depth·direction and base = entry − (length − depth)·
    direction, so |tip − base| stays exactly length_mm at every depth.
    """
    depth_mm = float(depth_mm)
    if not 0.0 <= depth_mm <= needle.length_mm:
        raise InvalidDepth(
            f"depth {depth_mm} outside [0, {needle.length_mm}] for needle {needle.id!r}"
        )
    direction = _unit(direction, "direction")
    skin_entry = np.asarray(skin_entry, dtype=np.float64).reshape(3)
    return Needle(
        id=needle.id,
        length_mm=needle.length_mm,
        base=skin_entry - (needle.length_mm - depth_mm) * direction,
        direction=direction,
        inserted_depth_mm=depth_mm,
    )


def project_point_to_plane(v, plane: SlicingPlane) -> np.ndarray:
    """Closest point on the plane: v − ((v − p_p)·p_n)·p_n."""
    v = np.asarray(v, dtype=np.float64)
    d = (v - plane.p_p) @ plane.p_n
    return v - np.multiply.outer(d, plane.p_n)


def project_needle(needle: Needle, plane: SlicingPlane, step_mm: float = 1.0) -> ProjectedNeedle:
    """Tip and base dropped onto the plane, in plane-local (u,v) mm.

    ``highlight`` flags a 3D tip within 2 step lengths of the plane, the
    near-plane emphasis slice views use.
    """
    def local(point):
        p = project_point_to_plane(point, plane)
        rel = p - plane.p_p
        return np.array([rel @ plane.axis_u, rel @ plane.axis_v])

    tip_gap = abs((needle.tip - plane.p_p) @ plane.p_n)
    return ProjectedNeedle(
        plane_id=plane.id,
        tip_2d=local(needle.tip),
        base_2d=local(needle.base),
        highlight=bool(tip_gap <= 2.0 * step_mm),
    )


def _segment_mesh_hits(origin, direction, t_max, mesh: Mesh) -> np.ndarray:
    """Sorted parameter values where the segment crosses mesh triangles."""
    v0 = mesh.vertices[mesh.triangles[:, 0]]
    e1 = mesh.vertices[mesh.triangles[:, 1]] - v0
    e2 = mesh.vertices[mesh.triangles[:, 2]] - v0
    h = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, h)
    ok = np.abs(det) > 1e-12
    inv = np.zeros_like(det)
    inv[ok] = 1.0 / det[ok]
    s = origin - v0
    u = np.einsum("ij,ij->i", s, h) * inv
    q = np.cross(s, e1)
    v = (q @ direction) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    ok &= (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t >= 0.0) & (t <= t_max)
    hits = np.sort(t[ok])
    if hits.size > 1:
        keep = np.concatenate([[True], np.diff(hits) > 1e-9])
        hits = hits[keep]
    return hits


def _pair_hits(label, hits) -> list:
    crossings = []
    for k in range(0, len(hits) - 1, 2):
        crossings.append(LayerCrossing(label, float(hits[k]), float(hits[k + 1])))
    if len(hits) % 2 == 1:
        # odd crossing count: the tip ends inside this layer
        crossings.append(LayerCrossing(label, float(hits[-1]), None))
    return crossings


def _volume_crossings(origin, direction, depth, volume: Volume,
                      threshold: float, step_mm: float) -> list:
    n = int(math.ceil(depth / (step_mm / 4.0))) + 1
    s = np.linspace(0.0, depth, max(n, 2))
    values = sample(volume, origin + s[:, None] * direction)
    inside = values > threshold
    crossings = []
    entry = 0.0 if inside[0] else None
    for i in np.nonzero(inside[:-1] != inside[1:])[0]:
        frac = (threshold - values[i]) / (values[i + 1] - values[i])
        at = float(s[i] + frac * (s[i + 1] - s[i]))
        if inside[i + 1]:
            entry = at
        else:
            crossings.append(LayerCrossing(VOLUME_ISO_LABEL, entry, at))
            entry = None
    if entry is not None:
        crossings.append(LayerCrossing(VOLUME_ISO_LABEL, entry, None))
    return crossings


def traverse(needle: Needle, layers=(), volume: Volume | None = None,
             iso_threshold: float | None = None, step_mm: float = 1.0) -> list:
    """Layer crossings along the inserted segment, sorted by entry depth.

    ``layers`` is an iterable of (name, world-space Mesh). Mesh crossings
    pair boundary hits by parity; an odd count means the tip ends inside and
    the final crossing has no exit. Volume crossings track the threshold
    sign of intensities sampled every step_mm/4.
    """
    depth = needle.inserted_depth_mm
    if depth <= 0.0:
        return []
    origin = needle.entry_point
    crossings = []
    for name, mesh in layers:
        hits = _segment_mesh_hits(origin, needle.direction, depth, mesh)
        crossings.extend(_pair_hits(name, hits))
    if volume is not None and iso_threshold is not None:
        crossings.extend(
            _volume_crossings(origin, needle.direction, depth, volume,
                              iso_threshold, step_mm)
        )
    crossings.sort(key=lambda c: c.entry_depth_mm)
    return crossings


def score(needle: Needle, acupoint_world, tolerance_radius: float,
          max_safe_depth: float | None, crossings,
          avoid_layers=(), acupoint_name: str | None = None,
          skin_normal=None, shallow_angle_max_deg: float = 30.0) -> ScoreReport:
    """Accuracy report for one placed needle against one target point.

    ``shallow_angle`` is only evaluated when a skin normal at the entry
    point is supplied: it is true when the shaft runs within
    shallow_angle_max_deg of the skin tangent plane (threading technique).
    """
    acupoint_world = np.asarray(acupoint_world, dtype=np.float64).reshape(3)
    distance = float(np.linalg.norm(needle.tip - acupoint_world))
    avoid = set(avoid_layers)
    forbidden = []
    for c in crossings:
        if c.layer in avoid and c.layer not in forbidden:
            forbidden.append(c.layer)
    shallow = None
    if skin_normal is not None:
        normal = _unit(skin_normal, "skin_normal")
        to_tangent = 90.0 - math.degrees(
            math.acos(min(1.0, abs(float(needle.direction @ normal))))
        )
        shallow = bool(to_tangent < shallow_angle_max_deg)
    return ScoreReport(
        needle_id=needle.id,
        acupoint=acupoint_name,
        tip_distance_mm=distance,
        hit=bool(distance <= tolerance_radius),
        depth_violation=bool(
            max_safe_depth is not None and needle.inserted_depth_mm > max_safe_depth
        ),
        forbidden_contacts=forbidden,
        shallow_angle=shallow,
    )
