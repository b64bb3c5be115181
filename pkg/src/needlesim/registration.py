"""Six-landmark bounding-box alignment.

Users mark Left/Right, Top/Bottom, Front/Back on two entities; each set
defines an oriented box, and the similarity transform that carries one box
onto the other registers the model to the scan. Scale is per-axis in the
source box frame, so boxes with different aspect ratios still coincide.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import polar
from scipy.spatial.transform import Rotation

from .errors import DegenerateLandmarks, InvalidArgument
from .ingest import Mesh, Volume

LANDMARK_LABELS = ("left", "right", "top", "bottom", "front", "back")

LAYOUT_OVERLAPPING = "overlapping"
LAYOUT_SIDE_BY_SIDE = "side_by_side"
LAYOUT_MODES = (LAYOUT_OVERLAPPING, LAYOUT_SIDE_BY_SIDE)

_MIN_AXIS_MM = 1e-6


@dataclass
class LandmarkSet:
    """The six labeled points, mm. Keys are the lowercase labels."""

    points: dict

    def __post_init__(self):
        pts = {}
        for key, value in self.points.items():
            k = key.lower()
            if k not in LANDMARK_LABELS:
                raise InvalidArgument(f"unknown landmark label {key!r}")
            pts[k] = np.asarray(value, dtype=np.float64).reshape(3)
        missing = [k for k in LANDMARK_LABELS if k not in pts]
        if missing:
            raise InvalidArgument(f"missing landmarks: {missing}")
        self.points = pts
        for a, b in (("left", "right"), ("top", "bottom"), ("front", "back")):
            if np.array_equal(pts[a], pts[b]):
                raise DegenerateLandmarks(f"{a} and {b} landmarks coincide")

    def __getitem__(self, label):
        return self.points[label.lower()]

    def as_array(self) -> np.ndarray:
        """(6,3) array in LANDMARK_LABELS order."""
        return np.stack([self.points[k] for k in LANDMARK_LABELS])

    def to_dict(self) -> dict:
        return {k: self.points[k].tolist() for k in LANDMARK_LABELS}

    @classmethod
    def from_dict(cls, d: dict) -> "LandmarkSet":
        return cls(points=dict(d))


@dataclass
class OrientedBox:
    center: np.ndarray
    axes: np.ndarray  # columns are the box axes
    half_extents: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.axes = np.asarray(self.axes, dtype=np.float64).reshape(3, 3)
        self.half_extents = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
        if not np.allclose(self.axes.T @ self.axes, np.eye(3), atol=1e-6):
            raise InvalidArgument("box axes must be orthonormal")
        if self.half_extents.min() <= 0:
            raise InvalidArgument("half extents must be positive")

    def corners(self) -> np.ndarray:
        """(8,3) world corners; bit k of the row index selects the sign of axis k."""
        signs = np.array(
            [[(-1) ** ((i >> k) & 1 ^ 1) for k in range(3)] for i in range(8)],
            dtype=np.float64,
        )
        return self.center + (signs * self.half_extents) @ self.axes.T


def _quat_wxyz(rotation: Rotation) -> np.ndarray:
    x, y, z, w = rotation.as_quat()
    return np.array([w, x, y, z])


def _rotation_from_wxyz(q) -> Rotation:
    w, x, y, z = np.asarray(q, dtype=np.float64).reshape(4)
    return Rotation.from_quat([x, y, z, w])


@dataclass
class SimilarityTransform:
    """translation + rotation + per-axis scale, scale applied in scale_frame.

    A point maps as p' = R · F·diag(s)·Fᵀ · p + t with R the rotation,
    F the scale frame (both stored as unit quaternions, wxyz order).
    """

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))
    scale: np.ndarray = field(default_factory=lambda: np.ones(3))
    scale_frame: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        self.scale_frame = np.asarray(self.scale_frame, dtype=np.float64).reshape(4)
        for name, q in (("rotation", self.rotation), ("scale_frame", self.scale_frame)):
            norm = np.linalg.norm(q)
            if abs(norm - 1.0) > 1e-9:
                raise InvalidArgument(f"{name} quaternion must be unit length")
        if self.scale.min() <= 0:
            raise InvalidArgument("scales must be positive")

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls()

    @classmethod
    def from_affine(cls, linear, translation) -> "SimilarityTransform":
        """Factor an invertible linear map by polar decomposition."""
        linear = np.asarray(linear, dtype=np.float64).reshape(3, 3)
        rot_mat, stretch = polar(linear)
        if np.linalg.det(rot_mat) < 0:
            raise InvalidArgument("linear part contains a reflection")
        evals, evecs = np.linalg.eigh(stretch)
        if evals.min() <= 0:
            raise InvalidArgument("linear part is singular")
        if np.linalg.det(evecs) < 0:
            evecs = evecs.copy()
            evecs[:, 0] = -evecs[:, 0]
        return cls(
            translation=np.asarray(translation, dtype=np.float64),
            rotation=_quat_wxyz(Rotation.from_matrix(rot_mat)),
            scale=evals,
            scale_frame=_quat_wxyz(Rotation.from_matrix(evecs)),
        )

    @property
    def linear(self) -> np.ndarray:
        R = _rotation_from_wxyz(self.rotation).as_matrix()
        F = _rotation_from_wxyz(self.scale_frame).as_matrix()
        return R @ F @ np.diag(self.scale) @ F.T

    def is_identity(self, tol=1e-12) -> bool:
        return (
            np.allclose(self.linear, np.eye(3), atol=tol)
            and np.allclose(self.translation, 0.0, atol=tol)
        )

    def to_dict(self) -> dict:
        return {
            "t": self.translation.tolist(),
            "q": self.rotation.tolist(),
            "s": self.scale.tolist(),
            "f": self.scale_frame.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimilarityTransform":
        return cls(
            translation=np.asarray(d["t"], dtype=np.float64),
            rotation=np.asarray(d["q"], dtype=np.float64),
            scale=np.asarray(d["s"], dtype=np.float64),
            scale_frame=np.asarray(d.get("f", [1.0, 0, 0, 0]), dtype=np.float64),
        )


def box_from_landmarks(lms: LandmarkSet) -> OrientedBox:
    """Oriented box spanned by the three landmark pairs.

    Raw axes are Right−Left, Top−Bottom, Front−Back, orthonormalized in
    that fixed order; half extents keep the raw (pre-orthonormalization)
    pair distances so the box size matches what the user picked.
    """
    u = lms["right"] - lms["left"]
    v = lms["top"] - lms["bottom"]
    w = lms["front"] - lms["back"]
    lengths = np.array([np.linalg.norm(u), np.linalg.norm(v), np.linalg.norm(w)])
    if lengths.min() < _MIN_AXIS_MM:
        raise DegenerateLandmarks(
            f"landmark pair closer than {_MIN_AXIS_MM} mm (axis lengths {lengths})"
        )
    e1 = u / lengths[0]
    v2 = v - (v @ e1) * e1
    n2 = np.linalg.norm(v2)
    if n2 < _MIN_AXIS_MM:
        raise DegenerateLandmarks("top-bottom axis parallel to left-right axis")
    e2 = v2 / n2
    w3 = w - (w @ e1) * e1 - (w @ e2) * e2
    n3 = np.linalg.norm(w3)
    if n3 < _MIN_AXIS_MM:
        raise DegenerateLandmarks("front-back axis lies in the left-right/top-bottom plane")
    e3 = w3 / n3
    return OrientedBox(
        center=lms.as_array().mean(axis=0),
        axes=np.stack([e1, e2, e3], axis=1),
        half_extents=lengths / 2.0,
    )


def align(source: LandmarkSet, target: LandmarkSet) -> SimilarityTransform:
    """Similarity transform carrying the source box onto the target box.

    Composition on a point: subtract source center, scale per axis in the
    source box frame, rotate source axes onto target axes, add target
    center. Corner k of the source box lands on corner k of the target.
    """
    src = box_from_landmarks(source)
    tgt = box_from_landmarks(target)
    if np.linalg.det(src.axes) * np.linalg.det(tgt.axes) < 0:
        raise DegenerateLandmarks("landmark sets have opposite handedness")
    rot_mat = tgt.axes @ src.axes.T
    scale = tgt.half_extents / src.half_extents
    linear = tgt.axes @ np.diag(scale) @ src.axes.T
    return SimilarityTransform(
        translation=tgt.center - linear @ src.center,
        rotation=_quat_wxyz(Rotation.from_matrix(rot_mat)),
        scale=scale,
        scale_frame=_quat_wxyz(Rotation.from_matrix(src.axes)),
    )


def compose(outer: SimilarityTransform, inner: SimilarityTransform) -> SimilarityTransform:
    """Transform equal to applying ``inner`` first, then ``outer``."""
    linear = outer.linear @ inner.linear
    translation = outer.linear @ inner.translation + outer.translation
    return SimilarityTransform.from_affine(linear, translation)


def apply(t: SimilarityTransform, geometry):
    """Map a point, an (N,3) point array, a Mesh, or a Volume pose.

    Volumes are never resampled: only origin and orientation move, and the
    per-axis scale folds into spacing. A transform whose scale would shear
    the voxel grid (anisotropic scale oblique to the grid axes) is rejected.
    """
    M = t.linear
    if isinstance(geometry, Mesh):
        vertices = geometry.vertices @ M.T + t.translation
        normals = None
        if geometry.normals is not None:
            inv_t = np.linalg.inv(M).T
            normals = geometry.normals @ inv_t.T
            normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
        return Mesh(vertices=vertices, triangles=geometry.triangles.copy(), normals=normals)
    if isinstance(geometry, Volume):
        jac = M @ (geometry.orientation * np.asarray(geometry.spacing))
        gram = jac.T @ jac
        off = gram - np.diag(np.diag(gram))
        if np.abs(off).max() > 1e-9 * np.abs(np.diag(gram)).max():
            raise InvalidArgument("transform would shear the voxel grid")
        spacing = np.sqrt(np.diag(gram))
        return Volume(
            dims=geometry.dims,
            spacing=tuple(spacing),
            origin=M @ geometry.origin + t.translation,
            orientation=jac / spacing,
            scalars=geometry.scalars,
            value_range=geometry.value_range,
            modality=geometry.modality,
        )
    p = np.asarray(geometry, dtype=np.float64)
    return p @ M.T + t.translation


def layout(mode: str, t: SimilarityTransform, target_box: OrientedBox,
           gap_mm: float = 50.0) -> SimilarityTransform:
    """Final model pose for the chosen presentation mode.

    Overlapping keeps the registration pose. Side-by-side shifts the model
    one full target-box width plus the gap along the target's first axis,
    which separates the boxes along that axis by construction.
    """
    if mode not in LAYOUT_MODES:
        raise InvalidArgument(f"unknown layout mode {mode!r}")
    if mode == LAYOUT_OVERLAPPING:
        return t
    if gap_mm < 0:
        raise InvalidArgument(f"gap_mm must be >= 0, got {gap_mm}")
    offset = (2.0 * target_box.half_extents[0] + gap_mm) * target_box.axes[:, 0]
    return SimilarityTransform(
        translation=t.translation + offset,
        rotation=t.rotation.copy(),
        scale=t.scale.copy(),
        scale_frame=t.scale_frame.copy(),
    )
