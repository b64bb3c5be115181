"""Software volume renderer.

Three ray-casting methods over one marching loop: front-to-back compositing
(dvr), per-ray maximum (mip), and first-hit threshold surface (iso).
Cut-out planes remove half-spaces from the volume; view planes resample it
into flat slice images. Frames are split into row bands rendered on worker
threads; pixels are independent, so the image is bitwise identical whatever
the band count.
"""

from __future__ import annotations

import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as _PILImage

from . import _raycast
from .errors import InvalidArgument
from .ingest import Mesh, Volume
from .transfer import TransferFunction1D, build_lut, lut_coordinate, lut_window_params

METHOD_DVR = "dvr"
METHOD_MIP = "mip"
METHOD_ISO = "iso"
RENDER_METHODS = (METHOD_DVR, METHOD_MIP, METHOD_ISO)

PLANE_CUTOUT = "cutout"
PLANE_VIEW = "view"
PLANE_KINDS = (PLANE_CUTOUT, PLANE_VIEW)

MAX_IMAGE_DIM = 16384

_METHOD_CODES = {
    METHOD_DVR: _raycast.METHOD_DVR,
    METHOD_MIP: _raycast.METHOD_MIP,
    METHOD_ISO: _raycast.METHOD_ISO,
}


def _unit(v, what):
    v = np.asarray(v, dtype=np.float64).reshape(3)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise InvalidArgument(f"{what} must be a nonzero vector")
    return v / n


@dataclass
class Camera:
    position: np.ndarray
    target: np.ndarray
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    vertical_fov_deg: float = 45.0
    image_size: tuple = (512, 512)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.target = np.asarray(self.target, dtype=np.float64).reshape(3)
        if np.array_equal(self.position, self.target):
            raise InvalidArgument("camera position and target coincide")
        self.up = _unit(self.up, "up")
        if not 0.0 < self.vertical_fov_deg < 180.0:
            raise InvalidArgument(f"fov must be in (0,180), got {self.vertical_fov_deg}")
        w, h = self.image_size
        if w < 1 or h < 1:
            raise InvalidArgument(f"image size must be >= 1x1, got {self.image_size}")
        self.image_size = (int(w), int(h))
        fwd = self.target - self.position
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, self.up)
        n = np.linalg.norm(right)
        if n < 1e-9:
            raise InvalidArgument("up vector is parallel to the view direction")
        self._fwd = fwd
        self._right = right / n
        self._up = np.cross(self._right, fwd)

    @property
    def basis(self):
        """(right, up, forward) orthonormal world vectors."""
        return self._right, self._up, self._fwd

    def to_dict(self) -> dict:
        return {
            "position": self.position.tolist(),
            "target": self.target.tolist(),
            "up": self.up.tolist(),
            "fov": self.vertical_fov_deg,
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            position=np.asarray(d["position"], dtype=np.float64),
            target=np.asarray(d["target"], dtype=np.float64),
            up=np.asarray(d.get("up", [0.0, 0.0, 1.0]), dtype=np.float64),
            vertical_fov_deg=float(d.get("fov", 45.0)),
            image_size=tuple(d.get("image_size", (512, 512))),
        )


@dataclass
class RenderSettings:
    method: str = METHOD_DVR
    iso_threshold: float | None = None
    step_mm: float | None = None  # None: half the smallest voxel spacing
    lighting_enabled: bool = True
    early_termination_alpha: float = 0.99
    background: tuple = (0.0, 0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.method not in RENDER_METHODS:
            raise InvalidArgument(f"unknown render method {self.method!r}")
        if self.step_mm is not None and self.step_mm <= 0:
            raise InvalidArgument(f"step_mm must be positive, got {self.step_mm}")
        if not 0.0 < self.early_termination_alpha <= 1.0:
            raise InvalidArgument("early_termination_alpha must be in (0,1]")
        bg = tuple(float(c) for c in self.background)
        if len(bg) != 4:
            raise InvalidArgument("background must be rgba")
        self.background = bg

    def resolve_step(self, volume: Volume) -> float:
        if self.step_mm is not None:
            return float(self.step_mm)
        return 0.5 * min(volume.spacing)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "iso_threshold": self.iso_threshold,
            "step_mm": self.step_mm,
            "lighting_enabled": self.lighting_enabled,
            "early_termination_alpha": self.early_termination_alpha,
            "background": list(self.background),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RenderSettings":
        return cls(
            method=d.get("method", METHOD_DVR),
            iso_threshold=d.get("iso_threshold"),
            step_mm=d.get("step_mm"),
            lighting_enabled=bool(d.get("lighting_enabled", True)),
            early_termination_alpha=float(d.get("early_termination_alpha", 0.99)),
            background=tuple(d.get("background", (0.0, 0.0, 0.0, 1.0))),
        )


def _plane_axes_for(normal: np.ndarray):
    """Deterministic in-plane basis for a normal when none is given."""
    helper = np.array([0.0, 0.0, 1.0])
    if abs(normal @ helper) > 0.9:
        helper = np.array([1.0, 0.0, 0.0])
    axis_u = np.cross(helper, normal)
    axis_u = axis_u / np.linalg.norm(axis_u)
    return axis_u, np.cross(normal, axis_u)


@dataclass
class SlicingPlane:
    """Oriented plane used either to cut the volume open or to slice it."""

    id: str
    kind: str
    p_p: np.ndarray
    p_n: np.ndarray
    axis_u: np.ndarray | None = None
    axis_v: np.ndarray | None = None
    extent_mm: tuple = (200.0, 200.0)
    resolution: tuple = (256, 256)

    def __post_init__(self):
        if self.kind not in PLANE_KINDS:
            raise InvalidArgument(f"plane kind must be one of {PLANE_KINDS}")
        self.p_p = np.asarray(self.p_p, dtype=np.float64).reshape(3)
        self.p_n = _unit(self.p_n, "plane normal")
        if self.axis_u is None or self.axis_v is None:
            self.axis_u, self.axis_v = _plane_axes_for(self.p_n)
        else:
            self.axis_u = np.asarray(self.axis_u, dtype=np.float64).reshape(3)
            self.axis_v = np.asarray(self.axis_v, dtype=np.float64).reshape(3)
            frame = np.stack([self.axis_u, self.axis_v, self.p_n])
            if not np.allclose(frame @ frame.T, np.eye(3), atol=1e-6):
                raise InvalidArgument("plane axes must be orthonormal and normal to p_n")
        we, he = self.extent_mm
        if we <= 0 or he <= 0:
            raise InvalidArgument(f"extent must be positive, got {self.extent_mm}")
        self.extent_mm = (float(we), float(he))
        ru, rv = self.resolution
        if ru < 1 or rv < 1:
            raise InvalidArgument(f"resolution must be >= 1, got {self.resolution}")
        self.resolution = (int(ru), int(rv))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "p": self.p_p.tolist(),
            "n": self.p_n.tolist(),
            "axes": [self.axis_u.tolist(), self.axis_v.tolist()],
            "extent": list(self.extent_mm),
            "resolution": list(self.resolution),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SlicingPlane":
        axes = d.get("axes")
        return cls(
            id=d["id"],
            kind=d["kind"],
            p_p=np.asarray(d["p"], dtype=np.float64),
            p_n=np.asarray(d["n"], dtype=np.float64),
            axis_u=None if axes is None else np.asarray(axes[0], dtype=np.float64),
            axis_v=None if axes is None else np.asarray(axes[1], dtype=np.float64),
            extent_mm=tuple(d.get("extent", (200.0, 200.0))),
            resolution=tuple(d.get("resolution", (256, 256))),
        )


@dataclass
class Image:
    size: tuple                      # (width, height)
    pixels: np.ndarray = field(repr=False)  # (height, width, 4) float32 in [0,1]

    def to_uint8(self) -> np.ndarray:
        return (np.clip(self.pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        _PILImage.fromarray(self.to_uint8(), "RGBA").save(buf, format="PNG")
        return buf.getvalue()

    def save(self, path) -> None:
        path = os.fspath(path)
        ext = os.path.splitext(path)[1].lower()
        if ext == ".png":
            with open(path, "wb") as f:
                f.write(self.to_png_bytes())
        elif ext == ".ppm":
            rgb = self.to_uint8()[:, :, :3]
            with open(path, "wb") as f:
                f.write(b"P6\n%d %d\n255\n" % (self.size[0], self.size[1]))
                f.write(rgb.tobytes())
        else:
            raise InvalidArgument(f"unsupported image extension {ext!r} (png, ppm)")


@dataclass
class Overlays:
    """Geometry rasterized over the volume pass with a shared depth test.

    meshes: (Mesh in world space, rgb); needles: (base, tip, rgb) world
    segments; points: (center, radius_mm, rgb) spheres drawn as discs.
    """

    meshes: list = field(default_factory=list)
    needles: list = field(default_factory=list)
    points: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Reference-path operations (scalar/numpy; the kernels reimplement these)

def sample(volume: Volume, p):
    """Trilinear world-space sampling; zero outside the voxel-center hull."""
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    pts = np.atleast_2d(p)
    idx = ((pts - volume.origin) @ volume.orientation) / np.asarray(volume.spacing)
    nx, ny, nz = volume.dims
    hi = np.array([nx - 1, ny - 1, nz - 1], dtype=np.float64)
    inside = np.all((idx >= 0.0) & (idx <= hi), axis=1)
    out = np.zeros(len(pts))
    if np.any(inside):
        q = idx[inside]
        i0 = np.minimum(q.astype(np.int64), np.maximum(hi.astype(np.int64) - 1, 0))
        f = q - i0
        i1 = np.minimum(i0 + 1, hi.astype(np.int64))
        g = volume.grid
        vals = np.zeros(len(q))
        for dz in (0, 1):
            for dy in (0, 1):
                for dx in (0, 1):
                    ii = i1[:, 0] if dx else i0[:, 0]
                    jj = i1[:, 1] if dy else i0[:, 1]
                    kk = i1[:, 2] if dz else i0[:, 2]
                    wgt = (
                        (f[:, 0] if dx else 1.0 - f[:, 0])
                        * (f[:, 1] if dy else 1.0 - f[:, 1])
                        * (f[:, 2] if dz else 1.0 - f[:, 2])
                    )
                    vals += wgt * g[kk, jj, ii]
        out[inside] = vals
    return float(out[0]) if single else out


def composite_dvr(samples, early_termination_alpha: float = 1.0):
    """Front-to-back compositing of (rgba, lighting) pairs.

    Opacities must already be step-corrected. Returns (rgb, alpha) to be
    blended over the background by the caller.
    """
    color = np.zeros(3)
    alpha = 0.0
    for rgba, ell in samples:
        if alpha >= early_termination_alpha:
            break
        a = rgba[3]
        w = (1.0 - alpha) * a
        color += w * ell * np.asarray(rgba[:3], dtype=np.float64)
        alpha += w
    return color, alpha


def mip(samples, background: float = -np.inf) -> float:
    """Per-ray maximum; the background sentinel stands in for an empty ray."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        return float(background)
    return float(samples.max())


def clip(p, cutout_planes) -> bool | np.ndarray:
    """True where the point survives every cut-out half-space."""
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    pts = np.atleast_2d(p)
    keep = np.ones(len(pts), dtype=bool)
    for plane in cutout_planes:
        keep &= ((pts - plane.p_p) @ plane.p_n) <= 0.0
    return bool(keep[0]) if single else keep


def iso_hit(origin, direction, volume: Volume, threshold: float,
            step_mm: float):
    """First point along the ray where intensity rises through the threshold.

    Returns (hit point, unit gradient) or None. The crossing bracket is
    narrowed by 8 bisection steps, so the hit lies within step_mm/256 of
    the true surface for monotone brackets.
    """
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    direction = _unit(direction, "direction")
    m = (volume.orientation / np.asarray(volume.spacing)).T  # diag(1/s) Rᵀ
    o_idx = m @ (origin - volume.origin)
    d_idx = m @ direction
    t0, t1 = -np.inf, np.inf
    for k in range(3):
        lo, hi = 0.0, volume.dims[k] - 1.0
        if abs(d_idx[k]) > 1e-12:
            ta, tb = (lo - o_idx[k]) / d_idx[k], (hi - o_idx[k]) / d_idx[k]
            if ta > tb:
                ta, tb = tb, ta
            t0, t1 = max(t0, ta), min(t1, tb)
        elif not lo <= o_idx[k] <= hi:
            return None
    t0 = max(t0, 0.0)
    if t1 < t0:
        return None

    ts = np.arange(t0, t1 + step_mm * 0.5, step_mm)
    ts = ts[ts <= t1]
    if ts.size == 0:
        ts = np.array([t0])
    vals = sample(volume, origin + ts[:, None] * direction)
    above = vals > threshold
    if above[0]:
        hit_t = ts[0]
    else:
        rising = np.nonzero(~above[:-1] & above[1:])[0]
        if rising.size == 0:
            return None
        lo_t, hi_t = ts[rising[0]], ts[rising[0] + 1]
        for _ in range(8):
            mid = 0.5 * (lo_t + hi_t)
            if sample(volume, origin + mid * direction) > threshold:
                hi_t = mid
            else:
                lo_t = mid
        hit_t = 0.5 * (lo_t + hi_t)

    hit = origin + hit_t * direction
    h = np.asarray(volume.spacing, dtype=np.float64)
    grad = np.zeros(3)
    for k in range(3):
        e = volume.orientation[:, k] * h[k]
        grad_k = (sample(volume, hit + e) - sample(volume, hit - e)) / (2.0 * h[k])
        grad += grad_k * volume.orientation[:, k]
    n = np.linalg.norm(grad)
    if n < 1e-12:
        return hit, np.zeros(3)
    return hit, grad / n


# ---------------------------------------------------------------------------
# Frame rendering

def _camera_arrays(camera: Camera):
    right, up, fwd = camera.basis
    w, h = camera.image_size
    tan_half = math.tan(math.radians(camera.vertical_fov_deg) / 2.0)
    aspect = w / h
    return right, up, fwd, tan_half, aspect


def _clip_arrays(volume: Volume, planes):
    cutouts = [p for p in planes if p.kind == PLANE_CUTOUT]
    a = np.zeros((len(cutouts), 3))
    b = np.zeros(len(cutouts))
    s = np.asarray(volume.spacing)
    for i, plane in enumerate(cutouts):
        a[i] = s * (volume.orientation.T @ plane.p_n)
        b[i] = (volume.origin - plane.p_p) @ plane.p_n
    return a, b


def _iso_color(tf: TransferFunction1D, lut, threshold: float, value_range):
    coord = lut_coordinate(tf, threshold, value_range)
    li = int(round(coord * (lut.shape[0] - 1)))
    return float(lut[li, 0]), float(lut[li, 1]), float(lut[li, 2])


def render(volume: Volume, tf: TransferFunction1D, settings: RenderSettings,
           camera: Camera, planes=(), overlays: Overlays | None = None,
           tiles: int = 1) -> Image:
    """Ray-cast one frame, then rasterize overlays against its depth buffer."""
    w, h = camera.image_size
    if w > MAX_IMAGE_DIM or h > MAX_IMAGE_DIM:
        raise InvalidArgument(f"image exceeds {MAX_IMAGE_DIM} pixels per side")
    step = settings.resolve_step(volume)
    iso_raw = 0.0
    iso_rgb = (1.0, 1.0, 1.0)
    lut = build_lut(tf).entries
    if settings.method == METHOD_ISO:
        if settings.iso_threshold is None:
            raise InvalidArgument("iso rendering needs iso_threshold")
        lo, hi = volume.value_range
        if not lo <= settings.iso_threshold <= hi:
            raise InvalidArgument(
                f"iso_threshold {settings.iso_threshold} outside value range ({lo}, {hi})"
            )
        iso_raw = float(settings.iso_threshold)
        iso_rgb = _iso_color(tf, lut, iso_raw, volume.value_range)

    right, up, fwd, tan_half, aspect = _camera_arrays(camera)
    m = (volume.orientation / np.asarray(volume.spacing)).T
    m = np.ascontiguousarray(m)
    eye_idx = m @ (camera.position - volume.origin)
    use_window, win_min, win_max, cscale, coffset, clo, chi = lut_window_params(
        tf, volume.value_range
    )
    clip_a, clip_b = _clip_arrays(volume, planes)
    grid = np.ascontiguousarray(volume.grid)
    bg = np.asarray(settings.background, dtype=np.float64)
    out = np.zeros((h, w, 4), dtype=np.float32)
    depth = np.zeros((h, w), dtype=np.float32)
    method = _METHOD_CODES[settings.method]

    def run_band(y_lo, y_hi):
        _raycast.raycast_tile(
            grid, m, eye_idx, camera.position, right, up, fwd, tan_half, aspect,
            lut, use_window, win_min, win_max, cscale, coffset, clo, chi,
            method, iso_raw, iso_rgb[0], iso_rgb[1], iso_rgb[2],
            step, settings.early_termination_alpha, settings.lighting_enabled,
            clip_a, clip_b, bg, out, depth, 0, w, y_lo, y_hi,
        )

    tiles = max(1, min(int(tiles), h))
    if tiles == 1:
        run_band(0, h)
    else:
        bounds = np.linspace(0, h, tiles + 1).astype(int)
        with ThreadPoolExecutor(max_workers=tiles) as pool:
            futures = [
                pool.submit(run_band, bounds[k], bounds[k + 1]) for k in range(tiles)
            ]
            for f in futures:
                f.result()

    if overlays is not None:
        _draw_overlays(out, depth, camera, overlays)
    return Image(size=(w, h), pixels=out)


def _project(camera: Camera, pts: np.ndarray):
    """Screen coordinates, forward depth, and eye distance of world points."""
    right, up, fwd, tan_half, aspect = _camera_arrays(camera)
    w, h = camera.image_size
    rel = np.atleast_2d(pts) - camera.position
    xc = rel @ right
    yc = rel @ up
    zc = rel @ fwd
    dist = np.linalg.norm(rel, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = (xc / (zc * tan_half * aspect) + 1.0) * w / 2.0 - 0.5
        sy = (1.0 - yc / (zc * tan_half)) * h / 2.0 - 0.5
    return sx, sy, zc, dist


def _draw_overlays(out, depth, camera: Camera, overlays: Overlays):
    right, up, fwd, tan_half, aspect = _camera_arrays(camera)
    w, h = camera.image_size

    for mesh, color in overlays.meshes:
        if mesh.triangles.size == 0:
            continue
        rel = mesh.vertices - camera.position
        cam_pts = np.stack([rel @ right, rel @ up, rel @ fwd], axis=1)
        sx, sy, _, _ = _project(camera, mesh.vertices)
        v0 = mesh.vertices[mesh.triangles[:, 0]]
        e1 = mesh.vertices[mesh.triangles[:, 1]] - v0
        e2 = mesh.vertices[mesh.triangles[:, 2]] - v0
        normals = np.cross(e1, e2)
        lengths = np.linalg.norm(normals, axis=1, keepdims=True)
        lengths[lengths < 1e-12] = 1.0
        normals = normals / lengths
        centroids = (
            v0 + mesh.vertices[mesh.triangles[:, 1]] + mesh.vertices[mesh.triangles[:, 2]]
        ) / 3.0
        _raycast.raster_mesh(
            np.ascontiguousarray(cam_pts), np.ascontiguousarray(sx),
            np.ascontiguousarray(sy), np.ascontiguousarray(mesh.triangles),
            np.ascontiguousarray(normals), np.ascontiguousarray(centroids),
            float(color[0]), float(color[1]), float(color[2]),
            camera.position, out, depth,
        )

    bias = 0.5  # mm of depth slack so surface-hugging overlays stay visible
    for base, tip, color in overlays.needles:
        base = np.asarray(base, dtype=np.float64)
        tip = np.asarray(tip, dtype=np.float64)
        sx, sy, zc, _ = _project(camera, np.stack([base, tip]))
        if np.any(~np.isfinite(sx)):
            continue
        px_len = float(np.hypot(sx[1] - sx[0], sy[1] - sy[0]))
        n = int(min(max(px_len * 2.0, 2.0), 8192.0))
        s = np.linspace(0.0, 1.0, n)[:, None]
        pts = base + s * (tip - base)
        sx, sy, zc, dist = _project(camera, pts)
        ok = (zc > 1e-6) & np.isfinite(sx) & np.isfinite(sy)
        cols = np.round(sx[ok]).astype(int)
        rows = np.round(sy[ok]).astype(int)
        dd = dist[ok]
        for dj in (0, 1):
            for di in (0, 1):
                cc = cols + di
                rr = rows + dj
                m_ok = (cc >= 0) & (cc < w) & (rr >= 0) & (rr < h)
                cc, rr, d2 = cc[m_ok], rr[m_ok], dd[m_ok]
                vis = d2 <= depth[rr, cc] + bias
                out[rr[vis], cc[vis], :3] = np.asarray(color, dtype=np.float32)
                out[rr[vis], cc[vis], 3] = 1.0

    for center, radius_mm, color in overlays.points:
        center = np.asarray(center, dtype=np.float64)
        sx, sy, zc, dist = _project(camera, center[None, :])
        if zc[0] <= 1e-6 or not np.isfinite(sx[0]):
            continue
        rpx = radius_mm / (zc[0] * tan_half) * (h / 2.0)
        if rpx < 1.0:
            rpx = 1.0
        cx, cy = float(sx[0]), float(sy[0])
        x_lo = max(int(cx - rpx - 1), 0)
        x_hi = min(int(cx + rpx + 2), w)
        y_lo = max(int(cy - rpx - 1), 0)
        y_hi = min(int(cy + rpx + 2), h)
        if x_lo >= x_hi or y_lo >= y_hi:
            continue
        yy, xx = np.mgrid[y_lo:y_hi, x_lo:x_hi]
        rr = np.hypot(xx - cx, yy - cy)
        front = dist[0] - radius_mm
        visible = depth[y_lo:y_hi, x_lo:x_hi] + bias >= front
        col = np.asarray(color, dtype=np.float32)
        disc = (rr <= rpx) & visible
        region = out[y_lo:y_hi, x_lo:x_hi, :3]
        region[disc] = 0.55 * region[disc] + 0.45 * col
        ring = (np.abs(rr - rpx) <= 0.75) & visible
        region[ring] = 0.1 * region[ring] + 0.9 * col
        out[y_lo:y_hi, x_lo:x_hi, 3][disc | ring] = 1.0


# ---------------------------------------------------------------------------
# View planes

def plane_uv_to_pixel(plane: SlicingPlane, uv) -> np.ndarray:
    """Plane-local mm coordinates to slice pixel coordinates (x, y)."""
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    ru, rv = plane.resolution
    we, he = plane.extent_mm
    x = (uv[:, 0] / we + 0.5) * (ru - 1 if ru > 1 else 1)
    y = (0.5 - uv[:, 1] / he) * (rv - 1 if rv > 1 else 1)
    return np.stack([x, y], axis=1)


def resample_view_plane(volume: Volume, plane: SlicingPlane,
                        tf: TransferFunction1D, colorize: bool = False) -> Image:
    """Flat slice image of the volume through a view plane.

    Pixel (i, j) samples p_p + u_i·axis_u + v_j·axis_v with u and v spanning
    the extent symmetrically; +axis_v points up the image. Grayscale output
    is the windowed intensity; colorize routes it through the color lookup.
    """
    if plane.kind != PLANE_VIEW:
        raise InvalidArgument(f"plane {plane.id!r} is not a view plane")
    ru, rv = plane.resolution
    if ru > MAX_IMAGE_DIM or rv > MAX_IMAGE_DIM:
        raise InvalidArgument(f"image exceeds {MAX_IMAGE_DIM} pixels per side")
    we, he = plane.extent_mm
    u = (np.arange(ru) / (ru - 1) - 0.5) * we if ru > 1 else np.zeros(1)
    v = (0.5 - np.arange(rv) / (rv - 1)) * he if rv > 1 else np.zeros(1)
    pts = (
        plane.p_p
        + u[None, :, None] * plane.axis_u
        + v[:, None, None] * plane.axis_v
    ).reshape(-1, 3)
    values = sample(volume, pts)
    coords = np.asarray(lut_coordinate(tf, values, volume.value_range))
    out = np.empty((rv, ru, 4), dtype=np.float32)
    if colorize:
        lut = build_lut(tf).entries
        li = np.round(coords * (lut.shape[0] - 1)).astype(np.int64)
        out[:, :, :3] = lut[li, :3].reshape(rv, ru, 3)
    else:
        out[:, :, :3] = coords.astype(np.float32).reshape(rv, ru)[:, :, None]
    out[:, :, 3] = 1.0
    return Image(size=(ru, rv), pixels=out)


def draw_segment_2d(image: Image, p0, p1, color, thickness: int = 1) -> None:
    """Paint a straight segment (pixel coordinates) into a slice image."""
    w, h = image.size
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    n = int(min(max(np.hypot(*(p1 - p0)) * 2.0, 2.0), 8192.0))
    s = np.linspace(0.0, 1.0, n)[:, None]
    pts = p0 + s * (p1 - p0)
    cols = np.round(pts[:, 0]).astype(int)
    rows = np.round(pts[:, 1]).astype(int)
    col = np.asarray(color, dtype=np.float32)
    for dj in range(thickness):
        for di in range(thickness):
            cc = cols + di
            rr = rows + dj
            ok = (cc >= 0) & (cc < w) & (rr >= 0) & (rr < h)
            image.pixels[rr[ok], cc[ok], :3] = col
            image.pixels[rr[ok], cc[ok], 3] = 1.0


# ---------------------------------------------------------------------------

_warmed = False


def warm_kernels() -> None:
    """Compile the numba kernels on a toy scene (cached across processes)."""
    global _warmed
    if _warmed:
        return
    grid = np.zeros((2, 2, 2), dtype=np.float32)
    grid[1, 1, 1] = 1.0
    vol = Volume(
        dims=(2, 2, 2), spacing=(1.0, 1.0, 1.0), origin=np.zeros(3),
        orientation=np.eye(3), scalars=grid.reshape(-1), value_range=(0.0, 0.0),
    )
    tf = TransferFunction1D(c_min=0.0, c_max=1.0)
    cam = Camera(position=np.array([4.0, 3.0, 2.0]), target=np.array([0.5, 0.5, 0.5]),
                 image_size=(4, 4))
    plane = SlicingPlane(id="warm", kind=PLANE_CUTOUT,
                         p_p=np.array([0.5, 0.5, 0.5]), p_n=np.array([1.0, 0.0, 0.0]))
    tri = Mesh(vertices=np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]]),
               triangles=np.array([[0, 1, 2]]))
    overlays = Overlays(meshes=[(tri, (1.0, 0.0, 0.0))])
    for method in RENDER_METHODS:
        settings = RenderSettings(
            method=method,
            iso_threshold=0.5 if method == METHOD_ISO else None,
        )
        render(vol, tf, settings, cam, planes=[plane], overlays=overlays)
    _warmed = True
