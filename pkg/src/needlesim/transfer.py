"""Intensity transfer functions.

A raw scalar passes through two stages before it becomes a color: contrast
remapping (windowing) and a 1D lookup built from piecewise-linear opacity
and color control points. Preset color schemes generate control colors with
a constant step in CIELAB lightness so ramps read evenly to the eye.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, UnknownPreset

CONTRAST_CUTOFF = "cutoff"
CONTRAST_REDISTRIBUTE = "redistribute"
CONTRAST_MODES = (CONTRAST_CUTOFF, CONTRAST_REDISTRIBUTE)

PRESET_NAMES = ("grayscale", "warm", "cool")

LUT_DEFAULT_RESOLUTION = 1024


def _check_points(points, width, label):
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != width or pts.shape[0] < 2:
        raise InvalidArgument(
            f"{label} must be a list of >= 2 rows of {width} numbers"
        )
    x = pts[:, 0]
    if x[0] != 0.0 or x[-1] != 1.0:
        raise InvalidArgument(f"{label} must start at x=0 and end at x=1")
    if np.any(np.diff(x) <= 0):
        raise InvalidArgument(f"{label} abscissae must strictly increase")
    if pts.min() < 0.0 or pts.max() > 1.0:
        raise InvalidArgument(f"{label} values must lie in [0,1]")
    return pts


@dataclass
class TransferFunction1D:
    """Contrast window plus piecewise-linear opacity/color control points.

    ``opacity_points`` rows are (x, alpha); ``color_points`` rows are
    (x, r, g, b); abscissae are normalized intensities in [0,1] with fixed
    endpoints at 0 and 1.
    """

    c_min: float
    c_max: float
    c_b: float = 0.0
    contrast_mode: str = CONTRAST_REDISTRIBUTE
    opacity_points: np.ndarray = field(
        default_factory=lambda: np.array([[0.0, 0.0], [1.0, 1.0]])
    )
    color_points: np.ndarray = field(
        default_factory=lambda: np.array([[0.0, 0, 0, 0], [1.0, 1, 1, 1]], dtype=float)
    )
    preset: str | None = None

    def __post_init__(self):
        self.c_min = float(self.c_min)
        self.c_max = float(self.c_max)
        self.c_b = float(self.c_b)
        if not self.c_min < self.c_max:
            raise InvalidArgument(f"need c_min < c_max, got {self.c_min} >= {self.c_max}")
        if not -1.0 <= self.c_b <= 1.0:
            raise InvalidArgument(f"brightness must be in [-1,1], got {self.c_b}")
        if self.contrast_mode not in CONTRAST_MODES:
            raise InvalidArgument(f"unknown contrast mode {self.contrast_mode!r}")
        self.opacity_points = _check_points(self.opacity_points, 2, "opacity_points")
        self.color_points = _check_points(self.color_points, 4, "color_points")
        if self.preset is not None and self.preset not in PRESET_NAMES:
            raise UnknownPreset(f"unknown preset {self.preset!r}")

    def to_dict(self) -> dict:
        return {
            "contrast": {
                "min": self.c_min,
                "max": self.c_max,
                "brightness": self.c_b,
                "mode": self.contrast_mode,
            },
            "opacity": self.opacity_points.tolist(),
            "color": self.color_points.tolist(),
            "preset": self.preset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransferFunction1D":
        c = d["contrast"]
        return cls(
            c_min=c["min"],
            c_max=c["max"],
            c_b=c.get("brightness", 0.0),
            contrast_mode=c.get("mode", CONTRAST_REDISTRIBUTE),
            opacity_points=np.asarray(d["opacity"], dtype=np.float64),
            color_points=np.asarray(d["color"], dtype=np.float64),
            preset=d.get("preset"),
        )


@dataclass
class Lut:
    resolution: int
    entries: np.ndarray = field(repr=False)  # (resolution, 4) rgba in [0,1]


def apply_contrast(tf: TransferFunction1D, c_x):
    """Contrast remap of a raw scalar (scalars and arrays both work).

    Cutoff passes in-window values through unchanged and zeroes the rest.
    Redistribute clamps into the window, maps it affinely onto [0,1], adds
    the brightness offset, and clamps the result back to [0,1].
    """
    c_x = np.asarray(c_x, dtype=np.float64)
    if tf.contrast_mode == CONTRAST_CUTOFF:
        out = np.where((c_x >= tf.c_min) & (c_x <= tf.c_max), c_x, 0.0)
    else:
        clamped = np.clip(c_x, tf.c_min, tf.c_max)
        out = np.clip((clamped - tf.c_min) / (tf.c_max - tf.c_min) + tf.c_b, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def classify(tf: TransferFunction1D, intensity):
    """Piecewise-linear rgba lookup of a normalized intensity in [0,1]."""
    x = np.asarray(intensity, dtype=np.float64)
    alpha = np.interp(x, tf.opacity_points[:, 0], tf.opacity_points[:, 1])
    rgb = [np.interp(x, tf.color_points[:, 0], tf.color_points[:, 1 + ch])
           for ch in range(3)]
    out = np.stack([rgb[0], rgb[1], rgb[2], alpha], axis=-1)
    return out


def build_lut(tf: TransferFunction1D, resolution: int = LUT_DEFAULT_RESOLUTION) -> Lut:
    if resolution < 2:
        raise InvalidArgument(f"lut resolution must be >= 2, got {resolution}")
    coords = np.arange(resolution, dtype=np.float64) / (resolution - 1)
    return Lut(resolution=resolution, entries=classify(tf, coords))


def lut_coordinate(tf: TransferFunction1D, raw, value_range):
    """Full pipeline from raw scalar to LUT coordinate in [0,1].

    Redistribute output is already the coordinate. Cutoff rejects to
    coordinate 0 and normalizes accepted raw values by the data range, so
    the lookup scale matches what the histogram shows.
    """
    out = apply_contrast(tf, raw)
    if tf.contrast_mode != CONTRAST_CUTOFF:
        return out
    lo, hi = value_range
    raw = np.asarray(raw, dtype=np.float64)
    accepted = (raw >= tf.c_min) & (raw <= tf.c_max)
    span = hi - lo
    if span <= 0:
        coord = np.zeros_like(raw)
    else:
        coord = np.clip((raw - lo) / span, 0.0, 1.0)
    coord = np.where(accepted, coord, 0.0)
    return float(coord) if coord.ndim == 0 else coord


def lut_window_params(tf: TransferFunction1D, value_range):
    """Constants for the renderer's inner loop.

    Returns (use_window, win_min, win_max, scale, offset, lo, hi) such that
    lut_coordinate(raw) = 0 when use_window and raw outside [win_min,
    win_max], else clamp(scale*raw + offset, lo, hi).
    """
    if tf.contrast_mode == CONTRAST_CUTOFF:
        vlo, vhi = value_range
        span = vhi - vlo
        scale = 1.0 / span if span > 0 else 0.0
        return True, tf.c_min, tf.c_max, scale, -vlo * scale, 0.0, 1.0
    span = tf.c_max - tf.c_min
    scale = 1.0 / span
    lo = min(max(0.0, tf.c_b), 1.0)
    hi = max(min(1.0, 1.0 + tf.c_b), 0.0)
    return False, -np.inf, np.inf, scale, -tf.c_min * scale + tf.c_b, lo, hi


# ---------------------------------------------------------------------------
# Preset schemes: constant-lightness-step color ramps built in CIELAB (D65).

_D65 = np.array([0.95047, 1.0, 1.08883])
_XYZ_TO_RGB = np.array([
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
])
_LSTAR_LO = 5.0
_LSTAR_HI = 95.0
_PRESET_HUES_DEG = {"grayscale": 0.0, "warm": 65.0, "cool": 255.0}
_PRESET_CHROMA = {"grayscale": 0.0, "warm": 45.0, "cool": 45.0}


def _lab_to_linear_rgb(L, a, b):
    fy = (L + 16.0) / 116.0
    fx = fy + a / 500.0
    fz = fy - b / 200.0
    delta = 6.0 / 29.0

    def finv(t):
        t = np.asarray(t, dtype=np.float64)
        return np.where(t > delta, t ** 3, 3.0 * delta * delta * (t - 4.0 / 29.0))

    xyz = np.stack([finv(fx), finv(fy), finv(fz)], axis=-1) * _D65
    return xyz @ _XYZ_TO_RGB.T


def _srgb_gamma(linear):
    linear = np.clip(linear, 0.0, 1.0)
    return np.where(
        linear <= 0.0031308,
        12.92 * linear,
        1.055 * np.power(linear, 1.0 / 2.4) - 0.055,
    )


def _lab_color(L, chroma, hue_rad):
    """sRGB for (L*, C*, h), shrinking chroma until inside the gamut.

    The gray axis is always in gamut for L* in [0,100], so the search
    terminates; Y depends on L* alone, so shrinking chroma never moves L*.
    """
    a = chroma * np.cos(hue_rad)
    b = chroma * np.sin(hue_rad)
    linear = _lab_to_linear_rgb(L, a, b)
    if linear.min() >= -1e-9 and linear.max() <= 1.0 + 1e-9:
        return _srgb_gamma(linear)
    lo_c, hi_c = 0.0, chroma
    for _ in range(48):
        mid = 0.5 * (lo_c + hi_c)
        linear = _lab_to_linear_rgb(L, mid * np.cos(hue_rad), mid * np.sin(hue_rad))
        if linear.min() >= -1e-9 and linear.max() <= 1.0 + 1e-9:
            lo_c = mid
        else:
            hi_c = mid
    linear = _lab_to_linear_rgb(L, lo_c * np.cos(hue_rad), lo_c * np.sin(hue_rad))
    return _srgb_gamma(linear)


def preset_scheme(name: str, steps: int) -> np.ndarray:
    """`steps` rgb rows whose L* values step evenly from 5 to 95."""
    if name not in PRESET_NAMES:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    if steps < 2:
        raise InvalidArgument(f"steps must be >= 2, got {steps}")
    lightness = np.linspace(_LSTAR_LO, _LSTAR_HI, steps)
    hue = np.deg2rad(_PRESET_HUES_DEG[name])
    chroma = _PRESET_CHROMA[name]
    return np.stack([_lab_color(L, chroma, hue) for L in lightness])


def preset_color_points(name: str, steps: int = 8) -> np.ndarray:
    """Preset colors as (x, r, g, b) control rows with evenly spaced x."""
    rgb = preset_scheme(name, steps)
    x = np.linspace(0.0, 1.0, steps)[:, None]
    return np.hstack([x, rgb])


def default_tf(value_range=(0.0, 1.0), preset: str = "grayscale") -> TransferFunction1D:
    """A serviceable starting transfer function for a freshly loaded volume."""
    lo, hi = float(value_range[0]), float(value_range[1])
    if hi <= lo:
        hi = lo + 1.0
    return TransferFunction1D(
        c_min=lo,
        c_max=hi,
        c_b=0.0,
        contrast_mode=CONTRAST_REDISTRIBUTE,
        opacity_points=np.array([[0.0, 0.0], [1.0, 0.8]]),
        color_points=preset_color_points(preset),
        preset=preset,
    )
