"""Medical volume and mesh ingestion.

Volumes arrive as NRRD files, DICOM series directories, or are built in
memory; meshes arrive as Wavefront OBJ. Everything is normalized into the
two in-memory types below: scalars become float32, geometry stays in mm.
NRRD is the canonical on-disk format; DICOM import converts to it.
"""

from __future__ import annotations

import gzip
import os
import re
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyMesh,
    InconsistentSeries,
    InvalidArgument,
    NonUniformSpacing,
    ParseError,
    TruncatedData,
    UnsupportedFormat,
)

MODALITY_CT = "CT"
MODALITY_MR = "MR"
MODALITY_OTHER = "OTHER"

_ORTHO_TOL = 1e-6


@dataclass
class Volume:
    """3D scalar grid with physical placement metadata.

    ``scalars`` is a flat float32 array in x-fastest order; ``grid`` exposes
    the same memory as a (nz, ny, nx) view. ``origin`` is the world position
    of the center of voxel (0, 0, 0); ``orientation`` columns are the world
    directions of the +x/+y/+z index axes.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: np.ndarray
    orientation: np.ndarray
    scalars: np.ndarray
    value_range: tuple[float, float]
    modality: str = MODALITY_OTHER

    def __post_init__(self):
        nx, ny, nz = self.dims
        if min(self.dims) < 1:
            raise InvalidArgument(f"dims must all be >= 1, got {self.dims}")
        if min(self.spacing) <= 0:
            raise InvalidArgument(f"spacing must be positive, got {self.spacing}")
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.orientation = np.asarray(self.orientation, dtype=np.float64).reshape(3, 3)
        if not np.allclose(self.orientation.T @ self.orientation, np.eye(3), atol=_ORTHO_TOL):
            raise InvalidArgument("orientation columns must be orthonormal")
        self.scalars = np.ascontiguousarray(self.scalars, dtype=np.float32).reshape(-1)
        if self.scalars.size != nx * ny * nz:
            raise InvalidArgument(
                f"scalars length {self.scalars.size} != {nx}*{ny}*{nz}"
            )
        lo = float(self.scalars.min())
        hi = float(self.scalars.max())
        self.value_range = (lo, hi)

    @property
    def grid(self) -> np.ndarray:
        """(nz, ny, nx) view over the flat x-fastest scalar array."""
        nx, ny, nz = self.dims
        return self.scalars.reshape(nz, ny, nx)

    @property
    def voxel_count(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def index_to_world(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.float64)
        return self.origin + (idx * np.asarray(self.spacing)) @ self.orientation.T

    def world_to_index(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return ((p - self.origin) @ self.orientation) / np.asarray(self.spacing)


def volume_from_array(grid, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0),
                      orientation=None, modality=MODALITY_OTHER) -> Volume:
    """Build a Volume from a (nz, ny, nx) array; a convenience for synthesis."""
    grid = np.asarray(grid, dtype=np.float32)
    if grid.ndim != 3:
        raise InvalidArgument(f"expected a 3D array, got ndim={grid.ndim}")
    nz, ny, nx = grid.shape
    if orientation is None:
        orientation = np.eye(3)
    return Volume(
        dims=(nx, ny, nz),
        spacing=tuple(float(s) for s in spacing),
        origin=np.asarray(origin, dtype=np.float64),
        orientation=np.asarray(orientation, dtype=np.float64),
        scalars=np.ascontiguousarray(grid).reshape(-1),
        value_range=(0.0, 0.0),
        modality=modality,
    )


@dataclass
class Mesh:
    """Triangle mesh in mm. ``normals`` is per-vertex and optional."""

    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise InvalidArgument("triangle index out of range")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != len(self.vertices):
                raise InvalidArgument("normals must match vertex count")


@dataclass
class Histogram:
    bin_count: int
    range: tuple[float, float]
    counts: np.ndarray = field(repr=False)


# ---------------------------------------------------------------------------
# NRRD

_NRRD_TYPES = {
    "uint8": np.uint8, "uchar": np.uint8, "unsigned char": np.uint8,
    "int16": np.int16, "short": np.int16, "signed short": np.int16,
    "uint16": np.uint16, "ushort": np.uint16, "unsigned short": np.uint16,
    "float": np.float32,
}


def _parse_vector(text, lineno):
    m = re.match(r"^\(([^)]*)\)$", text.strip())
    if not m:
        raise ParseError(f"expected '(a,b,c)' vector, got {text!r}", line=lineno)
    try:
        return np.array([float(v) for v in m.group(1).split(",")], dtype=np.float64)
    except ValueError:
        raise ParseError(f"non-numeric vector component in {text!r}", line=lineno)


def load_nrrd(path) -> Volume:
    """Read an NRRD volume (attached or detached header, raw or gzip payload).

    Supports the subset this engine writes: dimension 3, scalar types uint8/
    int16/uint16/float, orthogonal space directions. Scalars are converted to
    float32 without rescale.
    """
    path = os.fspath(path)
    with open(path, "rb") as f:
        blob = f.read()

    # Header is the byte range up to the first blank line.
    nl = blob.find(b"\n\n")
    crnl = blob.find(b"\r\n\r\n")
    if nl == -1 and crnl == -1:
        header_bytes, payload = blob, b""
    elif crnl != -1 and (nl == -1 or crnl < nl):
        header_bytes, payload = blob[:crnl], blob[crnl + 4:]
    else:
        header_bytes, payload = blob[:nl], blob[nl + 2:]

    try:
        lines = header_bytes.decode("ascii").splitlines()
    except UnicodeDecodeError:
        raise ParseError("header is not ASCII", line=1)
    if not lines or not lines[0].startswith("NRRD"):
        raise ParseError("missing NRRD magic", line=1)

    fields = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        if ":=" in line:
            continue  # key/value metadata, irrelevant here
        if ":" not in line:
            raise ParseError(f"expected 'field: value', got {line!r}", line=lineno)
        key, _, value = line.partition(":")
        fields[key.strip().lower()] = (value.strip(), lineno)

    def need(name):
        if name not in fields:
            raise ParseError(f"missing required field {name!r}", line=1)
        return fields[name]

    dim_text, dim_line = need("dimension")
    if dim_text != "3":
        raise UnsupportedFormat(f"only dimension 3 supported, got {dim_text}")

    type_text, type_line = need("type")
    dtype = _NRRD_TYPES.get(type_text.lower())
    if dtype is None:
        raise UnsupportedFormat(f"unsupported sample type {type_text!r}")

    sizes_text, sizes_line = need("sizes")
    try:
        sizes = [int(v) for v in sizes_text.split()]
    except ValueError:
        raise ParseError(f"non-integer sizes {sizes_text!r}", line=sizes_line)
    if len(sizes) != 3 or min(sizes) < 1:
        raise ParseError(f"need three positive sizes, got {sizes_text!r}", line=sizes_line)

    dirs_text, dirs_line = need("space directions")
    vecs = re.findall(r"\([^)]*\)", dirs_text)
    if len(vecs) != 3:
        raise ParseError(f"need three direction vectors, got {dirs_text!r}", line=dirs_line)
    directions = np.stack([_parse_vector(v, dirs_line) for v in vecs], axis=1)

    if "space origin" in fields:
        origin = _parse_vector(*fields["space origin"])
    else:
        origin = np.zeros(3)

    encoding, enc_line = need("encoding")
    encoding = encoding.lower()
    if encoding not in ("raw", "gzip", "gz"):
        raise UnsupportedFormat(f"unsupported encoding {encoding!r}")

    endian = fields.get("endian", ("little", 0))[0].lower()
    if endian not in ("little", "big"):
        raise ParseError(f"unknown endian {endian!r}", line=fields["endian"][1])

    if "data file" in fields:
        rel, _ = fields["data file"]
        data_path = os.path.join(os.path.dirname(path), rel)
        with open(data_path, "rb") as f:
            payload = f.read()

    if encoding in ("gzip", "gz"):
        try:
            payload = gzip.decompress(payload)
        except (OSError, EOFError) as e:
            raise TruncatedData(f"gzip payload corrupt: {e}")

    expected = sizes[0] * sizes[1] * sizes[2] * np.dtype(dtype).itemsize
    if len(payload) < expected:
        raise TruncatedData(
            f"payload has {len(payload)} bytes, header promises {expected}"
        )
    payload = payload[:expected]

    arr = np.frombuffer(payload, dtype=dtype)
    if endian == "big":
        arr = arr.byteswap()

    spacing = np.linalg.norm(directions, axis=0)
    if spacing.min() <= 0:
        raise ParseError("zero-length space direction", line=dirs_line)
    orientation = directions / spacing
    if not np.allclose(orientation.T @ orientation, np.eye(3), atol=1e-6):
        raise UnsupportedFormat("non-orthogonal space directions")

    return Volume(
        dims=(sizes[0], sizes[1], sizes[2]),
        spacing=tuple(float(s) for s in spacing),
        origin=origin,
        orientation=orientation,
        scalars=arr.astype(np.float32),
        value_range=(0.0, 0.0),
    )


def write_nrrd(volume: Volume, path, encoding="raw") -> None:
    """Write a Volume as NRRD (float payload, attached header)."""
    if encoding not in ("raw", "gzip"):
        raise InvalidArgument(f"encoding must be raw or gzip, got {encoding!r}")
    directions = volume.orientation * np.asarray(volume.spacing)
    def vec(v):
        return "(" + ",".join(repr(float(x)) for x in v) + ")"
    header = [
        "NRRD0004",
        "# needlesim volume",
        "type: float",
        "dimension: 3",
        "space: left-posterior-superior",
        "sizes: {} {} {}".format(*volume.dims),
        "space directions: {} {} {}".format(
            vec(directions[:, 0]), vec(directions[:, 1]), vec(directions[:, 2])
        ),
        "space origin: " + vec(volume.origin),
        "kinds: domain domain domain",
        "endian: little",
        f"encoding: {encoding}",
        "",
        "",
    ]
    payload = volume.scalars.astype("<f4").tobytes()
    if encoding == "gzip":
        payload = gzip.compress(payload, mtime=0)
    with open(path, "wb") as f:
        f.write("\n".join(header).encode("ascii"))
        f.write(payload)


# ---------------------------------------------------------------------------
# DICOM (Part-10, explicit VR little endian, single frame, uncompressed)

_EXPLICIT_LE = "1.2.840.10008.1.2.1"
_LONG_VRS = {b"OB", b"OW", b"OF", b"SQ", b"UT", b"UN"}

_TAGS = {
    (0x0008, 0x0060): "Modality",
    (0x0018, 0x0050): "SliceThickness",
    (0x0020, 0x000E): "SeriesInstanceUID",
    (0x0020, 0x0032): "ImagePositionPatient",
    (0x0020, 0x0037): "ImageOrientationPatient",
    (0x0028, 0x0010): "Rows",
    (0x0028, 0x0011): "Columns",
    (0x0028, 0x0030): "PixelSpacing",
    (0x0028, 0x0100): "BitsAllocated",
    (0x0028, 0x0103): "PixelRepresentation",
    (0x0028, 0x1052): "RescaleIntercept",
    (0x0028, 0x1053): "RescaleSlope",
    (0x7FE0, 0x0010): "PixelData",
}


def _parse_elements(buf, offset, end, stop_at_pixeldata=True):
    """Walk explicit-VR little-endian elements in buf[offset:end]."""
    out = {}
    while offset + 8 <= end:
        group, elem = struct.unpack_from("<HH", buf, offset)
        vr = buf[offset + 4:offset + 6]
        if vr in _LONG_VRS:
            (length,) = struct.unpack_from("<I", buf, offset + 8)
            value_off = offset + 12
        else:
            (length,) = struct.unpack_from("<H", buf, offset + 6)
            value_off = offset + 8
        if length == 0xFFFFFFFF:
            raise UnsupportedFormat("undefined-length elements not supported")
        if value_off + length > len(buf):
            raise TruncatedData(
                f"element ({group:04X},{elem:04X}) runs past end of file"
            )
        name = _TAGS.get((group, elem))
        if name:
            out[name] = (vr, buf[value_off:value_off + length])
            if name == "PixelData" and stop_at_pixeldata:
                return out, value_off + length
        offset = value_off + length
    return out, offset


def _decode(vr, raw):
    if vr in (b"US",):
        return struct.unpack("<" + "H" * (len(raw) // 2), raw)
    if vr in (b"UL",):
        return struct.unpack("<" + "I" * (len(raw) // 4), raw)
    text = raw.decode("ascii", errors="replace").strip("\x00 ").strip()
    if vr in (b"DS", b"IS"):
        parts = [p for p in text.split("\\") if p]
        return tuple(float(p) for p in parts)
    return text


def _read_dicom_file(path):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 132 or blob[128:132] != b"DICM":
        raise ParseError(f"{path}: missing DICM magic")

    # File meta group: (0002,0000) UL group length, then the meta elements.
    group, elem = struct.unpack_from("<HH", blob, 132)
    if (group, elem) != (0x0002, 0x0000):
        raise ParseError(f"{path}: file meta group length missing")
    (meta_len,) = struct.unpack_from("<I", blob, 140)
    meta_end = 144 + meta_len

    ts = None
    off = 144
    while off + 8 <= meta_end:
        group, elem = struct.unpack_from("<HH", blob, off)
        vr = blob[off + 4:off + 6]
        if vr in _LONG_VRS:
            (length,) = struct.unpack_from("<I", blob, off + 8)
            voff = off + 12
        else:
            (length,) = struct.unpack_from("<H", blob, off + 6)
            voff = off + 8
        if (group, elem) == (0x0002, 0x0010):
            ts = blob[voff:voff + length].decode("ascii").strip("\x00 ")
        off = voff + length

    if ts != _EXPLICIT_LE:
        raise UnsupportedFormat(
            f"{path}: transfer syntax {ts!r} not supported "
            "(explicit VR little endian, uncompressed only)"
        )

    raw, _ = _parse_elements(blob, meta_end, len(blob))
    tags = {}
    for name, (vr, payload) in raw.items():
        tags[name] = payload if name == "PixelData" else _decode(vr, payload)
    return tags


def _slice_pixels(tags, path):
    for required in ("Rows", "Columns", "BitsAllocated", "PixelData",
                     "ImagePositionPatient", "ImageOrientationPatient",
                     "PixelSpacing"):
        if required not in tags:
            raise ParseError(f"{path}: missing tag {required}")
    rows = int(tags["Rows"][0])
    cols = int(tags["Columns"][0])
    bits = int(tags["BitsAllocated"][0])
    signed = int(tags.get("PixelRepresentation", (0,))[0]) == 1
    if bits == 8:
        dtype = np.int8 if signed else np.uint8
    elif bits == 16:
        dtype = np.int16 if signed else np.uint16
    else:
        raise UnsupportedFormat(f"{path}: BitsAllocated {bits} not supported")
    expected = rows * cols * np.dtype(dtype).itemsize
    pix = tags["PixelData"]
    if len(pix) < expected:
        raise TruncatedData(f"{path}: pixel data {len(pix)} bytes, expected {expected}")
    stored = np.frombuffer(pix[:expected], dtype=dtype).reshape(rows, cols)
    slope = float(tags.get("RescaleSlope", (1.0,))[0])
    intercept = float(tags.get("RescaleIntercept", (0.0,))[0])
    return stored.astype(np.float32) * slope + intercept


def load_dicom_series(directory) -> Volume:
    """Assemble a directory of single-frame DICOM slices into a Volume.

    Slices are ordered by the projection of ImagePositionPatient onto the
    slice normal, regardless of file names. Gaps beyond 1% of the median
    raise the NonUniformSpacing warning; the median gap becomes spacing.z.
    """
    directory = os.fspath(directory)
    paths = sorted(
        os.path.join(directory, n) for n in os.listdir(directory)
        if os.path.isfile(os.path.join(directory, n))
    )
    slices = []
    for p in paths:
        with open(p, "rb") as f:
            head = f.read(132)
        if len(head) < 132 or head[128:132] != b"DICM":
            continue
        slices.append((p, _read_dicom_file(p)))
    if not slices:
        raise ParseError(f"no DICOM files found in {directory}")

    uids = {t.get("SeriesInstanceUID", "") for _, t in slices}
    if len(uids) > 1:
        raise InconsistentSeries(f"multiple SeriesInstanceUID values: {sorted(uids)}")

    first = slices[0][1]
    iop = np.asarray(first["ImageOrientationPatient"], dtype=np.float64)
    row_dir, col_dir = iop[:3], iop[3:]
    row_dir = row_dir / np.linalg.norm(row_dir)
    col_dir = col_dir / np.linalg.norm(col_dir)
    normal = np.cross(row_dir, col_dir)

    for p, t in slices:
        if not np.allclose(t["ImageOrientationPatient"], first["ImageOrientationPatient"], atol=1e-6):
            raise InconsistentSeries(f"{p}: orientation differs within series")
        if t["Rows"] != first["Rows"] or t["Columns"] != first["Columns"]:
            raise InconsistentSeries(f"{p}: slice dimensions differ within series")

    def position(t):
        return float(np.dot(np.asarray(t["ImagePositionPatient"]), normal))

    slices.sort(key=lambda pt: position(pt[1]))
    positions = np.array([position(t) for _, t in slices])

    if len(slices) > 1:
        gaps = np.diff(positions)
        median = float(np.median(gaps))
        if median <= 0:
            raise InconsistentSeries("duplicate or unordered slice positions")
        if np.any(np.abs(gaps - median) > 0.01 * median):
            warnings.warn(
                f"slice gaps deviate from median {median:.4g} mm by more than 1%",
                NonUniformSpacing,
            )
        dz = median
    else:
        dz = float(first.get("SliceThickness", (1.0,))[0])

    planes = [_slice_pixels(t, p) for p, t in slices]
    grid = np.stack(planes, axis=0)  # (nz, rows, cols) = (nz, ny, nx)

    ps = first["PixelSpacing"]  # (row spacing, column spacing) = (dy, dx)
    modality = first.get("Modality", "")
    modality = modality if modality in (MODALITY_CT, MODALITY_MR) else MODALITY_OTHER

    return Volume(
        dims=(grid.shape[2], grid.shape[1], grid.shape[0]),
        spacing=(float(ps[1]), float(ps[0]), dz),
        origin=np.asarray(slices[0][1]["ImagePositionPatient"], dtype=np.float64),
        orientation=np.stack([row_dir, col_dir, normal], axis=1),
        scalars=np.ascontiguousarray(grid).reshape(-1),
        value_range=(0.0, 0.0),
        modality=modality,
    )


# ---------------------------------------------------------------------------
# OBJ meshes

def load_mesh(path) -> Mesh:
    """Read a Wavefront OBJ (v/vn/f records); polygons fan-triangulate."""
    vertices = []
    normals = []
    normal_of = {}
    triangles = []

    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            kind = parts[0]
            if kind == "v":
                if len(parts) < 4:
                    raise ParseError("vertex needs 3 coordinates", line=lineno)
                vertices.append([float(v) for v in parts[1:4]])
            elif kind == "vn":
                if len(parts) < 4:
                    raise ParseError("normal needs 3 components", line=lineno)
                normals.append([float(v) for v in parts[1:4]])
            elif kind == "f":
                refs = parts[1:]
                if len(refs) < 3:
                    raise ParseError("face needs at least 3 vertices", line=lineno)
                idx = []
                for ref in refs:
                    fields = ref.split("/")
                    try:
                        vi = int(fields[0])
                    except ValueError:
                        raise ParseError(f"bad face reference {ref!r}", line=lineno)
                    vi = vi - 1 if vi > 0 else len(vertices) + vi
                    if not 0 <= vi < len(vertices):
                        raise ParseError(
                            f"face references vertex {fields[0]} of {len(vertices)}",
                            line=lineno,
                        )
                    if len(fields) == 3 and fields[2]:
                        ni = int(fields[2])
                        ni = ni - 1 if ni > 0 else len(normals) + ni
                        if not 0 <= ni < len(normals):
                            raise ParseError(
                                f"face references normal {fields[2]} of {len(normals)}",
                                line=lineno,
                            )
                        normal_of[vi] = ni
                    idx.append(vi)
                for k in range(1, len(idx) - 1):
                    triangles.append((idx[0], idx[k], idx[k + 1]))

    if not triangles:
        raise EmptyMesh(f"{path}: no faces")

    vertex_normals = None
    if normals:
        if normal_of:
            vertex_normals = np.zeros((len(vertices), 3))
            seen = np.zeros(len(vertices), dtype=bool)
            for vi, ni in normal_of.items():
                vertex_normals[vi] = normals[ni]
                seen[vi] = True
            if not seen.all():
                vertex_normals = None
        elif len(normals) == len(vertices):
            vertex_normals = np.asarray(normals, dtype=np.float64)
        if vertex_normals is not None:
            lengths = np.linalg.norm(vertex_normals, axis=1, keepdims=True)
            if lengths.min() < 1e-12:
                raise ParseError(f"{path}: zero-length vertex normal")
            vertex_normals = vertex_normals / lengths

    return Mesh(
        vertices=np.asarray(vertices, dtype=np.float64),
        triangles=np.asarray(triangles, dtype=np.int64),
        normals=vertex_normals,
    )


def write_obj(mesh: Mesh, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for v in mesh.vertices:
            f.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        if mesh.normals is not None:
            for n in mesh.normals:
                f.write(f"vn {float(n[0])!r} {float(n[1])!r} {float(n[2])!r}\n")
            for t in mesh.triangles:
                f.write(f"f {t[0]+1}//{t[0]+1} {t[1]+1}//{t[1]+1} {t[2]+1}//{t[2]+1}\n")
        else:
            for t in mesh.triangles:
                f.write(f"f {t[0]+1} {t[1]+1} {t[2]+1}\n")


# ---------------------------------------------------------------------------

def histogram(volume: Volume, bins: int) -> Histogram:
    """Uniform-bin intensity histogram over the volume's value range.

    The maximum value lands in the last bin; a degenerate range (max == min)
    puts every sample into bin 0.
    """
    if bins < 2:
        raise InvalidArgument(f"bins must be >= 2, got {bins}")
    lo, hi = volume.value_range
    if hi == lo:
        counts = np.zeros(bins, dtype=np.int64)
        counts[0] = volume.voxel_count
    else:
        counts, _ = np.histogram(volume.scalars, bins=bins, range=(lo, hi))
        counts = counts.astype(np.int64)
    return Histogram(bin_count=bins, range=(lo, hi), counts=counts)
