import gzip
import struct

import numpy as np
import pytest

import needlesim as ns
from needlesim.errors import (
    EmptyMesh,
    InconsistentSeries,
    InvalidArgument,
    NonUniformSpacing,
    ParseError,
    TruncatedData,
    UnsupportedFormat,
)

import dicom_bytes


def _nrrd(tmp_path, header_lines, payload, name="v.nrrd"):
    p = tmp_path / name
    p.write_bytes("\n".join(header_lines).encode("ascii") + b"\n\n" + payload)
    return p


_BASE_HEADER = [
    "NRRD0004",
    "dimension: 3",
    "type: uint8",
    "sizes: 2 2 2",
    "space directions: (1,0,0) (0,1,0) (0,0,1)",
    "encoding: raw",
]


# ---------------------------------------------------------------------------
# NRRD

def test_nrrd_uint8_identity_payload(tmp_path):
    p = _nrrd(tmp_path, _BASE_HEADER, bytes(range(8)))
    vol = ns.load_nrrd(p)
    assert vol.dims == (2, 2, 2)
    np.testing.assert_array_equal(vol.scalars, np.arange(8, dtype=np.float32))
    assert vol.value_range == (0.0, 7.0)
    assert vol.scalars.dtype == np.float32


def test_nrrd_truncated_payload(tmp_path):
    header = list(_BASE_HEADER)
    header[3] = "sizes: 3 3 3"
    p = _nrrd(tmp_path, header, bytes(26))
    with pytest.raises(TruncatedData):
        ns.load_nrrd(p)


def test_nrrd_scaled_directions(tmp_path):
    header = list(_BASE_HEADER)
    header[4] = "space directions: (2,0,0) (0,2,0) (0,0,5)"
    vol = ns.load_nrrd(_nrrd(tmp_path, header, bytes(8)))
    assert vol.spacing == (2.0, 2.0, 5.0)
    np.testing.assert_allclose(vol.orientation, np.eye(3), atol=1e-12)


def test_nrrd_space_origin(tmp_path):
    header = list(_BASE_HEADER) + ["space origin: (-1.5,2.25,3.0)"]
    vol = ns.load_nrrd(_nrrd(tmp_path, header, bytes(8)))
    np.testing.assert_array_equal(vol.origin, [-1.5, 2.25, 3.0])


def test_nrrd_detached_header(tmp_path):
    (tmp_path / "v.raw").write_bytes(bytes(range(8)))
    header = list(_BASE_HEADER) + ["data file: v.raw"]
    p = tmp_path / "v.nhdr"
    p.write_bytes("\n".join(header).encode("ascii") + b"\n\n")
    vol = ns.load_nrrd(p)
    np.testing.assert_array_equal(vol.scalars, np.arange(8))


def test_nrrd_gzip_payload(tmp_path):
    header = list(_BASE_HEADER)
    header[5] = "encoding: gzip"
    p = _nrrd(tmp_path, header, gzip.compress(bytes(range(8))))
    np.testing.assert_array_equal(ns.load_nrrd(p).scalars, np.arange(8))


def test_nrrd_gzip_corrupt(tmp_path):
    header = list(_BASE_HEADER)
    header[5] = "encoding: gzip"
    p = _nrrd(tmp_path, header, b"\x1f\x8b garbage")
    with pytest.raises(TruncatedData):
        ns.load_nrrd(p)


def test_nrrd_big_endian_int16(tmp_path):
    header = list(_BASE_HEADER) + ["endian: big"]
    header[2] = "type: int16"
    values = np.array([0, 1, -2, 300, -400, 5, 6, 7], dtype=">i2")
    vol = ns.load_nrrd(_nrrd(tmp_path, header, values.tobytes()))
    np.testing.assert_array_equal(vol.scalars, values.astype(np.float32))


def test_nrrd_comments_and_keyvalue_skipped(tmp_path):
    header = list(_BASE_HEADER)
    header.insert(1, "# a comment")
    header.insert(2, "content := irrelevant")
    vol = ns.load_nrrd(_nrrd(tmp_path, header, bytes(8)))
    assert vol.dims == (2, 2, 2)


def test_nrrd_error_lines(tmp_path):
    header = list(_BASE_HEADER)
    header[3] = "sizes: a b c"
    with pytest.raises(ParseError, match="line 4"):
        ns.load_nrrd(_nrrd(tmp_path, header, b""))

    header = list(_BASE_HEADER)
    header[4] = "space directions (1,0,0) (0,1,0) (0,0,1)"
    with pytest.raises(ParseError, match="line 5"):
        ns.load_nrrd(_nrrd(tmp_path, header, b""))


def test_nrrd_missing_magic(tmp_path):
    p = tmp_path / "x.nrrd"
    p.write_bytes(b"not an nrrd\n\n")
    with pytest.raises(ParseError, match="magic"):
        ns.load_nrrd(p)


def test_nrrd_missing_field(tmp_path):
    header = [l for l in _BASE_HEADER if not l.startswith("sizes")]
    with pytest.raises(ParseError, match="sizes"):
        ns.load_nrrd(_nrrd(tmp_path, header, bytes(8)))


def test_nrrd_unsupported_variants(tmp_path):
    header = list(_BASE_HEADER)
    header[1] = "dimension: 4"
    with pytest.raises(UnsupportedFormat):
        ns.load_nrrd(_nrrd(tmp_path, header, b""))

    header = list(_BASE_HEADER)
    header[2] = "type: double"
    with pytest.raises(UnsupportedFormat):
        ns.load_nrrd(_nrrd(tmp_path, header, b""))

    header = list(_BASE_HEADER)
    header[5] = "encoding: bzip2"
    with pytest.raises(UnsupportedFormat):
        ns.load_nrrd(_nrrd(tmp_path, header, b""))

    header = list(_BASE_HEADER)
    header[4] = "space directions: (1,0.5,0) (0,1,0) (0,0,1)"
    with pytest.raises(UnsupportedFormat, match="orthogonal"):
        ns.load_nrrd(_nrrd(tmp_path, header, bytes(8)))


def test_nrrd_unknown_endian(tmp_path):
    header = list(_BASE_HEADER) + ["endian: middle"]
    with pytest.raises(ParseError, match="endian"):
        ns.load_nrrd(_nrrd(tmp_path, header, bytes(8)))


@pytest.mark.parametrize("encoding", ["raw", "gzip"])
def test_nrrd_round_trip_bitwise(tmp_path, encoding):
    rng = np.random.default_rng(7)
    for k in range(5):
        grid = rng.normal(scale=500, size=(4, 5, 6)).astype(np.float32)
        vol = ns.volume_from_array(
            grid,
            spacing=tuple(rng.uniform(0.4, 3.0, 3)),
            origin=rng.normal(scale=100, size=3),
        )
        p = tmp_path / f"rt{encoding}{k}.nrrd"
        ns.write_nrrd(vol, p, encoding=encoding)
        back = ns.load_nrrd(p)
        assert back.scalars.tobytes() == vol.scalars.tobytes()
        assert back.dims == vol.dims
        np.testing.assert_allclose(back.spacing, vol.spacing, rtol=0, atol=1e-9)
        np.testing.assert_allclose(back.origin, vol.origin, rtol=0, atol=1e-9)
        np.testing.assert_allclose(back.orientation, vol.orientation, atol=1e-9)


def test_nrrd_gzip_write_is_deterministic(tmp_path):
    vol = ns.volume_from_array(np.arange(24, dtype=np.float32).reshape(2, 3, 4))
    ns.write_nrrd(vol, tmp_path / "a.nrrd", encoding="gzip")
    ns.write_nrrd(vol, tmp_path / "b.nrrd", encoding="gzip")
    assert (tmp_path / "a.nrrd").read_bytes() == (tmp_path / "b.nrrd").read_bytes()


# ---------------------------------------------------------------------------
# DICOM

def _write_series(directory, slices):
    directory.mkdir(exist_ok=True)
    for name, blob in slices:
        (directory / name).write_bytes(blob)
    return directory


def test_dicom_golden_series(tmp_path):
    # 3 slices at z = 0, 2, 4; stored 1024, slope 1, intercept -1024.
    stored = dicom_bytes.pack_pixels([1024] * 4)
    slices = [
        (f"s{i}.dcm", dicom_bytes.dicom_file(
            rows=2, cols=2, pixels=stored, position=(0, 0, z),
            slope=1.0, intercept=-1024.0))
        for i, z in enumerate([0.0, 2.0, 4.0])
    ]
    vol = ns.load_dicom_series(_write_series(tmp_path / "ct", slices))
    assert vol.dims == (2, 2, 3)
    assert vol.spacing == (1.0, 1.0, 2.0)
    np.testing.assert_array_equal(vol.scalars, np.zeros(12, dtype=np.float32))
    np.testing.assert_array_equal(vol.origin, [0, 0, 0])
    np.testing.assert_allclose(vol.orientation, np.eye(3), atol=1e-12)
    assert vol.modality == "CT"


def test_dicom_signed_rescale(tmp_path):
    # stored -100 (two's complement 0x9C 0xFF), slope 2 -> scalar -200
    stored = dicom_bytes.pack_pixels([-100, 0, 50, -1], signed=True)
    assert stored[:2] == b"\x9c\xff"
    blob = dicom_bytes.dicom_file(
        rows=2, cols=2, pixels=stored, signed=True,
        slope=2.0, intercept=0.0, thickness=3.5)
    vol = ns.load_dicom_series(_write_series(tmp_path / "mr", [("a.dcm", blob)]))
    np.testing.assert_array_equal(vol.scalars, [-200.0, 0.0, 100.0, -2.0])
    assert vol.spacing[2] == 3.5
    assert vol.value_range == (-200.0, 100.0)


def test_dicom_order_invariant_under_file_names(tmp_path):
    rng = np.random.default_rng(11)
    z_values = [0.0, 1.5, 3.0, 4.5]
    pix = [dicom_bytes.pack_pixels(rng.integers(0, 4000, 6).tolist()) for _ in z_values]

    def series(names):
        return [
            (names[i], dicom_bytes.dicom_file(rows=2, cols=3, pixels=pix[i],
                                              position=(0, 0, z_values[i])))
            for i in range(len(z_values))
        ]

    a = ns.load_dicom_series(_write_series(tmp_path / "a", series(["0.dcm", "1.dcm", "2.dcm", "3.dcm"])))
    b = ns.load_dicom_series(_write_series(tmp_path / "b", series(["3.dcm", "0.dcm", "2.dcm", "1.dcm"])))
    np.testing.assert_array_equal(a.scalars, b.scalars)
    assert a.spacing == b.spacing
    np.testing.assert_array_equal(a.origin, b.origin)

    # slice k of the grid is the slice at the k-th smallest z
    expected = np.frombuffer(pix[0], dtype="<u2").astype(np.float32)
    np.testing.assert_array_equal(a.grid[0].reshape(-1), expected)


def test_dicom_mixed_series_uid(tmp_path):
    pix = dicom_bytes.pack_pixels([0] * 4)
    slices = [
        ("a.dcm", dicom_bytes.dicom_file(rows=2, cols=2, pixels=pix, series_uid="1.2.3")),
        ("b.dcm", dicom_bytes.dicom_file(rows=2, cols=2, pixels=pix, series_uid="1.2.4",
                                         position=(0, 0, 1))),
    ]
    with pytest.raises(InconsistentSeries):
        ns.load_dicom_series(_write_series(tmp_path / "mixed", slices))


def test_dicom_dimension_mismatch(tmp_path):
    slices = [
        ("a.dcm", dicom_bytes.dicom_file(rows=2, cols=2, pixels=dicom_bytes.pack_pixels([0] * 4))),
        ("b.dcm", dicom_bytes.dicom_file(rows=3, cols=2, pixels=dicom_bytes.pack_pixels([0] * 6),
                                         position=(0, 0, 1))),
    ]
    with pytest.raises(InconsistentSeries):
        ns.load_dicom_series(_write_series(tmp_path / "dims", slices))


def test_dicom_truncated_pixel_data(tmp_path):
    blob = dicom_bytes.dicom_file(rows=4, cols=4, pixels=dicom_bytes.pack_pixels([7] * 3))
    with pytest.raises(TruncatedData):
        ns.load_dicom_series(_write_series(tmp_path / "trunc", [("a.dcm", blob)]))


def test_dicom_implicit_vr_rejected(tmp_path):
    blob = dicom_bytes.dicom_file(
        rows=2, cols=2, pixels=dicom_bytes.pack_pixels([0] * 4),
        transfer_syntax=dicom_bytes.IMPLICIT_LE)
    with pytest.raises(UnsupportedFormat, match="transfer syntax"):
        ns.load_dicom_series(_write_series(tmp_path / "implicit", [("a.dcm", blob)]))


def test_dicom_non_dicom_files_skipped(tmp_path):
    d = _write_series(tmp_path / "noise", [
        ("a.dcm", dicom_bytes.dicom_file(rows=2, cols=2,
                                         pixels=dicom_bytes.pack_pixels([5] * 4))),
    ])
    (d / "README.txt").write_text("not an image\n")
    vol = ns.load_dicom_series(d)
    assert vol.dims == (2, 2, 1)


def test_dicom_empty_directory(tmp_path):
    d = tmp_path / "empty"
    d.mkdir()
    with pytest.raises(ParseError):
        ns.load_dicom_series(d)


def test_dicom_gap_jitter_warns(tmp_path):
    pix = dicom_bytes.pack_pixels([0] * 4)
    slices = [
        (f"s{i}.dcm", dicom_bytes.dicom_file(rows=2, cols=2, pixels=pix, position=(0, 0, z)))
        for i, z in enumerate([0.0, 2.0, 4.2])
    ]
    with pytest.warns(NonUniformSpacing):
        vol = ns.load_dicom_series(_write_series(tmp_path / "jitter", slices))
    assert vol.spacing[2] == pytest.approx(2.1)


def test_dicom_pixel_spacing_axis_order(tmp_path):
    # PixelSpacing is (row spacing, column spacing) = (dy, dx)
    blob = dicom_bytes.dicom_file(
        rows=2, cols=3, pixels=dicom_bytes.pack_pixels(list(range(6))),
        pixel_spacing=(0.5, 0.25))
    vol = ns.load_dicom_series(_write_series(tmp_path / "ps", [("a.dcm", blob)]))
    assert vol.dims == (3, 2, 1)
    assert vol.spacing[:2] == (0.25, 0.5)
    np.testing.assert_array_equal(vol.grid[0], [[0, 1, 2], [3, 4, 5]])


# ---------------------------------------------------------------------------
# OBJ meshes

def _obj(tmp_path, text, name="m.obj"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_obj_single_triangle(tmp_path):
    mesh = ns.load_mesh(_obj(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"))
    assert len(mesh.triangles) == 1
    np.testing.assert_array_equal(mesh.triangles, [[0, 1, 2]])
    np.testing.assert_array_equal(mesh.vertices, [[0, 0, 0], [1, 0, 0], [0, 1, 0]])


def test_obj_quad_fan_split(tmp_path):
    text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"
    mesh = ns.load_mesh(_obj(tmp_path, text))
    np.testing.assert_array_equal(mesh.triangles, [[0, 1, 2], [0, 2, 3]])


def test_obj_out_of_range_vertex(tmp_path):
    text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 99\n"
    with pytest.raises(ParseError, match="line 4"):
        ns.load_mesh(_obj(tmp_path, text))


def test_obj_negative_indices(tmp_path):
    text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n"
    mesh = ns.load_mesh(_obj(tmp_path, text))
    np.testing.assert_array_equal(mesh.triangles, [[0, 1, 2]])


def test_obj_no_faces(tmp_path):
    with pytest.raises(EmptyMesh):
        ns.load_mesh(_obj(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\n"))


def test_obj_vertex_normals_by_reference(tmp_path):
    text = (
        "v 0 0 0\nv 1 0 0\nv 0 1 0\n"
        "vn 0 0 2\nvn 0 0 2\nvn 0 0 2\n"
        "f 1//1 2//2 3//3\n"
    )
    mesh = ns.load_mesh(_obj(tmp_path, text))
    np.testing.assert_allclose(mesh.normals, [[0, 0, 1]] * 3)


def test_obj_write_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    verts = rng.normal(scale=40, size=(12, 3))
    tris = np.array([[0, 1, 2], [3, 4, 5], [6, 7, 8], [9, 10, 11]])
    normals = rng.normal(size=(12, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    mesh = ns.Mesh(vertices=verts, triangles=tris, normals=normals)
    p = tmp_path / "rt.obj"
    ns.write_obj(mesh, p)
    back = ns.load_mesh(p)
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.triangles, mesh.triangles)
    np.testing.assert_allclose(back.normals, mesh.normals, atol=1e-15)


# ---------------------------------------------------------------------------
# Histogram and Volume basics

def test_histogram_two_bins():
    vol = ns.volume_from_array(np.array([0, 0, 1, 1], dtype=np.float32).reshape(1, 1, 4))
    h = ns.histogram(vol, 2)
    np.testing.assert_array_equal(h.counts, [2, 2])
    assert h.range == (0.0, 1.0)


def test_histogram_constant_volume():
    vol = ns.volume_from_array(np.full((2, 2, 2), 3.0, dtype=np.float32))
    h = ns.histogram(vol, 8)
    np.testing.assert_array_equal(h.counts, [8, 0, 0, 0, 0, 0, 0, 0])


def test_histogram_identity_ramp():
    vol = ns.volume_from_array(np.arange(256, dtype=np.float32).reshape(4, 8, 8))
    h = ns.histogram(vol, 256)
    np.testing.assert_array_equal(h.counts, np.ones(256, dtype=np.int64))


def test_histogram_counts_sum_to_voxel_count():
    rng = np.random.default_rng(19)
    for _ in range(200):
        shape = tuple(rng.integers(1, 7, 3))
        vol = ns.volume_from_array(rng.normal(size=shape).astype(np.float32))
        bins = int(rng.integers(2, 64))
        assert ns.histogram(vol, bins).counts.sum() == vol.voxel_count


def test_histogram_rejects_degenerate_bins():
    vol = ns.volume_from_array(np.zeros((2, 2, 2), dtype=np.float32))
    with pytest.raises(InvalidArgument):
        ns.histogram(vol, 1)


def test_volume_validation():
    with pytest.raises(InvalidArgument):
        ns.volume_from_array(np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(InvalidArgument):
        ns.volume_from_array(np.zeros((2, 2, 2), dtype=np.float32), spacing=(0, 1, 1))
    with pytest.raises(InvalidArgument):
        ns.volume_from_array(np.zeros((2, 2, 2), dtype=np.float32),
                             orientation=np.ones((3, 3)))


def test_volume_world_index_round_trip():
    rng = np.random.default_rng(5)
    th = 0.3
    rot = np.array([
        [np.cos(th), -np.sin(th), 0],
        [np.sin(th), np.cos(th), 0],
        [0, 0, 1],
    ])
    vol = ns.volume_from_array(
        rng.normal(size=(3, 4, 5)).astype(np.float32),
        spacing=(0.7, 1.1, 2.3), origin=(5, -3, 2), orientation=rot)
    idx = rng.uniform(0, 3, size=(20, 3))
    back = vol.world_to_index(vol.index_to_world(idx))
    np.testing.assert_allclose(back, idx, atol=1e-12)

    # voxel (0,0,0) center sits at the origin
    np.testing.assert_allclose(vol.index_to_world([0, 0, 0]), [5, -3, 2], atol=1e-15)


def test_volume_grid_view_shares_memory():
    vol = ns.volume_from_array(np.zeros((2, 3, 4), dtype=np.float32))
    assert vol.grid.shape == (2, 3, 4)
    assert vol.grid.base is vol.scalars or vol.grid.base is vol.scalars.base
