"""Synthetic sample data: a head-like volume and a layered stand-in model.

Nothing here is anatomically accurate; the shapes are ellipsoid stand-ins
sized like a head so the full pipeline (load, register, slice, needle,
score) can run out of the box and in tests. All generation is seeded and
deterministic.
"""

from __future__ import annotations

import json
import os

import numpy as np
from scipy import ndimage

from .ingest import Mesh, Volume, volume_from_array, write_nrrd, write_obj
from .registration import LandmarkSet

AIR = 0.0
SOFT_TISSUE = 300.0
BRAIN = 450.0
BONE = 1000.0
NODULE = 1400.0


def icosphere(subdivisions: int = 3, scale=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> Mesh:
    """Subdivided icosahedron scaled per axis into an ellipsoid."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [v for v in verts]
    for _ in range(subdivisions):
        midcache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in midcache:
                m = verts[a] + verts[b]
                m /= np.linalg.norm(m)
                verts.append(m)
                midcache[key] = len(verts) - 1
            return midcache[key]

        nxt = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            nxt += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = nxt

    unit = np.asarray(verts)
    scale = np.asarray(scale, dtype=np.float64)
    vertices = unit * scale + np.asarray(center, dtype=np.float64)
    # ellipsoid normal direction is the gradient of (x/a)^2+(y/b)^2+(z/c)^2
    normals = unit / scale
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return Mesh(vertices=vertices, triangles=np.asarray(faces, dtype=np.int64),
                normals=normals)


def box_mesh(center=(0.0, 0.0, 0.0), half_extents=(1.0, 1.0, 1.0)) -> Mesh:
    """Closed axis-aligned box, 12 triangles."""
    c = np.asarray(center, dtype=np.float64)
    h = np.asarray(half_extents, dtype=np.float64)
    signs = np.array(
        [[(-1) ** (i & 1), (-1) ** ((i >> 1) & 1), (-1) ** ((i >> 2) & 1)]
         for i in range(8)], dtype=np.float64)
    vertices = c + signs * h
    quads = [
        (0, 2, 6, 4), (1, 5, 7, 3),  # x faces
        (0, 4, 5, 1), (2, 3, 7, 6),  # y faces
        (0, 1, 3, 2), (4, 6, 7, 5),  # z faces
    ]
    triangles = []
    for a, b, cc, d in quads:
        triangles += [(a, b, cc), (a, cc, d)]
    return Mesh(vertices=vertices, triangles=np.asarray(triangles, dtype=np.int64))


def _ellipsoid_field(n, radii_vox, center_vox):
    z, y, x = np.mgrid[0:n, 0:n, 0:n].astype(np.float64)
    cx, cy, cz = center_vox
    a, b, c = radii_vox
    return np.sqrt(((x - cx) / a) ** 2 + ((y - cy) / b) ** 2 + ((z - cz) / c) ** 2)


def synthetic_head_volume(n: int = 96, spacing=(1.5, 1.5, 1.5),
                          origin=(-72.0, -72.0, -72.0), smooth: bool = True) -> Volume:
    """Ellipsoid head phantom: soft tissue shell, bone band, brain interior.

    Two small dense nodules sit inside the brain as practice targets.
    """
    center = ((n - 1) / 2.0,) * 3
    radii = (0.40 * n, 0.46 * n, 0.43 * n)
    e = _ellipsoid_field(n, radii, center)
    grid = np.zeros((n, n, n), dtype=np.float32)
    grid[e <= 1.0] = SOFT_TISSUE
    grid[(e >= 0.80) & (e <= 0.90)] = BONE
    grid[e < 0.80] = BRAIN
    for offset in ((0.12, 0.10, 0.05), (-0.15, -0.05, 0.12)):
        nod_center = tuple(center[k] + offset[k] * n for k in range(3))
        nod = _ellipsoid_field(n, (0.035 * n,) * 3, nod_center)
        grid[nod <= 1.0] = NODULE
    if smooth:
        grid = ndimage.gaussian_filter(grid, sigma=1.0).astype(np.float32)
    return volume_from_array(grid, spacing=spacing, origin=origin)


def head_volume_landmarks(volume: Volume) -> LandmarkSet:
    """Surface landmarks of the phantom's skin ellipsoid, in world mm."""
    n = volume.dims[0]
    center_idx = np.array([(n - 1) / 2.0] * 3)
    radii = np.array([0.40 * n, 0.46 * n, 0.43 * n])
    def world(offset_idx):
        return volume.index_to_world(center_idx + offset_idx)
    a, b, c = radii
    return LandmarkSet(points={
        "left": world((-a, 0.0, 0.0)),
        "right": world((a, 0.0, 0.0)),
        "top": world((0.0, 0.0, c)),
        "bottom": world((0.0, 0.0, -c)),
        "front": world((0.0, -b, 0.0)),
        "back": world((0.0, b, 0.0)),
    })


def perf_volume(n: int = 256) -> Volume:
    """Large smooth benchmark volume (sphere ramp with gentle texture)."""
    z, y, x = np.mgrid[0:n, 0:n, 0:n].astype(np.float32)
    c = (n - 1) / 2.0
    r = np.sqrt((x - c) ** 2 + (y - c) ** 2 + (z - c) ** 2)
    grid = np.clip(1.0 - r / (0.45 * n), 0.0, 1.0) * 1000.0
    grid += 30.0 * np.sin(x * 0.21) * np.sin(y * 0.17) * np.sin(z * 0.13)
    return volume_from_array(np.clip(grid, 0.0, None).astype(np.float32),
                             spacing=(1.0, 1.0, 1.0))


# ---------------------------------------------------------------------------
# Layered demo model (model space is its own mm frame, larger than the scan)

_MODEL_RADII = (78.0, 90.0, 84.0)  # deliberately different size from the volume


def _model_landmarks() -> dict:
    a, b, c = _MODEL_RADII
    return {
        "left": [-a, 0.0, 0.0],
        "right": [a, 0.0, 0.0],
        "top": [0.0, 0.0, c],
        "bottom": [0.0, 0.0, -c],
        "front": [0.0, -b, 0.0],
        "back": [0.0, b, 0.0],
    }


def _model_acupoints() -> list:
    a, b, c = _MODEL_RADII
    def on_skin(theta_deg, phi_deg):
        th = np.deg2rad(theta_deg)
        ph = np.deg2rad(phi_deg)
        return [
            float(a * np.sin(th) * np.cos(ph)),
            float(b * np.sin(th) * np.sin(ph)),
            float(c * np.cos(th)),
        ]
    return [
        {"name": "crown", "position": on_skin(0.0, 0.0),
         "tolerance_radius": 5.0, "target_layer": "skin", "max_safe_depth": 20.0},
        {"name": "forehead", "position": on_skin(35.0, -90.0),
         "tolerance_radius": 5.0, "target_layer": "skin", "max_safe_depth": 20.0},
        {"name": "temple_left", "position": on_skin(75.0, 180.0),
         "tolerance_radius": 6.0, "target_layer": "skin", "max_safe_depth": 25.0},
        {"name": "temple_right", "position": on_skin(75.0, 0.0),
         "tolerance_radius": 6.0, "target_layer": "skin", "max_safe_depth": 25.0},
        {"name": "occiput", "position": on_skin(55.0, 90.0),
         "tolerance_radius": 8.0, "target_layer": "skin"},
    ]


def write_demo_model(directory) -> str:
    """Write the layered model (OBJ meshes + manifest + acupoints); returns
    the manifest path."""
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    a, b, c = _MODEL_RADII
    layers = [
        ("skin", icosphere(3, scale=(a, b, c)), (0.87, 0.68, 0.55), False),
        ("skull", icosphere(3, scale=(0.86 * a, 0.86 * b, 0.86 * c)),
         (0.92, 0.90, 0.82), False),
        ("brain", icosphere(3, scale=(0.74 * a, 0.74 * b, 0.74 * c)),
         (0.78, 0.52, 0.56), False),
        ("vessel", icosphere(2, scale=(4.0, 4.0, 0.62 * c), center=(0.25 * a, 0.0, 0.0)),
         (0.75, 0.12, 0.12), True),
    ]
    manifest_layers = []
    for name, mesh, color, avoid in layers:
        mesh_path = f"{name}.obj"
        write_obj(mesh, os.path.join(directory, mesh_path))
        entry = {"name": name, "mesh_path": mesh_path, "color": list(color)}
        if avoid:
            entry["avoid"] = True
        manifest_layers.append(entry)

    with open(os.path.join(directory, "acupoints.json"), "w", encoding="utf-8") as f:
        json.dump(_model_acupoints(), f, indent=2)
        f.write("\n")

    manifest = {
        "name": "demo-head",
        "layers": manifest_layers,
        "landmarks": _model_landmarks(),
        "acupoints_path": "acupoints.json",
    }
    manifest_path = os.path.join(directory, "model.json")
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    return manifest_path


def write_data_root(root, n: int = 96) -> dict:
    """Populate a data root the service can browse; returns the asset paths."""
    root = os.fspath(root)
    volumes_dir = os.path.join(root, "volumes")
    os.makedirs(volumes_dir, exist_ok=True)
    volume = synthetic_head_volume(n=n)
    volume_path = os.path.join(volumes_dir, "head.nrrd")
    write_nrrd(volume, volume_path, encoding="gzip")

    landmarks_path = os.path.join(volumes_dir, "head.landmarks.json")
    with open(landmarks_path, "w", encoding="utf-8") as f:
        json.dump(head_volume_landmarks(volume).to_dict(), f, indent=2)
        f.write("\n")

    model_path = write_demo_model(os.path.join(root, "models", "head"))
    return {"volume": volume_path, "model": model_path, "landmarks": landmarks_path}
