"""
Cutting the volume open and slicing through it
==============================================

A cut-out plane removes a half-space from the 3D render so interior
structures show in context; a view plane resamples the volume into a flat
CT-style image along any oblique orientation. Needles project onto view
planes and highlight when the tip is near.
"""

import os

import numpy as np

import needlesim as ns
from needlesim.render import draw_segment_2d, plane_uv_to_pixel, resample_view_plane

out_dir = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out_dir, exist_ok=True)

ns.warm_kernels()

volume = ns.synthetic_head_volume(n=96)
lo, hi = volume.value_range
center = volume.origin + 0.5 * (np.array(volume.dims) - 1) * volume.spacing
camera = ns.Camera(position=center + np.array([260.0, 170.0, 210.0]),
                   target=center, image_size=(512, 512))
tf = ns.TransferFunction1D(
    c_min=float(lo), c_max=float(hi),
    opacity_points=np.array([[0.0, 0.0], [0.3, 0.03], [1.0, 0.85]]),
)

# sweep a cut-out plane through the head: everything on the +x side of the
# plane disappears, exposing the interior shells
for i, offset in enumerate((-30.0, 0.0, 30.0)):
    cut = ns.SlicingPlane(id="cut", kind="cutout",
                          p_p=center + np.array([offset, 0.0, 0.0]),
                          p_n=(1.0, 0.0, 0.0))
    image = ns.render(volume, tf, ns.RenderSettings(), camera, planes=[cut])
    path = os.path.join(out_dir, f"cutout_{i}.png")
    image.save(path)
    print(f"cut at x = center{offset:+.0f} mm -> {path}")

# an oblique view plane plus a needle projected onto it
plane = ns.SlicingPlane(
    id="view", kind="view", p_p=center,
    p_n=np.array([0.0, -np.sqrt(0.5), np.sqrt(0.5)]),
    extent_mm=(160.0, 160.0), resolution=(512, 512),
)
slice_img = resample_view_plane(volume, plane, tf, colorize=True)

needle = ns.insert_needle(
    ns.Needle(id="n", length_mm=40.0, base=center + [0, 0, 120],
              direction=(0, 0, -1), inserted_depth_mm=0.0),
    skin_entry=center + np.array([10.0, 5.0, 40.0]),
    direction=np.array([0.0, 0.0, -1.0]),
    depth_mm=35.0,
)
proj = ns.project_needle(needle, plane, step_mm=1.0)
pts = plane_uv_to_pixel(plane, np.stack([proj.base_2d, proj.tip_2d]))
color = (1.0, 0.85, 0.1) if proj.highlight else (0.25, 0.95, 0.35)
draw_segment_2d(slice_img, pts[0], pts[1], color, thickness=2)
print("needle tip within 2 steps of the plane:", proj.highlight)

slice_path = os.path.join(out_dir, "oblique_slice.png")
slice_img.save(slice_path)
print("wrote", slice_path)
