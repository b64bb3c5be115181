"""
Putting the model on the patient
================================

Six labeled landmarks (left/right, top/bottom, front/back) on each side
define an oriented bounding box; matching the two boxes yields the
similarity transform that drapes the layered anatomy model over the imaging
volume. The same pose then drives the side-by-side teaching layout.
"""

import json
import os
import tempfile

import numpy as np

import needlesim as ns
from needlesim.scene import mutate, new_session, render_frame

out_dir = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out_dir, exist_ok=True)

ns.warm_kernels()

# write the sample data root (volume + landmarks + layered model) to disk,
# the same layout the HTTP service browses
data_root = tempfile.mkdtemp(prefix="needlesim-demo-")
paths = ns.write_data_root(data_root, n=96)
print("data root:", data_root)

with open(paths["model"]) as f:
    source_landmarks = json.load(f)["landmarks"]
with open(paths["landmarks"]) as f:
    target_landmarks = json.load(f)

# the transform alone, outside any session: align model box onto volume box
src = ns.LandmarkSet.from_dict(source_landmarks)
tgt = ns.LandmarkSet.from_dict(target_landmarks)
transform = ns.align(src, tgt)
print("recovered scale per axis:", np.round(transform.scale, 4))
print("translation (mm):", np.round(transform.translation, 2))

# the same alignment as a session command, which also records the target box
session = new_session("demo", paths["volume"], paths["model"],
                      data_root=data_root)
session = mutate(session, {
    "type": "SetRegistration",
    "source_landmarks": source_landmarks,
    "target_landmarks": target_landmarks,
})

overlap = render_frame(session, width=512, height=512)
overlap.save(os.path.join(out_dir, "layout_overlapping.png"))

session = mutate(session, {"type": "SetLayout", "mode": "side_by_side",
                           "gap_mm": 40.0})
side = render_frame(session, width=512, height=512)
side.save(os.path.join(out_dir, "layout_side_by_side.png"))

print("poses differ by",
      np.round(np.linalg.norm(
          session.model_pose().translation - transform.translation), 1),
      "mm of layout offset")
print("wrote", os.path.join(out_dir, "layout_overlapping.png"),
      "and layout_side_by_side.png")
