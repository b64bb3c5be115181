"""
One training repetition, scripted
=================================

Creates a session, registers the model, places a needle on an acupoint,
reads back the layer crossings and score, and saves the session JSON. This
is the whole loop a trainee runs interactively, driven through the same
command API the service exposes.
"""

import os
import tempfile

import json

import numpy as np

import needlesim as ns
from needlesim.scene import mutate, new_session, save, score_needle

out_dir = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out_dir, exist_ok=True)

data_root = tempfile.mkdtemp(prefix="needlesim-demo-")
paths = ns.write_data_root(data_root, n=96)

session = new_session("rep1", paths["volume"], paths["model"],
                      data_root=data_root)

with open(paths["model"]) as f:
    source_landmarks = json.load(f)["landmarks"]
with open(paths["landmarks"]) as f:
    target_landmarks = json.load(f)
session = mutate(session, {"type": "SetRegistration",
                           "source_landmarks": source_landmarks,
                           "target_landmarks": target_landmarks})

# aim at the crown point: tip on the acupoint, shaft going straight down
target = session.acupoint_world("crown")
direction = np.array([0.0, 0.0, -1.0])
depth = 12.0
entry = target - depth * direction

session = mutate(session, {"type": "AddNeedle", "needle": {
    "id": "n1", "length_mm": 40.0,
    "base": (entry - (40.0 - 0.0) * direction).tolist(),
    "dir": direction.tolist(), "depth_mm": 0.0}})
session = mutate(session, {"type": "InsertNeedle", "id": "n1",
                           "depth_mm": depth, "entry": entry.tolist(),
                           "dir": direction.tolist()})

report, crossings = score_needle(session, "n1", "crown")
print("tip distance:", round(report.tip_distance_mm, 3), "mm")
print("hit:", report.hit, " depth violation:", report.depth_violation)
for c in crossings:
    exit_text = "tip inside" if c.exit_depth_mm is None else f"{c.exit_depth_mm:.1f} mm"
    print(f"  crosses {c.layer}: enters {c.entry_depth_mm:.1f} mm, exits {exit_text}")

# a second, deliberately bad placement: too deep for this point
session = mutate(session, {"type": "AddNeedle", "needle": {
    "id": "n2", "length_mm": 40.0, "base": (entry + [0, 0, 40]).tolist(),
    "dir": direction.tolist(), "depth_mm": 0.0}})
session = mutate(session, {"type": "InsertNeedle", "id": "n2",
                           "depth_mm": 30.0, "entry": entry.tolist(),
                           "dir": direction.tolist()})
bad, _ = score_needle(session, "n2", "crown")
print("n2 depth violation:", bad.depth_violation,
      f"(30 mm inserted, 20 mm safe)")

session_path = os.path.join(out_dir, "session.json")
save(session, session_path)
print("saved", session_path, "at revision", session.revision)
