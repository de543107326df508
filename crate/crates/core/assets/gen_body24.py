"""Regenerates body24.json, the bundled 24-joint articulated body model.

Topology follows the common 24-joint human skeleton; offsets are in meters,
y up, z forward. Run from this directory: python3 gen_body24.py
"""
import json

import numpy as np

JOINTS = [
    ("pelvis", -1, (0.0, 0.0, 0.0)),
    ("left_hip", 0, (0.07, -0.09, 0.0)),
    ("right_hip", 0, (-0.07, -0.09, 0.0)),
    ("spine1", 0, (0.0, 0.11, -0.02)),
    ("left_knee", 1, (0.04, -0.38, 0.0)),
    ("right_knee", 2, (-0.04, -0.38, 0.0)),
    ("spine2", 3, (0.0, 0.13, 0.0)),
    ("left_ankle", 4, (0.0, -0.40, -0.04)),
    ("right_ankle", 5, (0.0, -0.40, -0.04)),
    ("spine3", 6, (0.0, 0.05, 0.02)),
    ("left_foot", 7, (0.0, -0.05, 0.12)),
    ("right_foot", 8, (0.0, -0.05, 0.12)),
    ("neck", 9, (0.0, 0.21, -0.03)),
    ("left_collar", 9, (0.08, 0.12, 0.0)),
    ("right_collar", 9, (-0.08, 0.12, 0.0)),
    ("head", 12, (0.0, 0.09, 0.05)),
    ("left_shoulder", 13, (0.12, 0.03, 0.0)),
    ("right_shoulder", 14, (-0.12, 0.03, 0.0)),
    ("left_elbow", 16, (0.26, 0.0, 0.0)),
    ("right_elbow", 17, (-0.26, 0.0, 0.0)),
    ("left_wrist", 18, (0.25, 0.0, 0.0)),
    ("right_wrist", 19, (-0.25, 0.0, 0.0)),
    ("left_hand", 20, (0.08, 0.0, 0.0)),
    ("right_hand", 21, (-0.08, 0.0, 0.0)),
]

EVAL = [
    "right_ankle", "right_knee", "right_hip", "left_hip", "left_knee", "left_ankle",
    "right_wrist", "right_elbow", "right_shoulder", "left_shoulder", "left_elbow",
    "left_wrist", "neck", "head",
]

B = 10
V = 64
rng = np.random.default_rng(20210401)
names = [j[0] for j in JOINTS]
offsets = np.array([j[2] for j in JOINTS])
basis = np.zeros((len(JOINTS), B, 3))


def idx(*ns):
    return [names.index(n) for n in ns]


basis[1:, 0] = 0.06 * offsets[1:]  # overall stature
for k in idx("left_knee", "right_knee", "left_ankle", "right_ankle"):
    basis[k, 1] = 0.05 * offsets[k]  # leg length
for k in idx("left_elbow", "right_elbow", "left_wrist", "right_wrist"):
    basis[k, 2] = 0.05 * offsets[k]  # arm length
for k in idx("left_collar", "right_collar", "left_shoulder", "right_shoulder"):
    basis[k, 3, 0] = 0.04 * offsets[k, 0]  # shoulder width
for k in idx("left_hip", "right_hip"):
    basis[k, 4, 0] = 0.05 * offsets[k, 0]  # hip width
for k in idx("spine1", "spine2", "spine3"):
    basis[k, 5] = 0.05 * offsets[k]  # torso length
for k in idx("neck", "head"):
    basis[k, 6] = 0.05 * offsets[k]  # neck and head
basis[1:, 7:] = rng.normal(0.0, 0.004, size=(len(JOINTS) - 1, B - 7, 3))

children = {i: [k for k, j in enumerate(JOINTS) if j[1] == i] for i in range(len(JOINTS))}
vertices = []
for i in range(V):
    j = i % len(JOINTS)
    kids = children[j]
    along = offsets[kids].mean(axis=0) if kids else np.array([0.0, 0.04, 0.0])
    frac = rng.uniform(0.2, 0.8)
    off = frac * along + rng.normal(0.0, 0.03, size=3)
    vertices.append({"joint": j, "offset": [round(float(x), 6) for x in off]})

model = {
    "joints": [
        {
            "name": n,
            "parent": p,
            "rest_offset": list(o),
            "shape_basis": [[round(float(x), 6) for x in row] for row in basis[k]],
        }
        for k, (n, p, o) in enumerate(JOINTS)
    ],
    "vertices": vertices,
    "eval_joints": EVAL,
}

def line(obj):
    return json.dumps(obj, separators=(", ", ": "))


with open("body24.json", "w") as fh:
    fh.write('{\n "joints": [\n')
    fh.write(",\n".join("  " + line(j) for j in model["joints"]))
    fh.write('\n ],\n "vertices": [\n')
    fh.write(",\n".join("  " + line(v) for v in model["vertices"]))
    fh.write('\n ],\n "eval_joints": ' + line(model["eval_joints"]) + "\n}\n")
