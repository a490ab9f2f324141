"""Built-in skeleton schemas and the default cross-schema alignment.

Three schemas ship with the toolkit:

* ``REFERENCE_17``: the common 17-keypoint human convention with 18 bones
  (the standard edge list minus the eye-eye link, which is not a limb).
* ``ANIMAL_20``: quadruped schema with 20 keypoints (4 paws, 4 elbows,
  4 knees, 2 eyes, 2 ears, nose, throat, withers, tailbase).
* ``QUADRUPED_19``: the synthetic-benchmark schema, a tree with exactly
  18 bones so bone-proportion vectors line up with the analysis tooling.

The animal-to-reference alignment below is a documented default guess
(eyes to eyes, ears to ears, nose to nose, front elbows to elbows, rear
elbows to knees, paws to wrists/ankles); it can be overridden by a JSON
name-to-name table at ingest time.
"""

from __future__ import annotations

from .core import SkeletonSchema

REFERENCE_17_NAMES = [
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
]

# 18 bones, 0-indexed. The standard 19-edge list minus (left_eye, right_eye).
REFERENCE_17_BONES = [
    (15, 13), (13, 11), (16, 14), (14, 12), (11, 12),
    (5, 11), (6, 12), (5, 6), (5, 7), (6, 8), (7, 9), (8, 10),
    (0, 1), (0, 2), (1, 3), (2, 4), (3, 5), (4, 6),
]

ANIMAL_20_NAMES = [
    "left_eye", "right_eye", "left_ear", "right_ear", "nose",
    "throat", "withers", "tailbase",
    "left_front_elbow", "right_front_elbow", "left_back_elbow", "right_back_elbow",
    "left_front_knee", "right_front_knee", "left_back_knee", "right_back_knee",
    "left_front_paw", "right_front_paw", "left_back_paw", "right_back_paw",
]

ANIMAL_20_BONES = [
    (4, 0), (4, 1), (0, 2), (1, 3),            # face
    (4, 5), (5, 6), (6, 7),                     # nose-throat-withers-tailbase axis
    (6, 8), (6, 9), (7, 10), (7, 11),           # elbows off the trunk
    (8, 12), (9, 13), (10, 14), (11, 15),       # elbow-knee
    (12, 16), (13, 17), (14, 18), (15, 19),     # knee-paw
]

# Default animal -> reference correspondence, by name. Rear elbows land on
# the reference knees and paws on wrists/ankles; trunk points have no
# reference counterpart and are dropped.
DEFAULT_ANIMAL_TO_REFERENCE = {
    "left_eye": "left_eye",
    "right_eye": "right_eye",
    "left_ear": "left_ear",
    "right_ear": "right_ear",
    "nose": "nose",
    "left_front_elbow": "left_elbow",
    "right_front_elbow": "right_elbow",
    "left_back_elbow": "left_knee",
    "right_back_elbow": "right_knee",
    "left_front_paw": "left_wrist",
    "right_front_paw": "right_wrist",
    "left_back_paw": "left_ankle",
    "right_back_paw": "right_ankle",
}

QUADRUPED_19_NAMES = [
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "withers", "tailbase",
    "left_front_elbow", "right_front_elbow", "left_back_elbow", "right_back_elbow",
    "left_front_knee", "right_front_knee", "left_back_knee", "right_back_knee",
    "left_front_paw", "right_front_paw", "left_back_paw", "right_back_paw",
]

# A tree on 19 joints: exactly 18 bones.
QUADRUPED_19_BONES = [
    (0, 1), (0, 2), (1, 3), (2, 4),             # face
    (0, 5), (5, 6),                              # nose-withers-tailbase axis
    (5, 7), (5, 8), (6, 9), (6, 10),             # elbows off the trunk
    (7, 11), (8, 12), (9, 13), (10, 14),         # elbow-knee
    (11, 15), (12, 16), (13, 17), (14, 18),      # knee-paw
]


def name_map_to_index_map(source: SkeletonSchema, target: SkeletonSchema,
                          table: dict[str, str]) -> dict[int, int]:
    """Translate a name->name alignment table into index->index form."""
    return {source.index_of(a): target.index_of(b) for a, b in table.items()}


def reference_schema() -> SkeletonSchema:
    return SkeletonSchema("reference17", list(REFERENCE_17_NAMES), list(REFERENCE_17_BONES))


def animal_schema(alignment_table: dict[str, str] | None = None) -> SkeletonSchema:
    ref = reference_schema()
    table = alignment_table if alignment_table is not None else DEFAULT_ANIMAL_TO_REFERENCE
    schema = SkeletonSchema("animal20", list(ANIMAL_20_NAMES), list(ANIMAL_20_BONES))
    schema.alignment = name_map_to_index_map(schema, ref, table)
    schema.alignment_to = ref.name
    return schema


def quadruped_schema() -> SkeletonSchema:
    return SkeletonSchema("quadruped19", list(QUADRUPED_19_NAMES), list(QUADRUPED_19_BONES))
