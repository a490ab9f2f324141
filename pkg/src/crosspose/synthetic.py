"""Procedural two-domain generator: articulated stick figures with
controllable bone proportions, textures and pose priors.

Figures are laid out as a kinematic tree on the 19-joint quadruped
schema (18 bones, so proportion vectors line up with the bone-analysis
tooling), scaled uniformly to preserve the requested proportions, and
rendered as anti-aliased strokes. Left and right limbs carry fixed,
clearly different stroke intensities; that convention is shared by every
generated domain, giving the adaptation task the cross-domain common
features it needs while proportions and palette shift between domains.

Generation is bitwise deterministic in the spec seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
import json

import numpy as np

from .core import Instance, Keypoint, Pose
from .datasets import AnnotationSet, save_annotations
from .errors import GenerationError
from .skeletons import QUADRUPED_19_BONES, quadruped_schema

# Kinematic tree: (parent joint, child joint, base direction in degrees).
# Angle convention: 0 = +x (right), 90 = +y (down); the figure faces left.
_TRAVERSAL = [
    (5, 0, 205.0),   # withers -> nose
    (0, 1, 300.0),   # nose -> left eye
    (0, 2, 250.0),   # nose -> right eye
    (1, 3, 320.0),   # left eye -> left ear
    (2, 4, 230.0),   # right eye -> right ear
    (5, 6, 0.0),     # withers -> tailbase
    (5, 7, 100.0),   # withers -> left front elbow
    (5, 8, 75.0),    # withers -> right front elbow
    (6, 9, 105.0),   # tailbase -> left back elbow
    (6, 10, 80.0),   # tailbase -> right back elbow
    (7, 11, 95.0),   # left front elbow -> knee
    (8, 12, 85.0),
    (9, 13, 100.0),
    (10, 14, 80.0),
    (11, 15, 90.0),  # knees -> paws
    (12, 16, 90.0),
    (13, 17, 90.0),
    (14, 18, 90.0),
]

_EDGE_TO_BONE = {frozenset(b): i for i, b in enumerate(QUADRUPED_19_BONES)}

# Per-bone stroke intensity, indexed like QUADRUPED_19_BONES. Left limbs
# bright, right limbs dark: the cue that makes sides distinguishable in 2D.
_BONE_INTENSITY = np.array([
    0.95, 0.60, 0.85, 0.50,   # face: left/right eye and ear links
    1.00, 0.90,               # neck, back
    0.95, 0.55, 0.85, 0.50,   # trunk -> elbows (LF, RF, LB, RB)
    0.80, 0.45, 0.75, 0.40,   # elbow -> knee
    0.95, 0.55, 0.85, 0.50,   # knee -> paw
])


@dataclass
class SynthDomainSpec:
    """Everything one synthetic domain needs: skeleton proportions,
    palette, pose prior, size and seed."""

    name: str
    proportions: np.ndarray                  # 18 relative bone lengths, sum 1
    count: int
    seed: int
    image_size: int = 32
    fg_color: tuple = (0.85, 0.80, 0.70)
    bg_color: tuple = (0.15, 0.18, 0.22)
    color_jitter: float = 0.05
    noise: float = 0.02
    angle_jitter_deg: float = 12.0           # per-joint articulation range
    rotation_jitter_deg: float = 8.0         # whole-figure rotation range
    scale_range: tuple = (0.75, 0.95)        # figure span as fraction of image
    stroke_width: float = 1.6
    human: bool = False

    def __post_init__(self):
        self.proportions = np.asarray(self.proportions, dtype=np.float64)
        if self.proportions.shape != (len(QUADRUPED_19_BONES),):
            raise GenerationError(
                f"spec {self.name!r}: need {len(QUADRUPED_19_BONES)} bone proportions, "
                f"got shape {self.proportions.shape}"
            )
        total = self.proportions.sum()
        if abs(total - 1.0) > 1e-6:
            raise GenerationError(f"spec {self.name!r}: proportions sum to {total}, not 1")
        self.proportions = self.proportions / total
        if self.count < 1:
            raise GenerationError(f"spec {self.name!r}: instance count must be >= 1, got {self.count}")


def _layout(rng: np.random.Generator, spec: SynthDomainSpec) -> np.ndarray:
    """Joint positions of one figure at unit skeleton length."""
    if np.any(spec.proportions <= 1e-6):
        raise GenerationError(f"spec {spec.name!r}: zero-length bone makes the skeleton degenerate")
    pos = np.zeros((19, 2))
    rot = np.deg2rad(rng.uniform(-spec.rotation_jitter_deg, spec.rotation_jitter_deg))
    jit = np.deg2rad(spec.angle_jitter_deg)
    for parent, child, base_deg in _TRAVERSAL:
        angle = np.deg2rad(base_deg) + rot + rng.uniform(-jit, jit)
        length = spec.proportions[_EDGE_TO_BONE[frozenset((parent, child))]]
        pos[child] = pos[parent] + length * np.array([np.cos(angle), np.sin(angle)])
    return pos


def _render(positions: np.ndarray, spec: SynthDomainSpec, rng: np.random.Generator) -> np.ndarray:
    size = spec.image_size
    fg = np.clip(np.asarray(spec.fg_color) + rng.uniform(-spec.color_jitter, spec.color_jitter, 3), 0, 1)
    bg = np.clip(np.asarray(spec.bg_color) + rng.uniform(-spec.color_jitter, spec.color_jitter, 3), 0, 1)
    img = np.ones((size, size, 3)) * bg

    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    pix = np.stack([xs, ys], axis=-1)
    halfw = spec.stroke_width / 2.0
    for b, (i, j) in enumerate(QUADRUPED_19_BONES):
        a, c = positions[i], positions[j]
        seg = c - a
        denom = max(float(seg @ seg), 1e-12)
        t = np.clip(((pix - a) @ seg) / denom, 0.0, 1.0)
        closest = a + t[:, :, None] * seg
        dist = np.linalg.norm(pix - closest, axis=-1)
        cov = np.clip(halfw + 0.5 - dist, 0.0, 1.0)
        img = img * (1.0 - cov[:, :, None]) + cov[:, :, None] * (fg * _BONE_INTENSITY[b])

    img += rng.normal(0.0, spec.noise, img.shape)
    return np.clip(img, 0.0, 1.0)


def _make_instance(spec: SynthDomainSpec, index: int, rng: np.random.Generator):
    size = spec.image_size
    margin = 2.0
    pos = _layout(rng, spec)
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    extent = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
    span = rng.uniform(*spec.scale_range) * (size - 2 * margin)
    scale = span / extent
    scaled = (pos - lo) * scale
    slack = np.maximum(np.array([size, size]) - 2 * margin - (hi - lo) * scale, 0.0)
    offset = margin + rng.uniform(0.0, 1.0, 2) * slack
    joints = scaled + offset

    image = _render(joints, spec, rng)
    pose = Pose([Keypoint(float(x), float(y)) for x, y in joints], "quadruped19")
    lo_j, hi_j = joints.min(axis=0), joints.max(axis=0)
    bbox = (max(float(lo_j[0]) - 1, 0.0), max(float(lo_j[1]) - 1, 0.0),
            min(float(hi_j[0] - lo_j[0]) + 2, size), min(float(hi_j[1] - lo_j[1]) + 2, size))
    return f"{spec.name}-{index:05d}", image, pose, bbox


def generate_domain(spec: SynthDomainSpec, labeled: bool = True) -> AnnotationSet:
    """Render one domain. Labeled sets carry poses on the instances;
    unlabeled sets carry no poses but keep the generator's ground truth in
    ``hidden_truth`` for evaluation only."""
    if not labeled and spec.human:
        raise GenerationError("pose-unlabeled target domains are animal domains")
    schema = quadruped_schema()
    children = np.random.SeedSequence(spec.seed).spawn(spec.count)
    instances = []
    hidden: dict[str, Pose] = {}
    for i in range(spec.count):
        rng = np.random.default_rng(children[i])
        inst_id, image, pose, bbox = _make_instance(spec, i, rng)
        if labeled:
            instances.append(Instance(inst_id, image, pose, y=0 if spec.human else 1, z=0,
                                      species=spec.name, bbox=bbox))
        else:
            instances.append(Instance(inst_id, image, None, y=1, z=1,
                                      species=spec.name, bbox=bbox))
            hidden[inst_id] = pose
    return AnnotationSet(instances, schema, {}, hidden if not labeled else None)


def generate_synthetic(spec_source: SynthDomainSpec,
                       spec_target: SynthDomainSpec) -> tuple[AnnotationSet, AnnotationSet]:
    """A fully labeled source domain and a pose-blinded target domain.

    The target set's instances carry no poses; the generating ground truth
    lives only in the returned set's ``hidden_truth`` (and, when saved, in
    a sidecar file the training code never opens).
    """
    return generate_domain(spec_source, labeled=True), generate_domain(spec_target, labeled=False)


def save_synthetic(aset: AnnotationSet, out_dir, write_images: bool = True) -> None:
    """Persist a generated set: annotations.json, optional PNGs, and a
    ``hidden_truth.json`` sidecar when the set is a blinded target domain."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sizes = {inst.id: inst.image.shape[:2] for inst in aset.instances if inst.image is not None}
    save_annotations(aset, out / "annotations.json", image_sizes=sizes)
    if write_images:
        from PIL import Image
        img_dir = out / "images"
        img_dir.mkdir(exist_ok=True)
        for inst in aset.instances:
            if inst.image is None:
                continue
            arr = (np.clip(inst.image, 0, 1) * 255).round().astype(np.uint8)
            Image.fromarray(arr).save(img_dir / f"{inst.id}.png")
    if aset.hidden_truth:
        payload = {}
        for inst_id, pose in aset.hidden_truth.items():
            payload[inst_id] = [[kp.x, kp.y, kp.v] for kp in pose.keypoints]
        with open(out / "hidden_truth.json", "w") as f:
            json.dump(payload, f)


def default_proportions(kind: str = "animal") -> np.ndarray:
    """Reference proportion vectors. 'animal': compact quadruped.
    'human-like': exaggerated long limbs and neck, the severe-shift
    stand-in for the large labeled source domain."""
    if kind == "animal":
        p = np.array([
            2.0, 2.0, 1.5, 1.5,      # face
            5.0, 9.0,                # neck, back
            3.0, 3.0, 3.0, 3.0,      # trunk -> elbows
            3.0, 3.0, 3.0, 3.0,      # elbow -> knee
            2.5, 2.5, 2.5, 2.5,      # knee -> paw
        ])
    elif kind == "human-like":
        p = np.array([
            1.2, 1.2, 1.0, 1.0,
            8.0, 5.0,
            2.0, 2.0, 2.0, 2.0,
            5.5, 5.5, 5.5, 5.5,
            4.5, 4.5, 4.5, 4.5,
        ])
    else:
        raise GenerationError(f"unknown proportion preset {kind!r}")
    return p / p.sum()
