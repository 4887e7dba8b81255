"""Desk-scale synthetic skeleton data: a 9-joint stick figure performing
four parameterized motions. Classes are separable in every stream: they
differ in mean posture (joint stream), in which bones deform (bone
stream), and in where frame-to-frame change concentrates (motion streams).

Joints: 0 pelvis (center), 1 chest, 2 head, 3 left hand, 4 right hand,
5 left hip, 6 right hip, 7 left foot, 8 right foot.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset, SkeletonSample
from .errors import ConfigError
from .graph import SkeletonTopology, build_topology

SYNTH_EDGES = ((0, 1), (1, 2), (1, 3), (1, 4), (0, 5), (0, 6), (5, 7), (6, 8))
SYNTH_CENTER = 0
SYNTH_JOINTS = 9

BASE_POSE = np.array([
    [0.00, 0.00, 1.00],   # pelvis
    [0.00, 0.00, 1.45],   # chest
    [0.00, 0.00, 1.70],   # head
    [0.45, 0.00, 1.45],   # left hand
    [-0.45, 0.00, 1.45],  # right hand
    [0.12, 0.00, 0.95],   # left hip
    [-0.12, 0.00, 0.95],  # right hip
    [0.12, 0.00, 0.00],   # left foot
    [-0.12, 0.00, 0.00],  # right foot
])

DEFAULT_CLASSES = ("still", "wave", "pulse", "march")
JITTER = 0.012


def synth_topology() -> SkeletonTopology:
    return build_topology(preset="custom", custom_edges=SYNTH_EDGES, center_joint=SYNTH_CENTER)


def _make_sample(class_name: str, t: int, rng: np.random.Generator) -> np.ndarray:
    frames = np.tile(BASE_POSE, (t, 1, 1))                     # [T, V, 3]
    phase = rng.uniform(0.0, 2.0 * np.pi)
    cycles = rng.uniform(1.0, 2.5)
    amp = rng.uniform(0.20, 0.35)
    theta = 2.0 * np.pi * cycles * np.arange(t) / t + phase

    if class_name == "still":
        pass
    elif class_name == "wave":
        # left hand raised and oscillating vertically
        frames[:, 3, 2] += 0.25 + amp * np.sin(theta)
    elif class_name == "pulse":
        # whole body breathes around the pelvis; every bone stretches
        scale = 1.15 + rng.uniform(0.15, 0.25) * np.sin(theta)
        frames = BASE_POSE[0] + (frames - BASE_POSE[0]) * scale[:, None, None]
    elif class_name == "march":
        # feet swing forward/back in antiphase around offset stances
        frames[:, 7, 1] += 0.18 + amp * np.sin(theta)
        frames[:, 8, 1] += -0.18 - amp * np.sin(theta)
    else:
        raise ConfigError(f"unknown synthetic class {class_name!r}")

    frames = frames + rng.normal(0.0, JITTER, size=frames.shape)
    frames = frames + rng.uniform(-0.2, 0.2, size=3)           # global placement
    return frames[:, None, :, :]                               # [T, M=1, V, 3]


def synth_dataset(num_per_class: int, t: int = 32, v: int = SYNTH_JOINTS,
                  class_names=DEFAULT_CLASSES, seed: int = 0) -> Dataset:
    """Labeled synthetic sequences, deterministic in `seed`."""
    if v != SYNTH_JOINTS:
        raise ConfigError(f"synthetic generator supports V={SYNTH_JOINTS} only, got {v}")
    if t < 2:
        raise ConfigError(f"synthetic sequences need T >= 2, got {t}")
    class_names = list(class_names)
    rng = np.random.default_rng(seed)
    samples = []
    for label, name in enumerate(class_names):
        for i in range(num_per_class):
            samples.append(SkeletonSample(
                id=f"{name}-s{seed}-{i:04d}", label=label,
                data=_make_sample(name, t, rng)))
    return Dataset(samples=samples, class_names=class_names, modality="joint")
