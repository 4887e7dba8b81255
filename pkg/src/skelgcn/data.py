"""Skeleton sequence ingestion, preprocessing, and modality derivation.

Samples travel as [T][M][V][C] float arrays. Absent bodies or joints are
exact zeros and every op preserves that. The standard pipeline order is
select bodies -> center on the spine joint -> align axes -> pad frames;
the four stream modalities (joint, bone, joint_motion, bone_motion) are
derived afterwards. All ops are pure: they return new samples.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError
from .graph import SkeletonTopology, tree_parents

log = logging.getLogger(__name__)

MODALITIES = ("joint", "bone", "joint_motion", "bone_motion")
SAMPLE_FIELDS = {"id", "label", "T", "M", "V", "C", "data"}


@dataclass
class SkeletonSample:
    id: str
    label: int | None
    data: np.ndarray  # [T, M, V, C] float64

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.data.shape


@dataclass
class Dataset:
    samples: list[SkeletonSample]
    class_names: list[str]
    modality: str = "joint"


# ---------------------------------------------------------------------------
# NDJSON serialization

def _sample_to_obj(s: SkeletonSample) -> dict:
    t, m, v, c = s.data.shape
    return {"id": s.id, "label": s.label, "T": t, "M": m, "V": v, "C": c,
            "data": s.data.tolist()}


def _sample_from_obj(obj: dict) -> SkeletonSample:
    unknown = set(obj) - SAMPLE_FIELDS
    if unknown:
        raise DataError(f"unknown fields {sorted(unknown)}")
    missing = SAMPLE_FIELDS - set(obj)
    if missing:
        raise DataError(f"missing fields {sorted(missing)}")
    t, m, v, c = (obj["T"], obj["M"], obj["V"], obj["C"])
    for name, val in (("T", t), ("M", m), ("V", v), ("C", c)):
        if not isinstance(val, int) or val < 1:
            raise DataError(f"dimension {name}={val!r} must be a positive integer")
    label = obj["label"]
    if label is not None and (not isinstance(label, int) or label < 0):
        raise DataError(f"label {label!r} must be null or a non-negative integer")
    try:
        data = np.asarray(obj["data"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DataError(f"non-numeric coordinate: {exc}") from exc
    if data.shape != (t, m, v, c):
        raise DataError(f"data shape {data.shape} does not match T/M/V/C ({t},{m},{v},{c})")
    if not np.isfinite(data).all():
        raise DataError("non-finite coordinate")
    return SkeletonSample(id=str(obj["id"]), label=label, data=data)


def content_sha256(lines: list[str]) -> str:
    h = hashlib.sha256()
    for line in lines:
        h.update(line.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def write_samples(path, ds: Dataset, tool_version: str = "0", config: dict | None = None) -> None:
    """Write one sample per line, preceded by a header line carrying the tool
    version, the resolved config, and a checksum of the content lines.
    Floats serialize via their shortest round-trip decimal form."""
    lines = [json.dumps(_sample_to_obj(s), separators=(",", ":")) for s in ds.samples]
    header = {"tool_version": tool_version, "modality": ds.modality,
              "classes": ds.class_names, "config": config or {},
              "content_sha256": content_sha256(lines)}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, separators=(",", ":"), sort_keys=True) + "\n")
        for line in lines:
            fh.write(line + "\n")


def parse_samples(path) -> Dataset:
    """Read an NDJSON sample file; a leading header line (recognized by its
    tool_version key) is validated against its checksum if present."""
    with open(path, "r", encoding="utf-8") as fh:
        raw_lines = fh.read().splitlines()
    modality = "joint"
    class_names: list[str] = []
    start = 0
    if raw_lines:
        try:
            first = json.loads(raw_lines[0])
        except json.JSONDecodeError:
            first = None
        if isinstance(first, dict) and "tool_version" in first:
            start = 1
            modality = first.get("modality", "joint")
            class_names = list(first.get("classes", []))
            want = first.get("content_sha256")
            if want is not None and want != content_sha256(raw_lines[1:]):
                raise DataError(f"{path}: content checksum mismatch")

    samples: list[SkeletonSample] = []
    errors: list[str] = []
    dims = None
    for lineno, line in enumerate(raw_lines[start:], start=start + 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise DataError("line is not a JSON object")
            s = _sample_from_obj(obj)
            here = s.data.shape[2:]  # V, C must agree across the file
            if dims is None:
                dims = here
            elif here != dims:
                raise DataError(f"V/C {here} inconsistent with earlier samples {dims}")
            samples.append(s)
        except (json.JSONDecodeError, DataError) as exc:
            errors.append(f"line {lineno}: {exc}")
    if errors:
        raise DataError(f"{path}: {len(errors)} malformed line(s): " + "; ".join(errors))
    if not samples:
        log.warning("%s: no samples parsed (empty file)", path)
    if not class_names:
        labels = [s.label for s in samples if s.label is not None]
        k = max(labels) + 1 if labels else 0
        class_names = [f"class_{i}" for i in range(k)]
    return Dataset(samples=samples, class_names=class_names, modality=modality)


# ---------------------------------------------------------------------------
# preprocessing ops

def body_energy(sample: SkeletonSample) -> np.ndarray:
    """Per-body motion energy: each joint/channel series' standard deviation
    over frames, averaged over joints and channels. A body whose frames are
    all identical has zero energy."""
    per_series_std = sample.data.std(axis=0)         # [M, V, C]
    return per_series_std.mean(axis=(1, 2))


def select_bodies_by_energy(sample: SkeletonSample, keep: int = 2) -> SkeletonSample:
    """Keep the `keep` most active bodies (ties: lower index), zero-pad the rest."""
    if keep < 1:
        raise ConfigError(f"keep must be >= 1, got {keep}")
    t, m, v, c = sample.data.shape
    energy = body_energy(sample)
    order = sorted(range(m), key=lambda b: (-energy[b], b))[:keep]
    order = sorted(order)
    out = np.zeros((t, keep, v, c), dtype=sample.data.dtype)
    for slot, b in enumerate(order):
        out[:, slot] = sample.data[:, b]
    return replace(sample, data=out)


def _populated(frame_body: np.ndarray) -> bool:
    return bool(np.any(frame_body != 0.0))


def center_on_spine(sample: SkeletonSample, center_joint: int, coord_dims: int | None = None) -> SkeletonSample:
    """Subtract each populated body's center-joint coordinates, per frame."""
    t, m, v, c = sample.data.shape
    if not 0 <= center_joint < v:
        raise ConfigError(f"center joint {center_joint} out of range for V={v}")
    d = coord_dims if coord_dims is not None else min(c, 3)
    out = sample.data.copy()
    populated = np.any(out != 0.0, axis=(2, 3))           # [T, M]
    centers = out[:, :, center_joint, :d].copy()          # [T, M, d]
    out[..., :d] -= np.where(populated[:, :, None, None], centers[:, :, None, :], 0.0)
    return replace(sample, data=out)


def _reference_rotation(sample: SkeletonSample, right_shoulder, left_shoulder,
                        spine_base, spine) -> np.ndarray | None:
    """Rotation with rows (shoulder axis, orthogonalized spine axis, cross),
    from the first frame where body 0 is populated; None if degenerate."""
    t = sample.data.shape[0]
    frame = None
    for ti in range(t):
        if _populated(sample.data[ti, 0]):
            frame = sample.data[ti, 0]
            break
    if frame is None:
        return None
    s_vec = frame[left_shoulder, :3] - frame[right_shoulder, :3]
    v_vec = frame[spine, :3] - frame[spine_base, :3]
    ns = np.linalg.norm(s_vec)
    if ns < 1e-8:
        return None
    u1 = s_vec / ns
    v_orth = v_vec - np.dot(v_vec, u1) * u1
    nv = np.linalg.norm(v_orth)
    if nv < 1e-8:
        return None
    u2 = v_orth / nv
    u3 = np.cross(u1, u2)
    return np.stack([u1, u2, u3])


def align_axes(sample: SkeletonSample, right_shoulder: int = 4, left_shoulder: int = 8,
               spine_base: int = 20, spine: int = 1) -> SkeletonSample:
    """Rotate every frame and body so the shoulder vector lies on the X axis
    and the spine vector lies in the XY plane. One rotation per sample.
    Degenerate reference vectors pass the sample through with a warning."""
    t, m, v, c = sample.data.shape
    if c < 3:
        raise ConfigError(f"align_axes needs 3-D coordinates, got C={c}")
    for name, idx in (("right_shoulder", right_shoulder), ("left_shoulder", left_shoulder),
                      ("spine_base", spine_base), ("spine", spine)):
        if not 0 <= idx < v:
            raise ConfigError(f"align_axes joint {name}={idx} out of range for V={v}")
    rot = _reference_rotation(sample, right_shoulder, left_shoulder, spine_base, spine)
    if rot is None:
        log.warning("sample %s: degenerate reference vectors, skipping axis alignment", sample.id)
        return replace(sample, data=sample.data.copy())
    out = sample.data.copy()
    coords = out[..., :3].reshape(-1, 3)
    out[..., :3] = (coords @ rot.T).reshape(t, m, v, 3)
    return replace(sample, data=out)


def pad_frames(sample: SkeletonSample, target_t: int = 300) -> SkeletonSample:
    """Tile the frame sequence cyclically out to exactly `target_t` frames;
    longer sequences keep their first `target_t` frames."""
    if target_t < 1:
        raise ConfigError(f"target frame count must be >= 1, got {target_t}")
    t = sample.data.shape[0]
    idx = np.arange(target_t) % t
    return replace(sample, data=sample.data[idx].copy())


def derive_bones_sample(sample: SkeletonSample, parents: np.ndarray, center: int) -> SkeletonSample:
    out = np.zeros_like(sample.data)
    for j in range(sample.data.shape[2]):
        if j == center:
            continue
        out[:, :, j] = sample.data[:, :, j] - sample.data[:, :, parents[j]]
    return replace(sample, data=out)


def derive_bones(ds: Dataset, topo: SkeletonTopology) -> Dataset:
    """Bone vectors (target joint minus its source joint nearer the center);
    the root joint keeps a zero bone. Requires a tree topology."""
    parents = tree_parents(topo)
    samples = [derive_bones_sample(s, parents, topo.center_joint) for s in ds.samples]
    return Dataset(samples=samples, class_names=list(ds.class_names), modality="bone")


def derive_motion(ds: Dataset) -> Dataset:
    """Frame-to-frame differences; the final frame is zero so T is preserved."""
    out = []
    for s in ds.samples:
        motion = np.zeros_like(s.data)
        motion[:-1] = s.data[1:] - s.data[:-1]
        out.append(replace(s, data=motion))
    modality = "bone_motion" if ds.modality == "bone" else "joint_motion"
    return Dataset(samples=out, class_names=list(ds.class_names), modality=modality)


def _euler_rotation(rng: np.random.Generator, max_deg: float) -> np.ndarray:
    ax, ay, az = np.deg2rad(rng.uniform(-max_deg, max_deg, size=3))
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def augment_random(sample: SkeletonSample, rng_seed: int, max_rot_deg: float = 17.0,
                   max_translate: float = 0.1, crop_t: int | None = None,
                   coord_dims: int | None = None) -> SkeletonSample:
    """Random contiguous temporal crop plus one random rigid transform
    (rotation then translation) applied to all frames; deterministic in
    (input, rng_seed). Absent body-frames stay exactly zero."""
    t, m, v, c = sample.data.shape
    if crop_t is None:
        crop_t = t
    if crop_t > t:
        raise ConfigError(f"crop length {crop_t} exceeds sample length {t}")
    rng = np.random.default_rng(rng_seed)
    start = int(rng.integers(0, t - crop_t + 1))
    out = sample.data[start:start + crop_t].copy()

    d = coord_dims if coord_dims is not None else min(c, 3)
    if d == 3:
        rot = _euler_rotation(rng, max_rot_deg)
    else:
        ang = np.deg2rad(rng.uniform(-max_rot_deg, max_rot_deg))
        rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    shift = rng.uniform(-max_translate, max_translate, size=d)
    populated = np.any(out != 0.0, axis=(2, 3))
    moved = out[..., :d] @ rot.T + shift
    out[..., :d] = np.where(populated[:, :, None, None], moved, out[..., :d])
    return replace(sample, data=out)
