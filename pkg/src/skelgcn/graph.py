"""Human-body skeleton graphs and their partitioned, normalized adjacency.

Each vertex's 1-hop neighborhood is split into three subsets: the vertex
itself, the centripetal neighbors (nearer the center joint by hop count),
and the centrifugal neighbors (farther). Equal-hop neighbors join the
self subset. The raw 0/1 matrices are then degree-normalized with a
0.001 regularizer on the diagonal so empty rows stay finite.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

NUM_SUBSETS = 3
ALPHA_REG = 0.001

# 0-based bone list for the 25-joint depth-sensor layout; joint 1 is the
# mid-spine used as the center.
NTU25_EDGES = (
    (0, 1), (1, 20), (2, 20), (3, 2), (4, 20), (5, 4), (6, 5), (7, 6),
    (8, 20), (9, 8), (10, 9), (11, 10), (12, 0), (13, 12), (14, 13),
    (15, 14), (16, 0), (17, 16), (18, 17), (19, 18), (21, 22), (22, 7),
    (23, 24), (24, 11),
)
NTU25_CENTER = 1

# 0-based bone list for the 18-joint pose-estimation layout; joint 1 is
# the neck used as the center.
KINETICS18_EDGES = (
    (4, 3), (3, 2), (7, 6), (6, 5), (13, 12), (12, 11), (10, 9), (9, 8),
    (11, 5), (8, 2), (5, 1), (2, 1), (0, 1), (15, 0), (14, 0), (17, 15),
    (16, 14),
)
KINETICS18_CENTER = 1

PRESETS = {
    "ntu25": (25, NTU25_EDGES, NTU25_CENTER),
    "kinetics18": (18, KINETICS18_EDGES, KINETICS18_CENTER),
}


@dataclass(frozen=True)
class SkeletonTopology:
    """Validated joint graph: vertex count, undirected bones, center joint."""

    num_joints: int
    edges: tuple[tuple[int, int], ...]
    center_joint: int
    preset: str = "custom"


@dataclass(frozen=True)
class PartitionedAdjacency:
    """Raw 0/1 subset matrices and their normalized form, both [3, V, V]."""

    raw: np.ndarray
    normalized: np.ndarray
    alpha_reg: float = ALPHA_REG


def build_topology(preset: str = "ntu25", custom_edges=None, center_joint=None) -> SkeletonTopology:
    if preset in PRESETS:
        v, edges, default_center = PRESETS[preset]
        center = default_center if center_joint is None else int(center_joint)
    elif preset == "custom":
        if custom_edges is None or center_joint is None:
            raise ConfigError("custom topology needs custom_edges and center_joint")
        edges = tuple(custom_edges)
        v = 1 + max(max(i, j) for i, j in edges) if edges else 1
        center = int(center_joint)
    else:
        raise ConfigError(f"unknown topology preset {preset!r}")

    canon = set()
    for i, j in edges:
        i, j = int(i), int(j)
        if i == j:
            raise ConfigError(f"self-loop edge ({i}, {j}) not allowed")
        if not (0 <= i < v and 0 <= j < v):
            raise ConfigError(f"edge ({i}, {j}) out of range for {v} joints")
        canon.add((min(i, j), max(i, j)))
    if not 0 <= center < v:
        raise ConfigError(f"center joint {center} out of range for {v} joints")

    topo = SkeletonTopology(num_joints=v, edges=tuple(sorted(canon)),
                            center_joint=center, preset=preset)
    dist = hop_distances(topo, validate=False)
    if (dist < 0).any():
        missing = [int(i) for i in np.flatnonzero(dist < 0)]
        raise ConfigError(f"graph is disconnected: joints {missing} unreachable from center {center}")
    return topo


def hop_distances(topo: SkeletonTopology, validate: bool = True) -> np.ndarray:
    """Breadth-first hop count from each joint to the center joint."""
    neighbors: list[list[int]] = [[] for _ in range(topo.num_joints)]
    for i, j in topo.edges:
        neighbors[i].append(j)
        neighbors[j].append(i)
    dist = np.full(topo.num_joints, -1, dtype=np.int64)
    dist[topo.center_joint] = 0
    queue = deque([topo.center_joint])
    while queue:
        u = queue.popleft()
        for w in neighbors[u]:
            if dist[w] < 0:
                dist[w] = dist[u] + 1
                queue.append(w)
    if validate and (dist < 0).any():
        missing = [int(i) for i in np.flatnonzero(dist < 0)]
        raise ConfigError(f"graph is disconnected: joints {missing} unreachable "
                          f"from center {topo.center_joint}")
    return dist


def partition_neighbors(topo: SkeletonTopology) -> np.ndarray:
    """Raw subset matrices [3, V, V]: self (+ equal-hop), centripetal, centrifugal."""
    v = topo.num_joints
    hop = hop_distances(topo)
    raw = np.zeros((NUM_SUBSETS, v, v), dtype=np.float64)
    raw[0] = np.eye(v)
    for i, j in topo.edges:
        for a, b in ((i, j), (j, i)):
            if hop[b] < hop[a]:
                raw[1, a, b] = 1.0
            elif hop[b] > hop[a]:
                raw[2, a, b] = 1.0
            else:
                raw[0, a, b] = 1.0
    return raw


def normalize_adjacency(raw: np.ndarray, alpha_reg: float = ALPHA_REG) -> np.ndarray:
    """A_k[i, j] = raw[i, j] / sqrt((rowsum_i + a) * (rowsum_j + a))."""
    raw = np.asarray(raw, dtype=np.float64)
    if not np.isin(raw, (0.0, 1.0)).all():
        raise ConfigError("normalize_adjacency expects 0/1 entries")
    degree = raw.sum(axis=-1) + alpha_reg
    inv_sqrt = 1.0 / np.sqrt(degree)
    return raw * inv_sqrt[..., :, None] * inv_sqrt[..., None, :]


def partitioned_adjacency(topo: SkeletonTopology, alpha_reg: float = ALPHA_REG) -> PartitionedAdjacency:
    raw = partition_neighbors(topo)
    return PartitionedAdjacency(raw=raw, normalized=normalize_adjacency(raw, alpha_reg),
                                alpha_reg=alpha_reg)


def tree_parents(topo: SkeletonTopology) -> np.ndarray:
    """Parent index per joint (center's parent is itself); requires a tree."""
    if len(topo.edges) != topo.num_joints - 1:
        raise ConfigError(
            f"topology is not a tree: {len(topo.edges)} edges for {topo.num_joints} joints")
    neighbors: list[list[int]] = [[] for _ in range(topo.num_joints)]
    for i, j in topo.edges:
        neighbors[i].append(j)
        neighbors[j].append(i)
    parent = np.full(topo.num_joints, -1, dtype=np.int64)
    parent[topo.center_joint] = topo.center_joint
    queue = deque([topo.center_joint])
    while queue:
        u = queue.popleft()
        for w in neighbors[u]:
            if parent[w] < 0:
                parent[w] = u
                queue.append(w)
    if (parent < 0).any():
        raise ConfigError("topology is not a tree: unreachable joints present")
    return parent
