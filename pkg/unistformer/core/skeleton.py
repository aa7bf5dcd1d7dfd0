"""Skeleton graphs, adjacency priors, sequences and modality transforms."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import ConfigError, ShapeError
from .tensor import Tensor

NTU_NAME = "ntu25"

# NTU RGB+D kinematic tree, 1-based (child, parent) pairs; root is joint 1 (spine base).
_NTU_BONES_1BASE = [
    (2, 1), (21, 2), (3, 21), (4, 3),
    (5, 21), (6, 5), (7, 6), (8, 7),
    (9, 21), (10, 9), (11, 10), (12, 11),
    (13, 1), (14, 13), (15, 14), (16, 15),
    (17, 1), (18, 17), (19, 18), (20, 19),
    (22, 8), (23, 8), (24, 12), (25, 12),
]
NTU_EDGES: Tuple[Tuple[int, int], ...] = tuple((child - 1, parent - 1) for child, parent in _NTU_BONES_1BASE)

# Limb joint groups (0-based) driven by the synthetic motion families.
NTU_LIMBS: Tuple[Tuple[int, ...], ...] = (
    (4, 5, 6, 7, 21, 22),   # left arm
    (8, 9, 10, 11, 23, 24),  # right arm
    (12, 13, 14, 15),        # left leg
    (16, 17, 18, 19),        # right leg
)


@dataclass(frozen=True)
class SkeletonGraph:
    """Undirected joint graph; ``root`` designates the tree root for bone transforms."""

    num_joints: int
    edges: Tuple[Tuple[int, int], ...]
    root: int = 0
    name: str = "custom"

    def __post_init__(self):
        if self.num_joints < 1:
            raise ConfigError(f"graph needs at least one joint, got {self.num_joints}")
        seen = set()
        normalized = []
        for i, j in self.edges:
            i, j = int(i), int(j)
            if not (0 <= i < self.num_joints and 0 <= j < self.num_joints):
                raise ConfigError(f"edge ({i}, {j}) out of range for {self.num_joints} joints")
            if i == j:
                raise ConfigError(f"self-loop on joint {i}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ConfigError(f"duplicate edge ({i}, {j})")
            seen.add(key)
            normalized.append((i, j))
        if not 0 <= self.root < self.num_joints:
            raise ConfigError(f"root {self.root} out of range")
        object.__setattr__(self, "edges", tuple(normalized))

    def neighbors(self) -> List[List[int]]:
        table: List[List[int]] = [[] for _ in range(self.num_joints)]
        for i, j in self.edges:
            table[i].append(j)
            table[j].append(i)
        return table

    def is_tree(self) -> bool:
        if len(self.edges) != self.num_joints - 1:
            return False
        return all(p is not None for p in self._bfs_parents())

    def _bfs_parents(self) -> List[Optional[int]]:
        parents: List[Optional[int]] = [None] * self.num_joints
        parents[self.root] = self.root
        queue = deque([self.root])
        table = self.neighbors()
        while queue:
            node = queue.popleft()
            for nxt in table[node]:
                if parents[nxt] is None:
                    parents[nxt] = node
                    queue.append(nxt)
        return parents

    def parents(self) -> List[int]:
        """Parent of each joint in the BFS tree from ``root`` (the root is its own parent)."""
        if not self.is_tree():
            raise ConfigError(f"graph '{self.name}' is not a tree")
        return [int(p) for p in self._bfs_parents()]

    def _traverse(self) -> Dict[int, int]:
        depth, queue = {self.root: 0}, deque([self.root])
        table = self.neighbors()
        while queue:
            node = queue.popleft()
            for nxt in sorted(table[node]):
                if nxt not in depth:
                    depth[nxt] = depth[node] + 1
                    queue.append(nxt)
        return depth

    def bfs_order(self) -> List[int]:
        """Joints reachable from ``root`` in breadth-first order."""
        return list(self._traverse())

    def depths(self) -> List[int]:
        """Hop distance from ``root``; unreachable joints get 0."""
        reached = self._traverse()
        return [reached.get(j, 0) for j in range(self.num_joints)]

    def to_dict(self) -> Union[str, dict]:
        if self == ntu_graph():
            return NTU_NAME
        return {"name": self.name, "num_joints": self.num_joints, "root": self.root, "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_dict(cls, payload: Union[str, dict]) -> "SkeletonGraph":
        if payload == NTU_NAME:
            return ntu_graph()
        if not isinstance(payload, dict):
            raise ConfigError(f"unknown graph reference: {payload!r}")
        try:
            return cls(
                num_joints=int(payload["num_joints"]),
                edges=tuple(tuple(e) for e in payload["edges"]),
                root=int(payload.get("root", 0)),
                name=str(payload.get("name", "custom")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid inline graph: {exc}") from exc


def ntu_graph() -> SkeletonGraph:
    """The 25-joint NTU kinematic tree rooted at the spine base."""
    return SkeletonGraph(num_joints=25, edges=NTU_EDGES, root=0, name=NTU_NAME)


def chain_graph(num_joints: int) -> SkeletonGraph:
    """Path graph 0-1-...-(V-1), used by tiny configurations."""
    edges = tuple((i, i + 1) for i in range(num_joints - 1))
    return SkeletonGraph(num_joints=num_joints, edges=edges, root=0, name=f"chain{num_joints}")


def build_adjacency(graph: SkeletonGraph, dtype=None) -> Tensor:
    """Symmetric 0/1 adjacency with unit diagonal (self-connections included)."""
    matrix = np.eye(graph.num_joints)
    for i, j in graph.edges:
        matrix[i, j] = matrix[j, i] = 1.0
    return Tensor(matrix, dtype=dtype)


def motion_groups(graph: SkeletonGraph) -> Tuple[Tuple[int, ...], ...]:
    """Joint groups animated by the synthetic classes."""
    if graph == ntu_graph():
        return NTU_LIMBS
    others = [j for j in graph.bfs_order() if j != graph.root] or [graph.root]
    chunks = [tuple(int(j) for j in c) for c in np.array_split(np.array(others), min(4, len(others)))]
    return tuple(c for c in chunks if c)


# -------------------------------------------------------------------- sequences


@dataclass
class SkeletonSequence:
    """One sample: ``data`` [C, T, V] joint coordinates/features and a class label."""

    data: np.ndarray
    label: int
    meta: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ShapeError(f"sequence data must be [C, T, V], got shape {self.data.shape}")
        if self.data.shape[1] < 1:
            raise ShapeError("sequence needs at least one frame")
        if self.label < 0:
            raise ShapeError(f"label must be non-negative, got {self.label}")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    @property
    def joints(self) -> int:
        return self.data.shape[2]

    def validate(self, graph: SkeletonGraph) -> None:
        if self.joints != graph.num_joints:
            raise ShapeError(f"sequence has {self.joints} joints, graph has {graph.num_joints}")
        if not np.all(np.isfinite(self.data)):
            raise ShapeError("sequence holds non-finite values")


def to_bone(seq: SkeletonSequence, graph: SkeletonGraph) -> SkeletonSequence:
    """bone[child] = joint[child] - joint[parent]; the root bone is zero."""
    parents = graph.parents()
    bones = seq.data - seq.data[:, :, parents]
    bones[:, :, graph.root] = 0.0
    return SkeletonSequence(bones, seq.label, dict(seq.meta, modality="bone"))


def bones_to_joints(bones: np.ndarray, graph: SkeletonGraph, root_positions: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_bone`: prefix sums along the tree from the root trajectory [C, T]."""
    parents = graph.parents()
    joints = np.zeros_like(bones)
    joints[:, :, graph.root] = root_positions
    for joint in graph.bfs_order():
        if joint != graph.root:
            joints[:, :, joint] = joints[:, :, parents[joint]] + bones[:, :, joint]
    return joints


def to_motion(seq: SkeletonSequence) -> SkeletonSequence:
    """motion[t] = x[t+1] - x[t]; the final frame is zero so length is preserved."""
    if seq.frames < 2:
        raise ShapeError("motion transform needs at least two frames")
    motion = np.zeros_like(seq.data)
    motion[:, :-1] = seq.data[:, 1:] - seq.data[:, :-1]
    return SkeletonSequence(motion, seq.label, dict(seq.meta, modality="motion"))


def motion_to_joints(motion: np.ndarray, first_frame: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_motion`: x[0] plus the cumulative sum of motion."""
    joints = np.empty_like(motion)
    joints[:, 0] = first_frame
    for t in range(1, motion.shape[1]):
        joints[:, t] = joints[:, t - 1] + motion[:, t - 1]
    return joints


MODALITIES = ("joint", "bone", "motion", "bone_motion")


def apply_modality(seq: SkeletonSequence, graph: SkeletonGraph, modality: str) -> SkeletonSequence:
    if modality == "joint":
        return seq
    if modality == "bone":
        return to_bone(seq, graph)
    if modality == "motion":
        return to_motion(seq)
    if modality == "bone_motion":
        return to_motion(to_bone(seq, graph))
    raise ConfigError(f"Unknown modality: {modality}. Choose from {', '.join(MODALITIES)}")


def fit_frames(data: np.ndarray, frames: int) -> np.ndarray:
    """Zero-pad short [C, T, V] sequences at the end; subsample long ones uniformly."""
    if frames < 1:
        raise ShapeError(f"target frame count must be positive, got {frames}")
    current = data.shape[1]
    if current == frames:
        return data
    if current < frames:
        padded = np.zeros((data.shape[0], frames, data.shape[2]), dtype=data.dtype)
        padded[:, :current] = data
        return padded
    index = (np.arange(frames) * current) // frames
    return data[:, index].copy()


def stack_sequences(sequences: Sequence[SkeletonSequence], frames: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Batch sequences into x [S, C, T, V] float32 and labels [S]."""
    arrays = [fit_frames(s.data, frames) if frames else s.data for s in sequences]
    x = np.stack(arrays).astype(np.float32)
    labels = np.array([s.label for s in sequences], dtype=np.int64)
    return x, labels
