"""SKEL sequence files, dataset manifests and the synthetic motion generator."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ..utils.handlers import FileHelper
from .codec import ByteReader, element_count, pack_f32, pack_u32
from .exceptions import BadMagicError, ConfigError, DataFormatError, LabelError, ManifestError, ShapeError
from .skeleton import (
    NTU_LIMBS,
    SkeletonGraph,
    SkeletonSequence,
    apply_modality,
    fit_frames,
    motion_groups,
    ntu_graph,
    stack_sequences,
)

logger = logging.getLogger(__name__)

SKEL_MAGIC = b"SKL1"
MANIFEST_NAME = "manifest.json"

NOISE_SIGMA = 0.02
BASE_AMPLITUDE = 0.3
PHASE_JITTER = 0.3
AMPLITUDE_JITTER = 0.1
MIN_SYNTH_FRAMES = 8
_AXES = "xyz"
_NTU_LIMB_NAMES = ("left_arm", "right_arm", "left_leg", "right_leg")


# ----------------------------------------------------------------- SKEL files


def encode_skel(seq: SkeletonSequence) -> bytes:
    c, t, v = seq.data.shape
    return SKEL_MAGIC + pack_u32(c, t, v, seq.label) + pack_f32(seq.data)


def decode_skel(payload: bytes, source: str = "<buffer>") -> SkeletonSequence:
    reader = ByteReader(payload, source)
    if len(payload) < 4 or payload[:4] != SKEL_MAGIC:
        raise BadMagicError(f"{source}: not a SKEL file (magic {payload[:4]!r})")
    reader.take(4)
    c, t, v, label = reader.u32(4)
    element_count((c, t, v), source)
    data = reader.f32((c, t, v))
    if reader.remaining:
        raise DataFormatError(f"{source}: {reader.remaining} trailing bytes after payload")
    return SkeletonSequence(np.array(data), label)


def write_skel(path: Union[str, Path], seq: SkeletonSequence) -> Path:
    """Atomically write one sequence as a SKEL file."""
    if not np.all(np.isfinite(seq.data)):
        raise ShapeError("refusing to write a sequence with non-finite values")
    written = FileHelper.write_atomic(path, encode_skel(seq))
    logger.debug("Wrote %s", written)
    return written


def read_skel(path: Union[str, Path]) -> SkeletonSequence:
    path = Path(path)
    return decode_skel(path.read_bytes(), str(path))


# ------------------------------------------------------------------ manifests


@dataclass
class DatasetManifest:
    num_classes: int
    class_names: List[str]
    files: List[str]
    graph: SkeletonGraph = field(default_factory=ntu_graph)

    def __post_init__(self):
        if self.num_classes < 1:
            raise ManifestError(f"num_classes must be positive, got {self.num_classes}")
        if len(self.class_names) != self.num_classes:
            raise ManifestError(f"{len(self.class_names)} class names for {self.num_classes} classes")

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "class_names": list(self.class_names),
            "files": list(self.files),
            "graph": self.graph.to_dict(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "DatasetManifest":
        try:
            return cls(
                num_classes=int(payload["num_classes"]),
                class_names=[str(name) for name in payload["class_names"]],
                files=[str(name) for name in payload["files"]],
                graph=SkeletonGraph.from_dict(payload["graph"]),
            )
        except (KeyError, TypeError, ValueError, ConfigError) as exc:
            raise ManifestError(f"invalid manifest: {exc}") from exc


class SkeletonDataset:
    """A manifest and its loaded sequences."""

    def __init__(self, manifest: DatasetManifest, sequences: Sequence[SkeletonSequence]):
        if len(manifest.files) != len(sequences):
            raise ManifestError(f"manifest lists {len(manifest.files)} files for {len(sequences)} sequences")
        for name, seq in zip(manifest.files, sequences):
            if seq.label >= manifest.num_classes:
                raise LabelError(f"{name}: label {seq.label} outside [0, {manifest.num_classes})")
            seq.validate(manifest.graph)
        self.manifest = manifest
        self.sequences = list(sequences)

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def graph(self) -> SkeletonGraph:
        return self.manifest.graph

    @property
    def num_classes(self) -> int:
        return self.manifest.num_classes

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.sequences], dtype=np.int64)

    def arrays(self, frames: Optional[int] = None, modality: str = "joint") -> Tuple[np.ndarray, np.ndarray]:
        """Stack into x [S, C, T, V] float32 and labels [S], after the modality transform."""
        if not self.sequences:
            raise ShapeError("dataset is empty")
        sequences = [apply_modality(s, self.graph, modality) for s in self.sequences]
        lengths = {s.frames for s in sequences}
        if frames is None and len(lengths) > 1:
            raise ShapeError(f"sequences have differing lengths {sorted(lengths)}; pass frames")
        return stack_sequences(sequences, frames)

    def resampled(self, frames: int) -> "SkeletonDataset":
        """Same manifest, every sequence fitted to ``frames`` frames."""
        sequences = [SkeletonSequence(fit_frames(s.data, frames), s.label, dict(s.meta)) for s in self.sequences]
        return SkeletonDataset(self.manifest, sequences)

    def save(self, out_dir: Union[str, Path]) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, seq in zip(self.manifest.files, self.sequences):
            write_skel(out_dir / name, seq)
        manifest_path = out_dir / MANIFEST_NAME
        FileHelper.write_json(manifest_path, self.manifest.to_dict())
        logger.info("Wrote %d sequences and %s", len(self), manifest_path)
        return manifest_path

    @classmethod
    def load(cls, data_dir: Union[str, Path]) -> "SkeletonDataset":
        data_dir = Path(data_dir)
        manifest_path = data_dir / MANIFEST_NAME
        if not manifest_path.is_file():
            raise ManifestError(f"no {MANIFEST_NAME} in {data_dir}")
        try:
            payload = json.loads(manifest_path.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ManifestError(f"{manifest_path}: {exc}") from exc
        if not isinstance(payload, dict):
            raise ManifestError(f"{manifest_path}: expected a JSON object")
        manifest = DatasetManifest.from_dict(payload)
        sequences = []
        for name in manifest.files:
            path = data_dir / name
            if not path.is_file():
                raise ManifestError(f"{path}: listed in manifest but missing")
            sequences.append(read_skel(path))
        logger.info("Loaded %d sequences from %s", len(sequences), data_dir)
        return cls(manifest, sequences)


# -------------------------------------------------------------- synthetic data


def rest_pose(graph: SkeletonGraph) -> np.ndarray:
    """Deterministic neutral pose [3, V]: joints hang below the root by tree depth."""
    depth = np.array(graph.depths(), dtype=float)
    index = np.arange(graph.num_joints)
    return np.stack([0.1 * np.sin(index), -0.1 * depth, 0.05 * np.cos(index)])


def class_names_for(graph: SkeletonGraph, num_classes: int) -> List[str]:
    groups = motion_groups(graph)
    limb_names = _NTU_LIMB_NAMES if groups == NTU_LIMBS else tuple(f"group{g}" for g in range(len(groups)))
    names = []
    for k in range(num_classes):
        g = k % len(groups)
        names.append(f"{limb_names[g]}-{_AXES[k % 3]}-{1 + k // len(groups)}c")
    return names


def synth_dataset(
    seed: int,
    num_classes: int,
    samples_per_class: int,
    frames: int,
    graph: Optional[SkeletonGraph] = None,
) -> SkeletonDataset:
    """Parametric limb-oscillation dataset; a pure function of its arguments.

    Class k oscillates joint group ``k mod G`` along coordinate ``k mod 3`` at
    ``1 + k div G`` cycles per sequence, with amplitude growing along the limb,
    per-sample phase and amplitude jitter and Gaussian noise.
    """
    graph = graph or ntu_graph()
    if num_classes < 2:
        raise ConfigError(f"synthetic data needs at least 2 classes, got {num_classes}")
    if frames < MIN_SYNTH_FRAMES:
        raise ConfigError(f"synthetic data needs at least {MIN_SYNTH_FRAMES} frames, got {frames}")
    if samples_per_class < 1:
        raise ConfigError(f"samples_per_class must be positive, got {samples_per_class}")

    rng = np.random.default_rng(seed)
    groups = motion_groups(graph)
    base = rest_pose(graph)
    time = np.arange(frames) / frames
    sequences, files = [], []
    for k in range(num_classes):
        group = groups[k % len(groups)]
        axis = k % 3
        cycles = 1 + k // len(groups)
        for _ in range(samples_per_class):
            phase = rng.uniform(-PHASE_JITTER, PHASE_JITTER)
            scale = 1.0 + rng.uniform(-AMPLITUDE_JITTER, AMPLITUDE_JITTER)
            data = np.repeat(base[:, None, :], frames, axis=1)
            wave = np.sin(2.0 * np.pi * cycles * time + phase)
            for position, joint in enumerate(group):
                amplitude = BASE_AMPLITUDE * scale * (position + 1) / len(group)
                data[axis, :, joint] += amplitude * wave
            data += rng.normal(0.0, NOISE_SIGMA, size=data.shape)
            files.append(f"sample_{len(files):05d}.skel")
            sequences.append(SkeletonSequence(data.astype(np.float32), k))

    manifest = DatasetManifest(num_classes, class_names_for(graph, num_classes), files, graph)
    logger.debug("Synthesized %d sequences (seed=%d, K=%d, T=%d)", len(sequences), seed, num_classes, frames)
    return SkeletonDataset(manifest, sequences)
