import json
import struct

import numpy as np
import pytest

from unistformer.core.dataset import (
    MANIFEST_NAME,
    SkeletonDataset,
    class_names_for,
    decode_skel,
    encode_skel,
    read_skel,
    synth_dataset,
    write_skel,
)
from unistformer.core.exceptions import (
    BadMagicError,
    ConfigError,
    DataFormatError,
    DimensionOverflowError,
    LabelError,
    ManifestError,
    NonFiniteDataError,
    ShapeError,
    TruncatedFileError,
)
from unistformer.core.skeleton import SkeletonSequence, chain_graph, ntu_graph


@pytest.fixture
def sequence(rng):
    return SkeletonSequence(rng.normal(size=(3, 7, 25)).astype(np.float32), label=4)


class TestSkelFormat:
    def test_header_layout(self, sequence):
        payload = encode_skel(sequence)
        assert payload[:4] == b"SKL1"
        assert struct.unpack("<4I", payload[4:20]) == (3, 7, 25, 4)
        assert len(payload) == 20 + 4 * 3 * 7 * 25

    def test_file_round_trip(self, tmp_path, sequence):
        path = write_skel(tmp_path / "a.skel", sequence)
        loaded = read_skel(path)
        assert loaded.label == 4
        np.testing.assert_array_equal(loaded.data, sequence.data)

    def test_bad_magic(self, sequence):
        with pytest.raises(BadMagicError):
            decode_skel(b"SKL2" + encode_skel(sequence)[4:])

    def test_truncated_payload(self, sequence):
        with pytest.raises(TruncatedFileError, match="ended unexpectedly"):
            decode_skel(encode_skel(sequence)[:-3])

    def test_truncated_header(self):
        with pytest.raises(TruncatedFileError):
            decode_skel(b"SKL1" + struct.pack("<2I", 3, 4))

    def test_zero_dimension(self):
        with pytest.raises(DimensionOverflowError):
            decode_skel(b"SKL1" + struct.pack("<4I", 3, 0, 25, 0))

    def test_oversized_dimensions(self):
        with pytest.raises(DimensionOverflowError):
            decode_skel(b"SKL1" + struct.pack("<4I", 1 << 16, 1 << 16, 25, 0))

    def test_non_finite_payload(self):
        payload = b"SKL1" + struct.pack("<4I", 1, 1, 2, 0) + struct.pack("<2f", 1.0, float("nan"))
        with pytest.raises(NonFiniteDataError):
            decode_skel(payload)

    def test_trailing_bytes(self, sequence):
        with pytest.raises(DataFormatError):
            decode_skel(encode_skel(sequence) + b"\x00")

    def test_refuses_to_write_non_finite(self, tmp_path):
        with pytest.raises(ShapeError):
            write_skel(tmp_path / "bad.skel", SkeletonSequence(np.full((3, 2, 4), np.inf), 0))


class TestSynthetic:
    def test_shape_and_counts(self):
        dataset = synth_dataset(seed=0, num_classes=4, samples_per_class=3, frames=16)
        assert len(dataset) == 12
        x, labels = dataset.arrays()
        assert x.shape == (12, 3, 16, 25)
        np.testing.assert_array_equal(np.bincount(labels), [3, 3, 3, 3])

    def test_pure_function_of_arguments(self):
        a = synth_dataset(seed=5, num_classes=3, samples_per_class=2, frames=8)
        b = synth_dataset(seed=5, num_classes=3, samples_per_class=2, frames=8)
        c = synth_dataset(seed=6, num_classes=3, samples_per_class=2, frames=8)
        assert [encode_skel(s) for s in a.sequences] == [encode_skel(s) for s in b.sequences]
        assert [encode_skel(s) for s in a.sequences] != [encode_skel(s) for s in c.sequences]

    def test_classes_are_separable_by_motion(self):
        dataset = synth_dataset(seed=0, num_classes=4, samples_per_class=8, frames=32)
        x, labels = dataset.arrays()
        # Temporal standard deviation per (channel, joint) is a motion signature.
        features = x.std(axis=2).reshape(len(x), -1)
        centroids = np.stack([features[labels == k].mean(axis=0) for k in range(4)])
        nearest = np.argmin(((features[:, None] - centroids[None]) ** 2).sum(axis=-1), axis=1)
        assert (nearest == labels).mean() >= 0.9

    def test_preconditions(self):
        with pytest.raises(ConfigError):
            synth_dataset(seed=0, num_classes=1, samples_per_class=2, frames=16)
        with pytest.raises(ConfigError):
            synth_dataset(seed=0, num_classes=4, samples_per_class=2, frames=7)

    def test_custom_graph(self):
        dataset = synth_dataset(seed=0, num_classes=3, samples_per_class=1, frames=8, graph=chain_graph(6))
        assert dataset.graph == chain_graph(6)
        assert dataset.arrays()[0].shape == (3, 3, 8, 6)

    def test_class_names(self):
        names = class_names_for(ntu_graph(), 5)
        assert names[0] == "left_arm-x-1c"
        assert names[4] == "left_arm-y-2c"


class TestDatasetDirectory:
    def test_save_and_load(self, tmp_path, small_dataset):
        manifest_path = small_dataset.save(tmp_path / "out")
        payload = json.loads(manifest_path.read_text())
        assert payload["num_classes"] == 3
        assert payload["graph"] == "ntu25"
        assert len(payload["files"]) == 6
        loaded = SkeletonDataset.load(tmp_path / "out")
        np.testing.assert_array_equal(loaded.arrays()[0], small_dataset.arrays()[0])

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ManifestError):
            SkeletonDataset.load(tmp_path)

    def test_missing_listed_file(self, dataset_dir):
        (dataset_dir / "sample_00002.skel").unlink()
        with pytest.raises(ManifestError):
            SkeletonDataset.load(dataset_dir)

    def test_label_out_of_range(self, dataset_dir):
        manifest = json.loads((dataset_dir / MANIFEST_NAME).read_text())
        manifest["num_classes"] = 2
        manifest["class_names"] = manifest["class_names"][:2]
        (dataset_dir / MANIFEST_NAME).write_text(json.dumps(manifest))
        with pytest.raises(LabelError):
            SkeletonDataset.load(dataset_dir)

    def test_resampled(self, small_dataset):
        shorter = small_dataset.resampled(5)
        assert shorter.arrays()[0].shape[2] == 5
        assert len(shorter) == len(small_dataset)

    def test_modality_arrays(self, small_dataset):
        x, _ = small_dataset.arrays(modality="bone")
        np.testing.assert_array_equal(x[:, :, :, 0], 0.0)
