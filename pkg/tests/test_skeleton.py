import numpy as np
import pytest

from unistformer.core.exceptions import ConfigError, ShapeError
from unistformer.core.skeleton import (
    NTU_LIMBS,
    SkeletonGraph,
    SkeletonSequence,
    apply_modality,
    bones_to_joints,
    build_adjacency,
    chain_graph,
    fit_frames,
    motion_groups,
    motion_to_joints,
    ntu_graph,
    stack_sequences,
    to_bone,
    to_motion,
)


class TestGraph:
    def test_ntu_is_a_tree(self):
        graph = ntu_graph()
        assert graph.num_joints == 25
        assert len(graph.edges) == 24
        assert graph.is_tree()

    def test_adjacency_is_symmetric_with_unit_diagonal(self):
        a = build_adjacency(ntu_graph(), np.float64).data
        np.testing.assert_array_equal(a, a.T)
        np.testing.assert_array_equal(np.diag(a), np.ones(25))
        assert a.sum() == 25 + 2 * 24
        assert set(np.unique(a)) == {0.0, 1.0}

    def test_parents_of_chain(self):
        assert chain_graph(4).parents() == [0, 0, 1, 2]

    def test_depths_and_bfs_order(self):
        graph = chain_graph(4)
        assert graph.depths() == [0, 1, 2, 3]
        assert graph.bfs_order() == [0, 1, 2, 3]

    def test_invalid_graphs_rejected(self):
        with pytest.raises(ConfigError):
            SkeletonGraph(3, ((0, 3),))
        with pytest.raises(ConfigError):
            SkeletonGraph(3, ((1, 1),))
        with pytest.raises(ConfigError):
            SkeletonGraph(3, ((0, 1), (1, 0)))

    def test_cyclic_graph_has_no_parents(self):
        triangle = SkeletonGraph(3, ((0, 1), (1, 2), (2, 0)))
        assert not triangle.is_tree()
        with pytest.raises(ConfigError):
            triangle.parents()

    def test_dict_round_trip(self):
        assert SkeletonGraph.from_dict(ntu_graph().to_dict()) == ntu_graph()
        chain = chain_graph(5)
        assert SkeletonGraph.from_dict(chain.to_dict()) == chain
        with pytest.raises(ConfigError):
            SkeletonGraph.from_dict("kinect32")

    def test_motion_groups(self):
        assert motion_groups(ntu_graph()) == NTU_LIMBS
        groups = motion_groups(chain_graph(6))
        assert sorted(j for g in groups for j in g) == [1, 2, 3, 4, 5]


class TestModalities:
    @pytest.fixture
    def sequence(self, rng):
        return SkeletonSequence(rng.normal(size=(3, 6, 25)), label=2)

    def test_bone_of_root_is_zero_and_invertible(self, sequence):
        graph = ntu_graph()
        bones = to_bone(sequence, graph)
        np.testing.assert_array_equal(bones.data[:, :, 0], 0.0)
        rebuilt = bones_to_joints(bones.data, graph, sequence.data[:, :, 0])
        np.testing.assert_allclose(rebuilt, sequence.data, atol=1e-12)

    def test_motion_keeps_length_and_is_invertible(self, sequence):
        motion = to_motion(sequence)
        assert motion.frames == sequence.frames
        np.testing.assert_array_equal(motion.data[:, -1], 0.0)
        np.testing.assert_allclose(motion_to_joints(motion.data, sequence.data[:, 0]), sequence.data, atol=1e-12)

    def test_motion_needs_two_frames(self):
        with pytest.raises(ShapeError):
            to_motion(SkeletonSequence(np.zeros((3, 1, 4)), 0))

    def test_apply_modality(self, sequence):
        graph = ntu_graph()
        assert apply_modality(sequence, graph, "joint") is sequence
        combined = apply_modality(sequence, graph, "bone_motion")
        assert combined.meta["modality"] == "motion"
        with pytest.raises(ConfigError):
            apply_modality(sequence, graph, "velocity")


class TestFrames:
    def test_pad_at_end(self):
        data = np.ones((3, 2, 4))
        out = fit_frames(data, 5)
        assert out.shape == (3, 5, 4)
        np.testing.assert_array_equal(out[:, 2:], 0.0)

    def test_uniform_subsample(self):
        data = np.arange(10.0).reshape(1, 10, 1)
        np.testing.assert_array_equal(fit_frames(data, 4)[0, :, 0], [0.0, 2.0, 5.0, 7.0])

    def test_stack_sequences(self, rng):
        seqs = [SkeletonSequence(rng.normal(size=(3, t, 5)), k) for k, t in enumerate((4, 6))]
        x, labels = stack_sequences(seqs, frames=5)
        assert x.shape == (2, 3, 5, 5) and x.dtype == np.float32
        np.testing.assert_array_equal(labels, [0, 1])

    def test_sequence_validation(self, rng):
        seq = SkeletonSequence(rng.normal(size=(3, 4, 5)), 0)
        with pytest.raises(ShapeError):
            seq.validate(ntu_graph())
        with pytest.raises(ShapeError):
            SkeletonSequence(np.zeros((3, 4)), 0)
