import numpy as np
import pytest

from unistformer.core.checkpoint import (
    CHECKPOINT_MAGIC,
    decode_checkpoint,
    encode_checkpoint,
    load_params,
    save_params,
)
from unistformer.core.exceptions import CheckpointError, ConfigError, ConfigMismatchError, ShapeError
from unistformer.core.model import (
    ModelConfig,
    UniSTFormer,
    argmax_rows,
    forward,
    full_config,
    init_params,
    tiny_config,
)
from unistformer.core.skeleton import chain_graph
from unistformer.core.tensor import Mode, Tensor


@pytest.fixture
def tiny():
    return tiny_config(num_joints=6, width=8, blocks=2, num_classes=3, mlp_hidden=8)


class TestConfig:
    def test_full_defaults(self):
        config = full_config()
        assert config.num_blocks == 10
        assert config.num_joints == 25
        assert config.channel_schedule[-1] == 256

    def test_full_requires_ten_blocks(self):
        with pytest.raises(ConfigError):
            full_config(channel_schedule=(64, 64))

    def test_odd_width_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(channel_schedule=(64, 63))

    def test_dict_round_trip(self, tiny):
        assert ModelConfig.from_dict(tiny.to_dict()) == tiny

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="depth"):
            ModelConfig.from_dict({"depth": 3})

    def test_from_dict_overlays_base(self, tiny):
        changed = ModelConfig.from_dict({"mlp_hidden": 16, "variant": "local_only"}, base=tiny)
        assert changed.mlp_hidden == 16
        assert changed.variant.value == "local_only"
        assert changed.graph == tiny.graph


class TestForward:
    @pytest.mark.parametrize("t,v,c", [(4, 5, 3), (9, 3, 2), (1, 2, 3)])
    def test_logits_shape(self, rng, t, v, c):
        config = tiny_config(num_joints=v, width=4, blocks=2, num_classes=5, in_channels=c)
        model = UniSTFormer(config).eval()
        assert model(rng.normal(size=(3, c, t, v))).shape == (3, 5)

    def test_ten_blocks_preserve_frames_and_joints(self, rng):
        config = ModelConfig(
            graph=chain_graph(4), num_classes=3, embed_dim=4,
            channel_schedule=(4, 4, 4, 4, 6, 6, 6, 8, 8, 8), mlp_hidden=4,
        )
        trace = []
        logits = forward(Tensor(rng.normal(size=(2, 3, 5, 4))), init_params(config, rng), Mode.EVAL, trace=trace)
        assert len(trace) == 10
        assert [block["Y"].shape for block in trace][-1] == (2, 8, 5, 4)
        assert all(block["Y"].shape[2:] == (5, 4) for block in trace)
        assert logits.shape == (2, 3)

    def test_wrong_joint_count(self, rng, tiny):
        with pytest.raises(ShapeError):
            UniSTFormer(tiny)(rng.normal(size=(1, 3, 4, 5)))

    def test_eval_inference_is_deterministic(self, rng, tiny):
        x = rng.normal(size=(2, 3, 6, 6))
        a = UniSTFormer(tiny, seed=4).eval()(x).data
        b = UniSTFormer(tiny, seed=4).eval()(x).data
        np.testing.assert_array_equal(a, b)

    def test_predict_returns_class_indices(self, rng, tiny):
        prediction = UniSTFormer(tiny).predict(rng.normal(size=(4, 3, 6, 6)))
        assert prediction.shape == (4,)
        assert np.all((prediction >= 0) & (prediction < 3))

    def test_eval_logits_follow_batch_permutation(self, rng, tiny):
        model = UniSTFormer(tiny, seed=2).eval()
        x = rng.normal(size=(5, 3, 6, 6))
        perm = np.array([3, 0, 4, 1, 2])
        np.testing.assert_allclose(model(x[perm]).data, model(x).data[perm], rtol=1e-5, atol=1e-6)

    def test_ties_go_to_lowest_index(self):
        logits = np.array([[1.0, 3.0, 3.0], [2.0, 2.0, 0.0], [0.5, 0.5, 0.5]])
        np.testing.assert_array_equal(argmax_rows(logits), [1, 0, 0])
        np.testing.assert_array_equal(argmax_rows(logits + 4.0), [1, 0, 0])

    def test_constant_logit_shift_keeps_predictions(self, rng, tiny):
        model = UniSTFormer(tiny, seed=5)
        x = rng.normal(size=(6, 3, 6, 6))
        before = model.predict(x)
        model.params.head_bias.data += 3.0
        np.testing.assert_array_equal(model.predict(x), before)

    def test_parameter_names_unique(self, tiny):
        names = [name for name, _ in UniSTFormer(tiny).named_parameters()]
        assert len(names) == len(set(names))
        assert names[0] == "embed.lift.weight"
        assert names[-1] == "head.bias"

    def test_seed_controls_initialization(self, tiny):
        assert UniSTFormer(tiny, seed=1).params.checksum() == UniSTFormer(tiny, seed=1).params.checksum()
        assert UniSTFormer(tiny, seed=1).params.checksum() != UniSTFormer(tiny, seed=2).params.checksum()


class TestCheckpoint:
    def test_round_trip_reproduces_eval_logits(self, tmp_path, rng, tiny):
        model = UniSTFormer(tiny, seed=3)
        model.train()(rng.normal(size=(4, 3, 6, 6)))  # moves BN running statistics
        path = save_params(tmp_path / "model.ustf", model.params)
        config, params = load_params(path)
        assert config == tiny
        x = rng.normal(size=(2, 3, 6, 6))
        np.testing.assert_array_equal(
            UniSTFormer(config, params=params).eval()(x).data, model.eval()(x).data
        )

    def test_header(self, tiny):
        payload = encode_checkpoint(init_params(tiny, np.random.default_rng(0)))
        assert payload[:4] == CHECKPOINT_MAGIC
        assert int.from_bytes(payload[4:8], "little") == 1

    def test_expected_config_mismatch(self, tiny):
        payload = encode_checkpoint(init_params(tiny, np.random.default_rng(0)))
        with pytest.raises(ConfigMismatchError):
            decode_checkpoint(payload, expected=tiny.replace(mlp_hidden=4))

    def test_truncated(self, tiny):
        payload = encode_checkpoint(init_params(tiny, np.random.default_rng(0)))
        with pytest.raises(CheckpointError):
            decode_checkpoint(payload[:-10])

    def test_trailing_bytes(self, tiny):
        payload = encode_checkpoint(init_params(tiny, np.random.default_rng(0)))
        with pytest.raises(CheckpointError):
            decode_checkpoint(payload + b"\x00" * 4)

    def test_decode_restores_parameters_and_buffers(self, rng, tiny):
        model = UniSTFormer(tiny, seed=4)
        model.train()(rng.normal(size=(4, 3, 6, 6)))
        _, params = decode_checkpoint(encode_checkpoint(model.params))
        assert params.checksum() == model.params.checksum()

    def test_init_without_generator_is_zero_filled(self, tiny):
        seeded = init_params(tiny, np.random.default_rng(0))
        empty = init_params(tiny, None)
        reference = dict(seeded.named_parameters())
        assert [(n, t.shape) for n, t in empty.named_parameters()] == [(n, t.shape) for n, t in reference.items()]
        for name, tensor in empty.named_parameters():
            if name.endswith(("alpha", "a_init", "bn.gamma")):
                np.testing.assert_array_equal(tensor.data, reference[name].data)
            else:
                assert not tensor.data.any(), name

    def test_bad_magic(self):
        with pytest.raises(CheckpointError):
            decode_checkpoint(b"NOPE" + b"\x00" * 16)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_params(tmp_path / "absent.ustf")
