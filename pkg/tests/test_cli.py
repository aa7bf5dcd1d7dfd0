import json

import numpy as np
import pytest

from unistformer.core.checkpoint import load_params
from unistformer.core.dataset import SkeletonDataset, read_skel, synth_dataset
from unistformer.core.skeleton import SkeletonSequence, chain_graph, fit_frames
from unistformer.main import main

TINY_RUN = {
    "model": {"embed_dim": 4, "channel_schedule": [4, 6], "mlp_hidden": 4},
    "train": {"epochs": 2, "batch_size": 4, "lr": 0.05},
}
SUBCOMMANDS = {
    "gen": ["--seed", "--classes", "--per-class", "--frames", "--out-dir"],
    "train": ["--data", "--config", "--seed", "--out-checkpoint", "--metrics-csv", "--lr", "--no-timing"],
    "eval": ["--data", "--checkpoint", "--frames", "--modality"],
    "profile": ["--config", "--frames", "--format", "--variant", "--time-repeats"],
    "gradcheck": ["--scope", "--tol", "--corrupt"],
    "attn-export": ["--checkpoint", "--input", "--block-index", "--out", "--pre-fusion", "--png"],
    "ablate": ["--train-epochs", "--format", "--preset"],
}


@pytest.fixture(autouse=True)
def runtime(isolated_runtime):
    return isolated_runtime


@pytest.fixture
def run_config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(TINY_RUN))
    return path


@pytest.fixture
def checkpoint(tmp_path, dataset_dir, run_config):
    path = tmp_path / "model.ustf"
    code = main([
        "train", "--data", str(dataset_dir), "--config", str(run_config), "--preset", "tiny",
        "--out-checkpoint", str(path), "--no-timing",
    ])
    assert code == 0
    return path


def _config_echo(stderr: str) -> dict:
    return next(json.loads(line) for line in stderr.splitlines() if line.startswith("{"))


class TestUsage:
    @pytest.mark.parametrize("command", sorted(SUBCOMMANDS))
    def test_help_lists_flags(self, capsys, command):
        with pytest.raises(SystemExit) as info:
            main([command, "--help"])
        assert info.value.code == 0
        out = capsys.readouterr().out
        for flag in SUBCOMMANDS[command]:
            assert flag in out

    def test_unknown_flag_exits_one(self):
        with pytest.raises(SystemExit) as info:
            main(["profile", "--bogus"])
        assert info.value.code == 1

    def test_missing_subcommand_exits_one(self):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 1


class TestGen:
    def test_defaults(self, tmp_path, capsys):
        assert main(["gen", "--out-dir", str(tmp_path / "d")]) == 0
        manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
        assert manifest["num_classes"] == 4
        assert len(manifest["files"]) == 128
        assert read_skel(tmp_path / "d" / manifest["files"][0]).frames == 64
        assert _config_echo(capsys.readouterr().err)["per_class"] == 32

    def test_same_seed_same_bytes(self, tmp_path):
        for name in ("a", "b"):
            main(["gen", "--seed", "4", "--classes", "2", "--per-class", "2", "--frames", "8", "--out-dir", str(tmp_path / name)])
        for f in ("manifest.json", "sample_00000.skel", "sample_00003.skel"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_short_sequences(self, tmp_path):
        main(["gen", "--classes", "2", "--per-class", "1", "--frames", "7", "--out-dir", str(tmp_path / "d")])
        assert SkeletonDataset.load(tmp_path / "d").arrays()[0].shape == (2, 3, 7, 25)

    def test_bad_class_count(self, tmp_path):
        assert main(["gen", "--classes", "1", "--out-dir", str(tmp_path / "d")]) == 1


class TestTrainAndEval:
    def test_train_writes_checkpoint_and_csv(self, tmp_path, dataset_dir, run_config, capsys):
        csv = tmp_path / "metrics.csv"
        code = main([
            "train", "--data", str(dataset_dir), "--config", str(run_config), "--preset", "tiny",
            "--out-checkpoint", str(tmp_path / "m.ustf"), "--metrics-csv", str(csv), "--no-timing", "--epochs", "3",
        ])
        assert code == 0
        captured = capsys.readouterr()
        echoed = _config_echo(captured.err)
        assert echoed["train"]["epochs"] == 3
        assert echoed["model"]["channel_schedule"] == [4, 6]
        assert echoed["model"]["num_classes"] == 3
        assert json.loads(captured.out)["epoch"] == 3
        assert csv.read_text().splitlines()[0] == "epoch,loss,top1,seconds"
        config, _ = load_params(tmp_path / "m.ustf")
        assert config.num_blocks == 2

    def test_fixed_seed_gives_identical_csv(self, tmp_path, dataset_dir, run_config):
        for name in ("a", "b"):
            main([
                "train", "--data", str(dataset_dir), "--config", str(run_config), "--preset", "tiny", "--seed", "5",
                "--out-checkpoint", str(tmp_path / f"{name}.ustf"), "--metrics-csv", str(tmp_path / f"{name}.csv"),
                "--no-timing",
            ])
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a.ustf").read_bytes() == (tmp_path / "b.ustf").read_bytes()

    def test_zero_lr_keeps_parameters(self, tmp_path, dataset_dir, run_config):
        code = main([
            "train", "--data", str(dataset_dir), "--config", str(run_config), "--preset", "tiny", "--lr", "0",
            "--init-checkpoint", str(tmp_path / "first.ustf"), "--out-checkpoint", str(tmp_path / "last.ustf"),
        ])
        assert code == 0
        _, first = load_params(tmp_path / "first.ustf")
        _, last = load_params(tmp_path / "last.ustf")
        for (name, a), (_, b) in zip(first.named_parameters(), last.named_parameters()):
            assert a.data.tobytes() == b.data.tobytes(), name

    def test_mixed_lengths_fit_to_default_frames(self, tmp_path, run_config, capsys):
        base = synth_dataset(seed=1, num_classes=2, samples_per_class=2, frames=16, graph=chain_graph(5))
        sequences = [
            SkeletonSequence(fit_frames(s.data, 12) if i % 2 else s.data, s.label) for i, s in enumerate(base.sequences)
        ]
        SkeletonDataset(base.manifest, sequences).save(tmp_path / "mixed")
        code = main([
            "train", "--data", str(tmp_path / "mixed"), "--config", str(run_config), "--preset", "tiny",
            "--epochs", "1", "--out-checkpoint", str(tmp_path / "m.ustf"),
        ])
        assert code == 0
        assert _config_echo(capsys.readouterr().err)["frames"] == 64

    def test_missing_data_dir_exits_two(self, tmp_path):
        code = main(["train", "--data", str(tmp_path / "nowhere"), "--out-checkpoint", str(tmp_path / "m.ustf")])
        assert code == 2

    def test_invalid_config_exits_one(self, tmp_path, dataset_dir):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"model": {"depth": 3}}))
        code = main(["train", "--data", str(dataset_dir), "--config", str(bad), "--out-checkpoint", str(tmp_path / "m")])
        assert code == 1

    def test_eval_prints_metrics(self, dataset_dir, checkpoint, capsys):
        assert main(["eval", "--data", str(dataset_dir), "--checkpoint", str(checkpoint), "--no-timing"]) == 0
        metrics = json.loads(capsys.readouterr().out)
        assert 0.0 <= metrics["top1"] <= 1.0
        assert metrics["seconds"] == 0.0

    def test_eval_is_deterministic(self, dataset_dir, checkpoint, capsys):
        outputs = []
        for _ in range(2):
            main(["eval", "--data", str(dataset_dir), "--checkpoint", str(checkpoint), "--no-timing"])
            outputs.append(capsys.readouterr().out)
        assert outputs[0] == outputs[1]

    def test_eval_missing_checkpoint_exits_two(self, tmp_path, dataset_dir):
        assert main(["eval", "--data", str(dataset_dir), "--checkpoint", str(tmp_path / "none.ustf")]) == 2


class TestProfile:
    def test_json_matches_table(self, capsys):
        assert main(["profile", "--format", "json"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["totals"]["params"] == 496_322
        main(["profile", "--format", "table"])
        table = capsys.readouterr().out
        total_line = next(line for line in table.splitlines() if line.startswith("total"))
        assert str(report["totals"]["flops"]) in total_line

    def test_global_only_has_fewer_params(self, capsys):
        main(["profile", "--format", "json"])
        combined = json.loads(capsys.readouterr().out)["totals"]["params"]
        main(["profile", "--format", "json", "--variant", "global_only"])
        assert json.loads(capsys.readouterr().out)["totals"]["params"] < combined

    def test_invalid_config_exits_one(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"model": {"channel_schedule": [5]}}))
        assert main(["profile", "--config", str(bad)]) == 1


class TestGradcheck:
    def test_model_scope_passes(self, capsys):
        assert main(["gradcheck", "--scope", "model"]) == 0
        assert "tiny_model" in capsys.readouterr().out

    def test_corrupt_exits_three(self, capsys):
        assert main(["gradcheck", "--scope", "op", "--corrupt", "--format", "json"]) == 3
        reports = json.loads(capsys.readouterr().out)
        assert reports and not any(r["passed"] for r in reports)


class TestAttentionExport:
    def _export(self, checkpoint, dataset_dir, out, *extra):
        return main([
            "attn-export", "--checkpoint", str(checkpoint), "--input", str(dataset_dir / "sample_00000.skel"),
            "--out", str(out), *extra,
        ])

    def test_pre_fusion_rows_are_distributions(self, tmp_path, checkpoint, dataset_dir):
        assert self._export(checkpoint, dataset_dir, tmp_path / "a.csv", "--pre-fusion") == 0
        matrix = np.loadtxt(tmp_path / "a.csv", delimiter=",")
        assert matrix.shape == (25, 25)
        np.testing.assert_allclose(matrix.sum(axis=1), 1.0, atol=1e-6)

    def test_zero_alpha_exports_topology_prior(self, tmp_path, checkpoint, dataset_dir):
        self._export(checkpoint, dataset_dir, tmp_path / "m.csv", "--block-index", "1", "--force-alpha-zero")
        matrix = np.loadtxt(tmp_path / "m.csv", delimiter=",").astype(np.float32)
        _, params = load_params(checkpoint)
        np.testing.assert_array_equal(matrix, params.blocks[1].a_init.data)

    def test_export_is_deterministic(self, tmp_path, checkpoint, dataset_dir):
        self._export(checkpoint, dataset_dir, tmp_path / "1.csv")
        self._export(checkpoint, dataset_dir, tmp_path / "2.csv")
        assert (tmp_path / "1.csv").read_bytes() == (tmp_path / "2.csv").read_bytes()

    def test_bad_block_index_exits_one(self, tmp_path, checkpoint, dataset_dir):
        assert self._export(checkpoint, dataset_dir, tmp_path / "x.csv", "--block-index", "10") == 1

    def test_png_heat_map(self, tmp_path, checkpoint, dataset_dir):
        self._export(checkpoint, dataset_dir, tmp_path / "m.csv", "--png", str(tmp_path / "m.png"))
        assert (tmp_path / "m.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


class TestAblate:
    def test_grid_trains_every_row(self, capsys):
        code = main([
            "ablate", "--preset", "tiny", "--train-epochs", "1", "--per-class", "2",
            "--train-frames", "8", "--format", "json",
        ])
        assert code == 0
        rows = json.loads(capsys.readouterr().out)
        assert len(rows) == 7
        assert all("loss" in row and np.isfinite(row["loss"]) for row in rows)
        params = [row["params"] for row in rows[:4]]
        assert params == sorted(params)
