import json
import os

import numpy as np
import pytest

from shootseg.cli import main
from shootseg.cloud import load_cloud
from shootseg.config import ConfigError, RunConfig, load_manifest


def run_cli(*argv):
    return main(list(argv))


class TestConfig:
    def test_defaults_and_override(self):
        cfg = RunConfig()
        assert cfg.weak_k == 100
        cfg.set("weak_k", "50")
        assert cfg.weak_k == 50

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig({"nonsense": 1})

    def test_file_roundtrip(self, tmp_path):
        cfg = RunConfig()
        cfg.set("seed", "7")
        cfg.set("augment", "false")
        path = cfg.freeze(str(tmp_path))
        back = RunConfig.from_file(path)
        assert back.seed == 7
        assert back.augment is False
        assert back.to_text() == cfg.to_text()

    def test_bad_file_lines(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("weak_k fifty\n")
        with pytest.raises(ConfigError, match=":1"):
            RunConfig.from_file(str(p))
        p.write_text("mystery=1\n")
        with pytest.raises(ConfigError, match="unknown config key"):
            RunConfig.from_file(str(p))

    def test_auto_resolved_values(self):
        cfg = RunConfig()
        cfg.set("voxel_size", "2.0")
        assert cfg.resolved_aggregation_radius() == 8.0
        assert cfg.resolved_jitter_sigma() == pytest.approx(0.4)


class TestExitCodes:
    def test_unknown_flag_exits_2(self):
        assert run_cli("synth", "--no-such-flag") == 2

    def test_unknown_command_exits_2(self):
        assert run_cli("frobnicate") == 2

    def test_missing_input_exits_3(self, tmp_path):
        assert run_cli("traits", "--cloud", str(tmp_path / "missing.xyzl")) == 3

    def test_config_error_exits_2(self, tmp_path):
        assert run_cli("weaklabel", "--out-dir", str(tmp_path)) == 2


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("ds"))
    code = run_cli(
        "synth", "--out-dir", out, "--synth-count", "4",
        "--synth-density", "1.2", "--seed", "3",
    )
    assert code == 0
    return out


class TestSynthCommand:
    def test_outputs(self, synth_dir):
        train, val = load_manifest(os.path.join(synth_dir, "manifest.txt"))
        assert len(train) + len(val) == 4
        assert os.path.exists(os.path.join(synth_dir, "ground_truth.csv"))
        assert os.path.exists(os.path.join(synth_dir, "config.txt"))
        cloud = load_cloud(train[0])
        assert cloud.semantic is not None

    def test_rerun_from_frozen_config_reproduces(self, synth_dir, tmp_path):
        other = str(tmp_path / "again")
        code = run_cli(
            "synth", "--config", os.path.join(synth_dir, "config.txt"),
            "--out-dir", other,
        )
        assert code == 0
        for name in sorted(os.listdir(synth_dir)):
            if name == "config.txt":
                continue
            a = open(os.path.join(synth_dir, name), "rb").read()
            b = open(os.path.join(other, name), "rb").read()
            assert a == b, name


class TestPipeline:
    def test_weaklabel_then_traits_and_evaluate(self, synth_dir, tmp_path):
        weak_dir = str(tmp_path / "weak")
        assert run_cli(
            "weaklabel", "--manifest", os.path.join(synth_dir, "manifest.txt"),
            "--weak-k", "40", "--out-dir", weak_dir, "--seed", "5",
        ) == 0
        train, _ = load_manifest(os.path.join(synth_dir, "manifest.txt"))
        cid = os.path.splitext(os.path.basename(train[0]))[0]
        assert os.path.exists(os.path.join(weak_dir, cid + ".weak"))

        traits_dir = str(tmp_path / "traits")
        rows = []
        for i, path in enumerate(train):
            assert run_cli("traits", "--cloud", path, "--out-dir", traits_dir) == 0
            pid = os.path.splitext(os.path.basename(path))[0]
            text = open(os.path.join(traits_dir, pid + ".traits.csv")).read().splitlines()
            rows.extend(text if i == 0 else text[1:])
        csv_path = os.path.join(traits_dir, "all.traits.csv")
        with open(csv_path, "w") as f:
            f.write("\n".join(rows) + "\n")

        # evaluate gt-vs-gt semantics plus measured-vs-analytic traits
        ev_dir = str(tmp_path / "eval")
        assert run_cli(
            "evaluate", "--pred", train[0], "--gt", train[0],
            "--traits-pred", csv_path,
            "--traits-truth", os.path.join(synth_dir, "ground_truth.csv"),
            "--out-dir", ev_dir,
        ) == 0
        doc = json.loads(open(os.path.join(ev_dir, "metrics.json")).read())
        assert doc["semantic"]["mean"]["iou"] == 100.0
        assert doc["traits"]["stem_diameter"]["r2"] > 0.99

    def test_train_infer_cycle(self, synth_dir, tmp_path):
        manifest = os.path.join(synth_dir, "manifest.txt")
        weak_dir = str(tmp_path / "weak")
        assert run_cli(
            "weaklabel", "--manifest", manifest, "--weak-k", "60",
            "--out-dir", weak_dir, "--seed", "1",
        ) == 0
        pre_dir = str(tmp_path / "pre")
        assert run_cli(
            "pretrain", "--manifest", manifest, "--out-dir", pre_dir,
            "--pretrain-iterations", "4", "--fps-h", "64",
            "--voxel-size", "3.0", "--hidden-dim", "8", "--blocks", "2",
            "--feature-dim", "6", "--checkpoint-every", "0",
        ) == 0
        ckpt = os.path.join(pre_dir, "pretrained.ckpt")
        assert run_cli("describe-checkpoint", "--checkpoint", ckpt) == 0

        ft_dir = str(tmp_path / "ft")
        assert run_cli(
            "finetune-inst", "--manifest", manifest, "--weak-dir", weak_dir,
            "--checkpoint", ckpt, "--out-dir", ft_dir,
            "--finetune-iterations", "4", "--voxel-size", "3.0",
            "--hidden-dim", "8", "--blocks", "2", "--feature-dim", "6",
            "--checkpoint-every", "0",
        ) == 0
        model = os.path.join(ft_dir, "instance.ckpt")
        assert os.path.exists(model)

        train, val = load_manifest(manifest)
        inf_dir = str(tmp_path / "inf")
        assert run_cli(
            "infer", "--cloud", val[0], "--checkpoint", model,
            "--out-dir", inf_dir, "--min-cluster-size", "10",
            "--min-cluster-voxels", "1",
        ) == 0
        cid = os.path.splitext(os.path.basename(val[0]))[0]
        pred_path = os.path.join(inf_dir, cid + ".pred.xyzl")
        pred = load_cloud(pred_path)
        assert pred.semantic is not None
        assert os.path.exists(os.path.join(inf_dir, cid + ".instances.json"))

        ev_dir = str(tmp_path / "ev2")
        assert run_cli(
            "evaluate", "--pred", pred_path, "--gt", val[0],
            "--instances", os.path.join(inf_dir, cid + ".instances.json"),
            "--out-dir", ev_dir,
        ) == 0
        doc = json.loads(open(os.path.join(ev_dir, "metrics.json")).read())
        assert "semantic" in doc and "instance" in doc
