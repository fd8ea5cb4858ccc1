import csv
import json

import pytest

from _oracles import tiny_arch
from fmrigan.cli import COMMANDS, build_parser, run_cli, sha256_file
from fmrigan.config import ARM_NAMES, resolve_config, validate_config
from fmrigan.errors import ConfigError
from fmrigan.nets import CONV1D
from fmrigan.seqvol import read_dataset, read_parcellation, read_schedule

TINY = {
    "seed": 3,
    "phantom": {
        "dims": [4, 8, 8, 8],
        "n_subjects_per_class": 6,
        "rois": [
            {"name": "bio_roi", "center": [2, 2, 4], "radius": 1, "active": "BIO", "amplitude_by_class": {"ASD": 1.0, "HC": 0.5}},
            {"name": "scram_roi", "center": [5, 5, 4], "radius": 1, "active": "SCRAM", "amplitude_by_class": {"ASD": 0.5, "HC": 1.0}},
        ],
        "spatial_smooth_fwhm": 0.0,
        "block_len_frames": 1,
    },
    "arch": tiny_arch(CONV1D, conv1d_kernel=2, conv1d_stride=1, conv1d_pad=0, conv1d_layers=1).to_dict(),
    "train": {"max_pretrain_steps": 3, "max_gan_steps": 4, "checkpoint_every": 2},
    "eval": {"perplexity": 3.0, "n_synth_per_class": 3, "tsne_iter": 60, "pca_dims": 5, "classifier": {"epochs": 2}},
}


def cli(*argv):
    return run_cli([str(a) for a in argv])


def read_csv(path, drop=("seconds",)):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: v for k, v in r.items() if k not in drop} for r in rows]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """phantom -> split -> pretrain -> train -> generate on the tiny config."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    d = {k: root / k for k in ("phantom", "split", "pretrain", "train", "generate")}
    assert cli("phantom", "--config", cfg, "--out", d["phantom"]) == 0
    assert cli("split", "--config", cfg, "--data", d["phantom"], "--out", d["split"]) == 0
    common = ["--config", cfg, "--data", d["phantom"], "--split", d["split"] / "split.json"]
    assert cli("pretrain", *common, "--out", d["pretrain"]) == 0
    assert cli("train", *common, "--init", d["pretrain"] / "ckpt_pretrain", "--out", d["train"]) == 0
    assert cli("generate", "--config", cfg, "--checkpoint", d["train"] / "ckpt_4", "--out", d["generate"]) == 0
    d["cfg"] = cfg
    d["root"] = root
    return d


# ------------------------------------------------------------------- parsing


def test_version(capsys):
    assert cli("version") == 0
    assert capsys.readouterr().out.startswith("fmrigan ")


@pytest.mark.parametrize("command", [c for c in COMMANDS])
def test_help_exits_zero_and_lists_flags(command, capsys):
    assert cli(command, "--help") == 0
    text = capsys.readouterr().out
    sub = build_parser()._subparsers._group_actions[0].choices[command]
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text


def test_unknown_flag_is_usage_error(capsys):
    assert cli("phantom", "--bogus", "1") == 2
    assert "usage" in capsys.readouterr().err
    assert cli("frobnicate") == 2


def test_empty_config_file_exits_2(tmp_path, caplog):
    cfg = tmp_path / "empty.json"
    cfg.write_text("")
    assert cli("phantom", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "empty" in caplog.text
    assert not (tmp_path / "o").exists()


def test_missing_config_named(tmp_path, caplog):
    assert cli("phantom", "--config", tmp_path / "nope.json", "--out", tmp_path / "o") == 2
    assert "nope.json" in caplog.text


def test_missing_input_named(tmp_path, caplog):
    assert cli("split", "--data", tmp_path / "absent", "--out", tmp_path / "o") == 2
    assert "absent" in caplog.text


def test_output_dir_required(caplog):
    assert cli("phantom") == 2
    assert "--out" in caplog.text


# -------------------------------------------------------------------- config


def test_desk_defaults_are_consistent():
    cfg = resolve_config({})
    assert cfg.profile == "desk" and cfg.arch.dims == (24, 16, 16, 16) and cfg.arch.z_dim == 64
    assert cfg.phantom.dims == cfg.arch.dims and cfg.train.batch_size == 1
    assert cfg.eval.arms == list(ARM_NAMES)


def test_paper_profile_defaults(tmp_path):
    path = tmp_path / "p.json"
    path.write_text('{"profile": "paper"}')
    cfg = validate_config(path)
    assert cfg.arch.z_dim == 864
    assert [layer[0] for layer in cfg.arch.encoder_conv] == [16, 8, 4, 2]
    assert cfg.train.gan_epochs == 100 and cfg.train.batch_size == 1
    assert cfg.arch.dims == (146, 91, 109, 91) and cfg.split_sizes() == [72, 23, 23]
    assert cfg.train.lr_eg == 1e-4
    assert resolve_config({"profile": "paper", "reported_lr_eg": True}).train.lr_eg == 4.0


def test_conflicting_dims_name_both_fields():
    with pytest.raises(ConfigError) as err:
        resolve_config({"phantom": {"dims": [24, 16, 16, 8], "rois": []}})
    assert "phantom.dims" in str(err.value) and "arch.dims" in str(err.value)


def test_infeasible_perplexity_rejected():
    with pytest.raises(ConfigError, match="eval.perplexity"):
        resolve_config({"eval": {"perplexity": 50}})


@pytest.mark.parametrize(
    "raw, path",
    [
        ({"bogus": 1}, "bogus"),
        ({"eval": {"arms": ["none", "vae"]}}, "eval.arms"),
        ({"train": {"batch_size": 0}}, "train.batch_size"),
        ({"arch": {"encoder_conv": [[2, 3, 4]]}}, "arch.encoder_conv[0]"),
        ({"phantom": {"rois": [{"name": "r", "center": [0, 0, 0], "radius": 2}]}}, "phantom"),
        ({"split": {"sizes": [1, 1, 1]}}, "split.sizes"),
    ],
)
def test_errors_carry_field_path(raw, path):
    with pytest.raises(ConfigError, match=path.replace("[", r"\[").replace("]", r"\]")):
        resolve_config(raw)


def test_set_overrides_and_seed_propagation():
    cfg = resolve_config({}, ["train.lr_eg=0.5", "eval.arms=none,gaussian", "seed=7"])
    assert cfg.train.lr_eg == 0.5 and cfg.eval.arms == ["none", "gaussian"]
    assert cfg.phantom.seed == 7 and cfg.train.seed == 7
    pinned = resolve_config({"seed": 7, "train": {"seed": 1}})
    assert pinned.train.seed == 1 and pinned.phantom.seed == 7
    with pytest.raises(ConfigError):
        resolve_config({}, ["train.lr_eg"])


def test_config_roundtrips_through_dict():
    cfg = resolve_config(TINY)
    assert resolve_config(cfg.to_dict()).to_dict() == cfg.to_dict()


# ------------------------------------------------------------------ pipeline


def test_phantom_outputs_and_manifest(pipeline):
    out = pipeline["phantom"]
    seqs = read_dataset(out / "data")
    assert len(seqs) == 12 and len(list((out / "data").glob("*.f32"))) == 12
    assert read_schedule(out / "schedule.txt").conditions[:2] == ["BIO", "SCRAM"]
    assert read_parcellation(out / "parcellation.json").labels.shape == (8, 8, 8)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "phantom" and manifest["seeds"]["phantom.seed"] == 3
    for rel, digest in manifest["artifacts"].items():
        assert sha256_file(out / rel) == digest
    assert json.loads((out / "config.json").read_text()) == manifest["config"]
    assert not (out / ".lock").exists()


def test_split_is_partition_with_train_normalization(pipeline):
    doc = json.loads((pipeline["split"] / "split.json").read_text())
    ids = doc["train_ids"] + doc["val_ids"] + doc["test_ids"]
    assert sorted(ids) == [f"sub-{i:03d}" for i in range(12)]
    assert doc["normalization"]["fitted_on"] == "train" and doc["normalization"]["scale"] > 0


def test_training_outputs(pipeline):
    assert len(read_csv(pipeline["pretrain"] / "history_pretrain.csv")) == 3
    hist = read_csv(pipeline["train"] / "history.csv")
    assert [int(r["step"]) for r in hist] == [0, 1, 2, 3]
    assert (pipeline["train"] / "ckpt_2.json").is_file() and (pipeline["train"] / "ckpt_4.f32").is_file()
    synth = read_dataset(pipeline["generate"] / "synthetic")
    assert [s.label for s in synth] == ["ASD"] * 3 + ["HC"] * 3


def test_resume_extends_history_continuously(pipeline):
    root, cfg = pipeline["root"], pipeline["cfg"]
    common = ["--config", cfg, "--data", pipeline["phantom"], "--split", pipeline["split"] / "split.json"]
    assert cli("train", *common, "--resume", pipeline["train"] / "ckpt_4", "--set", "train.max_gan_steps=7", "--out", root / "r") == 0
    assert cli("train", *common, "--init", pipeline["pretrain"] / "ckpt_pretrain", "--set", "train.max_gan_steps=7", "--out", root / "u") == 0
    resumed, straight = read_csv(root / "r" / "history.csv"), read_csv(root / "u" / "history.csv")
    assert [int(r["step"]) for r in resumed] == list(range(7))
    assert resumed[:4] == read_csv(pipeline["train"] / "history.csv")
    assert resumed == straight


def test_resume_rejects_pretrain_checkpoint(pipeline, caplog):
    args = ["--config", pipeline["cfg"], "--data", pipeline["phantom"], "--split", pipeline["split"] / "split.json"]
    assert cli("train", *args, "--resume", pipeline["pretrain"] / "ckpt_pretrain", "--out", pipeline["root"] / "bad") == 2
    assert "--init" in caplog.text


def test_eval_clf_three_arms(pipeline):
    out = pipeline["root"] / "clf"
    args = ["--config", pipeline["cfg"], "--data", pipeline["phantom"], "--split", pipeline["split"] / "split.json"]
    assert cli("eval-clf", *args, "--arms", "none,gaussian,conv1d", "--generator", f"conv1d={pipeline['train'] / 'ckpt_4'}", "--out", out) == 0
    rows = read_csv(out / "classifier.csv", drop=())
    assert [r["method"] for r in rows] == ["none", "gaussian", "conv1d"]
    assert list(rows[0]) == ["method", "ce_loss", "accuracy", "f1", "auc", "n_train", "n_test"]


def test_eval_roi_embed_and_report(pipeline):
    root = pipeline["root"]
    assert cli("eval-roi", "--config", pipeline["cfg"], "--data", pipeline["phantom"], "--synthetic", pipeline["generate"], "--out", root / "roi") == 0
    real = read_csv(root / "roi" / "contrast_real.csv", drop=())
    assert [r["region"] for r in real] == ["bio_roi", "scram_roi"]
    assert float(real[0]["t_statistic"]) > 0 > float(real[1]["t_statistic"])
    assert (root / "roi" / "contrast_synthetic.csv").is_file()
    assert cli("eval-embed", "--config", pipeline["cfg"], "--data", pipeline["phantom"], "--synthetic", pipeline["generate"], "--out", root / "emb") == 0
    proj = read_csv(root / "emb" / "projection.csv", drop=())
    assert len(proj) == 18 and sum(r["source"] == "synthetic" for r in proj) == 6
    assert (root / "emb" / "projection.svg").read_text().startswith("<svg")
    assert cli("report", "--inputs", root / "roi", root / "emb", "--out", root / "rep") == 0
    text = (root / "rep" / "report.md").read_text()
    assert "bio_roi" in text and "projection.svg" in text


def test_rerun_from_manifest_is_byte_identical(pipeline):
    root = pipeline["root"]
    args = ["--config", pipeline["cfg"], "--data", pipeline["phantom"], "--split", pipeline["split"] / "split.json"]
    assert cli("eval-clf", *args, "--arms", "none,gaussian", "--out", root / "m1") == 0
    assert cli("eval-clf", "--config", root / "m1" / "manifest.json", "--out", root / "m2") == 0
    assert (root / "m1" / "classifier.csv").read_bytes() == (root / "m2" / "classifier.csv").read_bytes()
    m1 = json.loads((root / "m1" / "manifest.json").read_text())
    m2 = json.loads((root / "m2" / "manifest.json").read_text())
    assert m1["artifacts"]["classifier.csv"] == m2["artifacts"]["classifier.csv"]


def test_inputs_not_mutated(pipeline):
    def digest(d):
        return {p.relative_to(d).as_posix(): sha256_file(p) for p in sorted(d.rglob("*")) if p.is_file()}

    before = digest(pipeline["phantom"]), digest(pipeline["split"])
    assert cli("eval-roi", "--config", pipeline["cfg"], "--data", pipeline["phantom"], "--out", pipeline["root"] / "roi2") == 0
    assert (digest(pipeline["phantom"]), digest(pipeline["split"])) == before


def test_locked_output_dir_is_runtime_failure(tmp_path, caplog):
    out = tmp_path / "locked"
    out.mkdir()
    (out / ".lock").write_text("123\n")
    assert cli("phantom", "--config", pipeline_cfg(tmp_path), "--out", out) == 1
    assert "locked" in caplog.text
    assert not (out / "manifest.json").exists()


def test_divergence_is_runtime_failure(pipeline, caplog):
    args = ["--config", pipeline["cfg"], "--data", pipeline["phantom"], "--split", pipeline["split"] / "split.json"]
    assert cli("pretrain", *args, "--set", "train.lr_pretrain=1e38", "--out", pipeline["root"] / "div") == 1
    assert "diverged" in caplog.text


def pipeline_cfg(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY))
    return path
