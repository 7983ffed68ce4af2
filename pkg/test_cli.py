"""Run config resolution, exit codes and the cheap subcommands end to end."""

import json
import re

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from cli.commands import EXIT_CODES, error_code, error_line
from cli.config import VALID_KEYS, parse_config, write_run_record
from cli.main import build_parser, main
from dataio.volumes import LabelMask, Volume, load_volume, save_volume
from engine.config import ABLATION_SETTINGS, desk_scale_config, tiny_scale_config
from segnet.blocks import parameter_digest
from segnet.checkpoint import load_network, save_network
from segnet.unet import NetworkSpec, build_unet

SMALL_SYNTH = ["--image-size", "16", "--slices-per-volume", "4", "--volumes-per-domain", "3"]


def _last_json(capsys) -> dict:
    lines = [line for line in capsys.readouterr().out.splitlines() if line.startswith("{")]
    return json.loads(lines[-1])


@pytest.fixture
def synth_dir(tmp_path, capsys):
    out = tmp_path / "data"
    assert main(["synth", "--out", str(out), *SMALL_SYNTH]) == 0
    capsys.readouterr()
    return out


# =========================
# Config resolution
# =========================

def test_flags_override_file_values(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("COMMAND=synth\nSTAGE_T=150\nSEED=3\n")

    assert parse_config(path, {"stage_t": 10}).stage_t == 10
    cfg = parse_config(path, {"stage_t": None})
    assert cfg.stage_t == 150 and cfg.seed == 3


def test_unknown_key_lists_valid_keys(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("COMMAND=synth\nSTAGE=3\n")
    with pytest.raises(ValueError) as err:
        parse_config(path)
    assert "stage" in str(err.value)
    assert all(key in str(err.value) for key in ("stage_t", "seed", "no_pamr"))
    assert "digest" not in VALID_KEYS


def test_required_and_missing_paths(tmp_path):
    with pytest.raises(ValueError):
        parse_config(None, {"command": "adapt"})
    with pytest.raises(FileNotFoundError):
        parse_config(None, {"command": "pretrain", "manifest": str(tmp_path / "missing.json")})
    with pytest.raises(FileNotFoundError):
        parse_config(tmp_path / "missing.env")
    with pytest.raises(ValidationError):
        parse_config(None, {"command": "train"})


def test_digest_is_stable_and_recorded(tmp_path):
    first = parse_config(None, {"command": "synth", "seed": 1, "out": str(tmp_path)})
    second = parse_config(None, {"command": "synth", "seed": 1, "out": str(tmp_path)})
    other = parse_config(None, {"command": "synth", "seed": 2, "out": str(tmp_path)})
    assert first.digest == second.digest != other.digest
    assert len(first.digest) == 64

    record = json.loads(write_run_record(first).read_text())
    assert record["digest"] == first.digest and record["config"]["seed"] == 1


def test_adaptation_config_merges_preset_and_flags():
    cfg = parse_config(None, {"command": "synth", "preset": "desk", "epochs": 4, "stage_t": 2, "batch": 2, "no_pamr": True})
    acfg = cfg.adaptation_config()
    desk = desk_scale_config()

    assert (acfg.schedule.stage_t, acfg.schedule.total_epochs) == (2, 4)
    assert {acfg.source_optim.batch_size, acfg.u1_optim.batch_size, acfg.sc_optim.batch_size, acfg.u3_optim.batch_size} == {2}
    assert acfg.u1_optim.lr == desk.u1_optim.lr
    assert acfg.u3_spec == desk.u3_spec
    assert acfg.ablation.no_pamr and acfg.ablation.label() == "W/o PAMR"

    # only the epochs flag given: stage_t keeps the preset value 20
    with pytest.raises(ValidationError):
        parse_config(None, {"command": "synth", "preset": "desk", "epochs": 5}).adaptation_config()


def test_parser_leaves_unset_flags_as_none():
    args = vars(build_parser().parse_args(["adapt", "--no-fms", "--stage-t", "7"]))
    assert args["no_fms"] is True and args["stage_t"] == 7
    assert args["no_cl"] is None and args["seed"] is None and args["config"] is None


@pytest.mark.parametrize(
    "error,code",
    [
        (ValueError("x"), "validation_error"),
        (FileNotFoundError("x"), "io_error"),
        (OSError("x"), "io_error"),
        (RuntimeError("Freeze violation"), "runtime_error"),
        (KeyError("x"), "internal_error"),
    ],
)
def test_error_codes(error, code):
    assert error_code(error) == code
    assert json.loads(error_line(error)) == {"status": "error", "code": code, "message": str(error)}


# =========================
# Commands
# =========================

def test_synth_writes_split_manifests(synth_dir):
    for tag in ("source", "target"):
        manifest = json.loads((synth_dir / f"{tag}_manifest.json").read_text())
        assert len(manifest["entries"]) == 3
        assert sorted(manifest["split"].values()) == ["test", "train", "train"]
    assert (synth_dir / "run_config.json").exists()


def test_missing_manifest_exit_codes(tmp_path, capsys):
    assert main(["adapt", "--out", str(tmp_path)]) == EXIT_CODES["validation_error"]
    assert _last_json(capsys)["code"] == "validation_error"

    assert main(["pretrain", "--manifest", str(tmp_path / "nope.json")]) == EXIT_CODES["io_error"]
    assert _last_json(capsys)["code"] == "io_error"


def test_eval_rejects_a_mismatched_checkpoint(synth_dir, tmp_path, capsys):
    checkpoint = save_network(build_unet(NetworkSpec(block_filters=[2, 4, 4, 8, 8, 8, 4, 4, 2]), 0), tmp_path / "tiny.pt")
    code = main([
        "eval", "--preset", "desk", "--preprocess", "synthetic", *SMALL_SYNTH,
        "--manifest", str(synth_dir / "target_manifest.json"),
        "--checkpoint", str(checkpoint), "--out", str(tmp_path / "eval"),
    ])
    assert code == EXIT_CODES["validation_error"]
    assert _last_json(capsys)["code"] == "validation_error"


def test_eval_of_a_source_checkpoint_writes_reports(synth_dir, tmp_path, capsys):
    checkpoint = save_network(build_unet(desk_scale_config().source_spec, 0), tmp_path / "source.pt")
    out = tmp_path / "eval"
    code = main([
        "eval", "--preset", "desk", "--preprocess", "synthetic", *SMALL_SYNTH, "--network", "source",
        "--manifest", str(synth_dir / "target_manifest.json"),
        "--checkpoint", str(checkpoint), "--out", str(out),
    ])
    assert code == 0
    result = _last_json(capsys)
    assert result["status"] == "ok" and set(result["mean_dsc"]) == {"source"}

    table = pd.read_csv(out / "comparison.csv", index_col=0)
    assert list(table.index) == ["source"]
    assert "DSC mean" in table.columns and "ASSD mean" in table.columns
    assert (out / "report_source.csv").exists()
    assert (out / "per_subject_dsc.png").exists()
    assert list((out / "overlays").glob("*.png"))


def _labeled_volume(tmp_path):
    labels = np.zeros((2, 16, 16), dtype=np.uint8)
    labels[:, 4:10, 4:10] = 1
    voxels = np.where(labels > 0, 0.8, 0.2).astype(np.float32)
    return save_volume(Volume(voxels, name="case"), LabelMask(labels), tmp_path / "case.sfda", format="raw")


def test_refine_writes_a_label_volume(tmp_path, capsys):
    path = _labeled_volume(tmp_path)
    out = tmp_path / "refined"
    code = main(["refine", "--volume", str(path), "--soft-mask", str(path), "--out", str(out)])
    assert code == 0
    result = _last_json(capsys)
    assert 0.0 <= result["changed_fraction"] <= 1.0

    volume, mask = load_volume(out / "case_refined.sfda")
    assert mask is not None and mask.shape == volume.shape == (2, 16, 16)


def test_refine_rejects_a_badly_shaped_soft_mask(tmp_path, capsys):
    path = _labeled_volume(tmp_path)
    soft = tmp_path / "soft.npy"
    np.save(soft, np.zeros((2, 16, 16), dtype=np.float32))
    code = main(["refine", "--volume", str(path), "--soft-mask", str(soft), "--out", str(tmp_path / "out")])
    assert code == EXIT_CODES["validation_error"]
    assert _last_json(capsys)["code"] == "validation_error"


# =========================
# Full pipeline at tiny scale
# =========================

TINY_DATA = ["--image-size", "32", "--slices-per-volume", "4", "--volumes-per-domain", "3"]
TINY_RUN = ["--preset", "tiny", "--preprocess", "synthetic", *TINY_DATA]


@pytest.fixture(scope="module")
def pretrained(tmp_path_factory):
    """Synthetic 32x32 pair plus a tiny source model trained through the CLI."""
    root = tmp_path_factory.mktemp("pipeline")
    data = root / "data"
    assert main(["synth", "--out", str(data), *TINY_DATA]) == 0
    code = main(["pretrain", *TINY_RUN, "--manifest", str(data / "source_manifest.json"), "--out", str(root / "source")])
    assert code == 0
    return data, root / "source" / "source_model.pt"


def _run(command, data, checkpoint, out, *extra):
    return main([
        command, *TINY_RUN,
        "--manifest", str(data / "target_manifest.json"),
        "--checkpoint", str(checkpoint), "--out", str(out), *extra,
    ])


def test_pretrain_adapt_then_eval_bundle(pretrained, tmp_path, capsys):
    data, source_model = pretrained
    assert source_model.exists()

    adapt_out = tmp_path / "adapt"
    assert _run("adapt", data, source_model, adapt_out) == 0
    result = _last_json(capsys)
    assert result["status"] == "ok" and result["command"] == "adapt"
    assert set(result["final_dsc"]) == {"u1", "u2_sc", "u3"}
    assert all(0.0 <= v <= 1.0 for v in result["final_dsc"].values())
    for name in ("u3_model.pt", "adapt_bundle.pt", "steps.csv", "epochs.csv", "validation_curves.png"):
        assert (adapt_out / name).exists(), name
    assert len(pd.read_csv(adapt_out / "epochs.csv")) == 2

    eval_out = tmp_path / "eval"
    assert _run("eval", data, adapt_out / "adapt_bundle.pt", eval_out) == 0
    result = _last_json(capsys)
    rows = ["W/o adaptation", "U1", "U2∘SC", "U3 (desired)"]
    assert result["status"] == "ok" and list(result["mean_dsc"]) == rows
    assert list(pd.read_csv(eval_out / "comparison.csv", index_col=0).index) == rows
    assert (eval_out / "report_u3_desired.csv").exists()


def test_adapt_with_labeled_volume_changes_u3(pretrained, tmp_path, capsys):
    data, source_model = pretrained
    labeled = data / "target" / "target_000.sfda"

    assert _run("adapt", data, source_model, tmp_path / "plain") == 0
    capsys.readouterr()
    assert _run("adapt", data, source_model, tmp_path / "extended", "--labeled-volume", str(labeled)) == 0
    out = capsys.readouterr().out
    assert "Extension module active" in out
    assert json.loads(out.strip().splitlines()[-1])["status"] == "ok"

    spec = tiny_scale_config().u3_spec
    plain, _ = load_network(tmp_path / "plain" / "u3_model.pt", expected_spec=spec)
    extended, _ = load_network(tmp_path / "extended" / "u3_model.pt", expected_spec=spec)
    assert parameter_digest(plain) != parameter_digest(extended)


def test_adapt_with_unlabeled_volume_is_validation_error(pretrained, tmp_path, capsys):
    data, source_model = pretrained
    volume, _ = load_volume(data / "target" / "target_000.sfda")
    bare = save_volume(volume, None, tmp_path / "bare.sfda", format="raw")
    assert _run("adapt", data, source_model, tmp_path / "out", "--labeled-volume", str(bare)) == EXIT_CODES["validation_error"]
    assert _last_json(capsys)["code"] == "validation_error"


def test_ablate_writes_one_row_per_setting(pretrained, tmp_path, capsys):
    data, source_model = pretrained
    out = tmp_path / "ablate"
    assert _run("ablate", data, source_model, out) == 0
    result = _last_json(capsys)
    assert result["status"] == "ok" and result["command"] == "ablate"
    assert list(result["mean_dsc"]) == list(ABLATION_SETTINGS)

    table = pd.read_csv(out / "ablation.csv", index_col=0)
    assert list(table.index) == list(ABLATION_SETTINGS)
    assert table["DSC mean"].between(0.0, 1.0).all()
    for name in ABLATION_SETTINGS:
        variant = out / re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")
        assert (variant / "u3_model.pt").exists() and (variant / "adapt_bundle.pt").exists()
    assert (out / "ablation_per_subject_dsc.png").exists()


def test_ablate_rejects_a_shared_resume_bundle(pretrained, tmp_path, capsys):
    data, source_model = pretrained
    code = _run("ablate", data, source_model, tmp_path / "ablate", "--resume", str(source_model))
    assert code == EXIT_CODES["validation_error"]
    assert _last_json(capsys)["code"] == "validation_error"
    assert not (tmp_path / "ablate" / "w_o_fms").exists()
