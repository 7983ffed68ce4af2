"""Subcommand implementations and exit-code mapping."""

import json
import re
import traceback
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from pydantic import ValidationError

from cli.config import RunConfig, write_run_record
from dataio.manifest import load_manifest, load_split, split_dataset
from dataio.preprocess import preprocess
from dataio.synthetic import make_synthetic_pair, write_synthetic_pair
from dataio.volumes import LabelMask, load_volume, save_volume
from engine.adaptation import adapt, load_bundle
from engine.config import ABLATION_SETTINGS
from engine.inference import predict_volume
from engine.source import train_source
from evaluation.figures import plot_subject_bars, plot_validation_curves, save_overlay
from evaluation.report import MetricReport, build_report, write_comparison
from losses.dice import one_hot
from pamr.refine import refine
from segnet.checkpoint import load_network, read_checkpoint, save_network

EXIT_OK = 0
EXIT_CODES = {
    "internal_error": 1,
    "validation_error": 2,
    "io_error": 3,
    "runtime_error": 4,
}


# =========================
# Helpers
# =========================

def _load_datasets(cfg: RunConfig, require_train_masks: bool):
    """Train and test splits of cfg.manifest; an unsplit manifest is split with cfg.seed."""
    manifest = load_manifest(cfg.manifest)
    if not manifest.split:
        manifest = split_dataset(manifest, cfg.train_fraction, cfg.seed)
    specs = cfg.preprocess_specs()
    train = load_split(manifest, "train", specs, require_masks=require_train_masks)
    test = load_split(manifest, "test", specs, require_masks=True) if manifest.entries_in("test") else []
    if not train:
        raise ValueError(f"Manifest {cfg.manifest} has no training volumes")
    return train, test


def _score(nets: Dict[str, Tuple], test, cfg: RunConfig, metadata: Dict) -> Dict[str, MetricReport]:
    """Build one report per (net, sc) pair on the labeled test volumes."""
    reports = {}
    for name, (net, sc) in nets.items():
        preds = [predict_volume(net, volume, sc=sc, device=cfg.device) for volume, _ in test]
        reports[name] = build_report(
            preds,
            [mask for _, mask in test],
            metadata={**metadata, "network": name},
            subject_names=[volume.name for volume, _ in test],
        )
        print(f"[EVAL] {name}: mean DSC {reports[name].mean_dsc:.3f}, mean ASSD {reports[name].mean_assd:.2f}")
    return reports


def _slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


# =========================
# Subcommands
# =========================

def run_pretrain(cfg: RunConfig) -> Dict:
    """Supervised training of the source model (or of the target upper bound)."""
    acfg = cfg.adaptation_config()
    train, test = _load_datasets(cfg, require_train_masks=True)
    tag = "SOURCE" if cfg.domain == "source" else "SUPERVISED"
    name = "source_model.pt" if cfg.domain == "source" else "supervised_model.pt"
    net, path = train_source(train, acfg, val_ds=test or None, out_path=cfg.out / name, tag=tag)
    return {"checkpoint": str(path)}


def run_adapt(cfg: RunConfig, ablation=None, out_dir: Optional[Path] = None) -> Dict:
    """Two-stage adaptation of cfg.checkpoint on the target manifest, optionally resumed from cfg.resume."""
    acfg = cfg.adaptation_config(ablation)
    out_dir = Path(out_dir or cfg.out)
    target, test = _load_datasets(cfg, require_train_masks=False)

    labeled = None
    if cfg.labeled_volume is not None:
        volume, mask = load_volume(cfg.labeled_volume, modality_tag="target_like")
        if mask is None:
            raise ValueError(f"Labeled volume {cfg.labeled_volume} has no label mask")
        spec = cfg.preprocess_specs()["target_like"].model_copy(update={"strip_background": False})
        labeled = [preprocess(volume, mask, spec)]
        print(f"[CLI] Extension module active with {cfg.labeled_volume}")

    u3, state = adapt(
        target, cfg.checkpoint, acfg,
        labeled_volume=labeled, val_ds=test or None, out_dir=out_dir, resume_from=cfg.resume,
    )
    path = save_network(u3, out_dir / "u3_model.pt", metadata={"digest": cfg.digest, "seed": cfg.seed})
    result = {"checkpoint": str(path), "bundle": str(out_dir / "adapt_bundle.pt")}
    if any("u3" in row for row in state.history):
        result["curves"] = str(plot_validation_curves(state.history, acfg.schedule.stage_t, out_dir / "validation_curves"))
        final = [row for row in state.history if "u3" in row][-1]
        result["final_dsc"] = {k: final[k] for k in ("u1", "u2_sc", "u3")}
    return result


def run_eval(cfg: RunConfig) -> Dict:
    """Score a single model, or every network of an adaptation bundle, on the test split."""
    acfg = cfg.adaptation_config()
    _, test = _load_datasets(cfg, require_train_masks=False)
    if not test:
        raise ValueError(f"Manifest {cfg.manifest} has no test volumes to evaluate on")

    payload = read_checkpoint(cfg.checkpoint)
    if payload["format"] == "sfda-bundle":
        bundle, _ = load_bundle(cfg.checkpoint, acfg)
        sc = None if acfg.ablation.no_sc else bundle.sc
        nets = {
            "W/o adaptation": (bundle.u2, None),
            "U1": (bundle.u1, None),
            "U2∘SC": (bundle.u2, sc),
            "U3 (desired)": (bundle.u3, None),
        }
    else:
        expected = acfg.u3_spec if cfg.network == "u3" else acfg.source_spec
        net, _ = load_network(cfg.checkpoint, expected_spec=expected)
        nets = {cfg.network: (net, None)}
    for net, sc in nets.values():
        net.to(cfg.device)
        if sc is not None:
            sc.to(cfg.device)

    metadata = {"digest": cfg.digest, "seed": cfg.seed, "ablation": acfg.ablation.label()}
    reports = _score(nets, test, cfg, metadata)
    for name, report in reports.items():
        report.to_csv(cfg.out / f"report_{_slug(name)}.csv")
    table_path = write_comparison(reports, cfg.out, stem="comparison")
    plot_subject_bars(reports, cfg.out / "per_subject_dsc")

    volume, gt = test[0]
    overlay = [gt] + [predict_volume(net, volume, sc=sc, device=cfg.device) for net, sc in nets.values()]
    save_overlay(volume, overlay, cfg.out / "overlays" / f"{volume.name}.png")

    print((cfg.out / "comparison.txt").read_text())
    return {"table": str(table_path), "mean_dsc": {k: r.mean_dsc for k, r in reports.items()}}


def run_synth(cfg: RunConfig) -> Dict:
    source, target = make_synthetic_pair(cfg.synthetic_spec(), cfg.seed)
    source_manifest, target_manifest = write_synthetic_pair(source, target, cfg.out, cfg.train_fraction, cfg.seed)
    return {"source_manifest": str(source_manifest), "target_manifest": str(target_manifest)}


def _load_soft_mask(path: Path, num_classes: int) -> torch.Tensor:
    if path.suffix == ".npy":
        soft = torch.from_numpy(np.load(path).astype(np.float32))
        if soft.ndim != 4:
            raise ValueError(f"Soft mask must be (S, C, H, W), got shape {tuple(soft.shape)}")
        return soft
    _, mask = load_volume(path)
    if mask is None:
        raise ValueError(f"{path} holds no label mask to refine")
    return one_hot(torch.from_numpy(mask.labels.astype(np.int64)), num_classes)


def run_refine(cfg: RunConfig) -> Dict:
    """Standalone mask refinement of one volume; writes the refined labels as portable-raw."""
    acfg = cfg.adaptation_config()
    volume, _ = load_volume(cfg.volume)
    soft = _load_soft_mask(Path(cfg.soft_mask), acfg.u3_spec.num_classes)
    if soft.shape[0] != volume.shape[0] or tuple(soft.shape[2:]) != volume.shape[1:]:
        raise ValueError(f"Soft mask {tuple(soft.shape)} does not match volume {volume.shape}")

    image = torch.from_numpy(volume.voxels).unsqueeze(1)
    refined = refine(soft, image, acfg.pamr)
    before = soft.argmax(dim=1)
    labels = refined.soft.argmax(dim=1)
    changed = float((labels != before).float().mean())

    mask = LabelMask(labels.numpy().astype(np.uint8), soft.shape[1])
    path = save_volume(volume, mask, cfg.out / f"{volume.name or 'volume'}_refined.sfda", format="raw")
    print(f"[PAMR] ✓ Refined {volume.shape[0]} slices, {changed:.2%} of voxels changed label")
    return {"output": str(path), "changed_fraction": changed}


def run_ablate(cfg: RunConfig) -> Dict:
    """The six ablation settings, run one after another, then one comparison table."""
    if cfg.resume is not None:
        # one bundle cannot seed six differently-flagged runs
        raise ValueError(
            "ablate does not take --resume; resume a single setting with "
            "adapt --resume <out>/<setting>/adapt_bundle.pt and its ablation flags"
        )
    _, test = _load_datasets(cfg, require_train_masks=False)
    if not test:
        raise ValueError(f"Manifest {cfg.manifest} has no test volumes to compare settings on")

    reports = {}
    for name, flags in ABLATION_SETTINGS.items():
        print(f"[CLI] Ablation setting: {name}")
        out_dir = cfg.out / _slug(name)
        run_adapt(cfg, ablation=flags, out_dir=out_dir)
        u3, _ = load_network(out_dir / "u3_model.pt", expected_spec=cfg.adaptation_config(flags).u3_spec)
        u3.to(cfg.device)
        metadata = {"digest": cfg.digest, "seed": cfg.seed, "ablation": name}
        reports.update(_score({name: (u3, None)}, test, cfg, metadata))

    table_path = write_comparison(reports, cfg.out, stem="ablation")
    plot_subject_bars(reports, cfg.out / "ablation_per_subject_dsc")
    print((cfg.out / "ablation.txt").read_text())
    return {"table": str(table_path), "mean_dsc": {k: r.mean_dsc for k, r in reports.items()}}


COMMANDS = {
    "pretrain": run_pretrain,
    "adapt": run_adapt,
    "eval": run_eval,
    "synth": run_synth,
    "refine": run_refine,
    "ablate": run_ablate,
}


# =========================
# Dispatch
# =========================

def error_code(error: BaseException) -> str:
    if isinstance(error, (ValidationError, ValueError)):
        return "validation_error"
    if isinstance(error, OSError):  # FileNotFoundError included
        return "io_error"
    if isinstance(error, RuntimeError):
        return "runtime_error"
    return "internal_error"


def error_line(error: BaseException) -> str:
    return json.dumps({"status": "error", "code": error_code(error), "message": str(error)})


def dispatch(cfg: RunConfig) -> int:
    """Run cfg.command; returns the process exit status."""
    try:
        write_run_record(cfg)
        print(f"[CLI] {cfg.command} (config digest {cfg.digest[:12]}, seed {cfg.seed})")
        result = COMMANDS[cfg.command](cfg)
        print(json.dumps({"status": "ok", "command": cfg.command, **result}, default=str))
        return EXIT_OK
    except Exception as e:
        code = error_code(e)
        if code == "internal_error":
            traceback.print_exc()
        print(f"[CLI] ❌ {cfg.command} failed: {str(e)}")
        print(error_line(e))
        return EXIT_CODES[code]
