"""Two-stage source-free adaptation of U1, SC and U3."""

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import torch
from tqdm import tqdm

from dataio.batches import batch_iter
from dataio.volumes import SliceBatch
from engine.config import U1_FREEZE_PLAN, U2_FREEZE_PLAN, AdaptationConfig
from engine.inference import mean_dsc
from engine.logs import TrainingLog
from engine.source import make_optimizer, supervised_epoch
from losses.dice import dice_loss
from losses.entropy import entropy_loss
from losses.fms import fms_loss
from losses.objective import LossReport, total_loss
from pamr.refine import pamr_loss, to_pseudo_label
from segnet.blocks import apply_freeze, full_plan, parameter_digest
from segnet.checkpoint import network_from_record, network_record, read_checkpoint, load_network
from segnet.stats import collect_feature_stats
from segnet.unet import UNet, build_unet, forward
from stylecomp.compensation import save_triplet_grid, to_source_style
from stylecomp.network import SCNet, build_sc

BUNDLE_FORMAT = "sfda-bundle"
BUNDLE_VERSION = 1


@dataclass
class NetworkBundle:
    u1: UNet
    u2: UNet
    sc: SCNet
    u3: UNet

    def items(self):
        return (("u1", self.u1), ("u2", self.u2), ("sc", self.sc), ("u3", self.u3))


@dataclass
class PseudoLabelSet:
    y1: torch.Tensor
    y2: torch.Tensor
    y3: Optional[torch.Tensor] = None


@dataclass
class TrainingState:
    epoch: int = 0  # next epoch to run
    step: int = 0
    history: List[Dict[str, float]] = field(default_factory=list)
    optimizer_states: Dict[str, dict] = field(default_factory=dict)
    digests: Dict[str, str] = field(default_factory=dict)


def build_bundle(source_net: UNet, cfg: AdaptationConfig) -> NetworkBundle:
    """U1 and U2 copy the source model; SC and U3 start fresh."""
    if source_net.spec != cfg.source_spec:
        raise ValueError(
            f"Source model spec {source_net.spec.block_filters} does not match the configured "
            f"U1/U2 spec {cfg.source_spec.block_filters}"
        )
    u1 = apply_freeze(copy.deepcopy(source_net), U1_FREEZE_PLAN)
    u2 = apply_freeze(copy.deepcopy(source_net), U2_FREEZE_PLAN)
    sc = build_sc(cfg.effective_sc_spec(), cfg.seed + 1)
    u3 = build_unet(cfg.u3_spec, cfg.seed + 2)
    apply_freeze(u3, full_plan(u3))
    return NetworkBundle(u1, u2, sc, u3)


def freeze_digests(bundle: NetworkBundle) -> Dict[str, str]:
    """Digests of everything that must never change during adaptation."""
    return {
        "u2": parameter_digest(bundle.u2),
        "u1_frozen": parameter_digest(bundle.u1, sorted(bundle.u1.frozen_blocks)),
    }


class AdaptationSession:
    """
    Owns the four networks and their three optimizers for one adaptation run.

    stage1_step / stage2_step update U1, then SC, then U3 on one target batch,
    each with its own loss; pseudo-labels passed between them are detached.
    """

    def __init__(self, bundle: NetworkBundle, cfg: AdaptationConfig, state: Optional[TrainingState] = None):
        self.cfg = cfg
        self.bundle = bundle
        for _, net in bundle.items():
            net.to(cfg.device)

        self.optimizers = {
            "u1": make_optimizer(bundle.u1.parameters(), cfg.u1_optim),
            "sc": make_optimizer(bundle.sc.parameters(), cfg.sc_optim),
            "u3": make_optimizer(bundle.u3.parameters(), cfg.u3_optim),
        }
        self.state = state or TrainingState()
        for name, opt_state in self.state.optimizer_states.items():
            self.optimizers[name].load_state_dict(opt_state)
        if not self.state.digests:
            self.state.digests = freeze_digests(bundle)

        self.trace: List[str] = []
        self.last_labels: Optional[PseudoLabelSet] = None

    # =========================
    # Steps
    # =========================

    def stage1_step(self, batch: SliceBatch, epoch: int) -> LossReport:
        if self.cfg.schedule.is_stage2(epoch):
            raise ValueError(f"Schedule violation: stage-1 step at epoch {epoch} >= T={self.cfg.schedule.stage_t}")
        return self._step(batch, epoch, circular=False)

    def stage2_step(self, batch: SliceBatch, epoch: int) -> LossReport:
        if not self.cfg.schedule.is_stage2(epoch):
            raise ValueError(f"Schedule violation: stage-2 step at epoch {epoch} < T={self.cfg.schedule.stage_t}")
        return self._step(batch, epoch, circular=True)

    def step(self, batch: SliceBatch, epoch: int) -> LossReport:
        if self.cfg.schedule.is_stage2(epoch):
            return self.stage2_step(batch, epoch)
        return self.stage1_step(batch, epoch)

    def _update(self, name: str, terms: List[torch.Tensor]):
        if not terms:
            return
        optimizer = self.optimizers[name]
        optimizer.zero_grad(set_to_none=True)
        torch.stack(terms).sum().backward()
        optimizer.step()

    def _step(self, batch: SliceBatch, epoch: int, circular: bool) -> LossReport:
        cfg, flags, w = self.cfg, self.cfg.ablation, self.cfg.weights
        u1, u2, sc, u3 = self.bundle.u1, self.bundle.u2, self.bundle.sc, self.bundle.u3
        batch = batch.to(cfg.device)
        components: Dict[str, Optional[torch.Tensor]] = {}
        extra: Dict[str, float] = {}
        self.trace = []

        # y3 from U3 before any update of this step
        y3 = None
        if circular:
            self.trace.append("pseudo_u3")
            with torch.no_grad():
                y3 = to_pseudo_label(forward(u3, batch, train_mode=False))

        # U1: statistics + entropy (+ circular supervision)
        self.trace.append("u1")
        batch_stats, running_stats, o1 = collect_feature_stats(
            u1, batch, train_mode=True, frozen_only=True, return_probs=True
        )
        terms = []
        if not flags.no_fms:
            components["fms"] = fms_loss(batch_stats, running_stats)
            terms.append(w.fms * components["fms"])
        if not flags.no_emin:
            components["ent"] = entropy_loss(o1)
            terms.append(w.ent * components["ent"])
        if circular and not flags.no_cl:
            components["seg_circ"] = dice_loss(o1, y3, flat=cfg.flat_dice)
            terms.append(w.seg_circ * components["seg_circ"])
        self._update("u1", terms)
        y1 = to_pseudo_label(o1)

        # SC through the frozen U2
        self.trace.append("sc")
        if flags.no_sc:
            y2 = y1
        else:
            x_ts, _ = to_source_style(sc, batch, train_mode=True)
            o2 = forward(u2, x_ts, train_mode=True)
            components["seg_sc"] = dice_loss(o2, y1, flat=cfg.flat_dice)
            self._update("sc", [w.seg_sc * components["seg_sc"]])
            y2 = to_pseudo_label(o2)

        # U3: U2 pseudo-labels (+ refined-mask self-learning)
        self.trace.append("u3")
        o3 = forward(u3, batch, train_mode=True)
        components["seg_u3"] = dice_loss(o3, y2, flat=cfg.flat_dice)
        terms = [w.seg_u3 * components["seg_u3"]]
        if cfg.entropy_on_u3 and not flags.no_emin:
            ent_u3 = entropy_loss(o3)
            extra["ent_u3"] = float(ent_u3.detach())
            terms.append(w.ent * ent_u3)
        if circular and not flags.no_pamr:
            components["pamr"] = pamr_loss(o3, batch, cfg.pamr, flat=cfg.flat_dice)
            terms.append(w.pamr * components["pamr"])
        self._update("u3", terms)

        self.last_labels = PseudoLabelSet(y1, y2, y3)
        report = total_loss(components, w, epoch, cfg.schedule, step=self.state.step)
        report.extra.update(extra)
        self.state.step += 1
        return report

    # =========================
    # Epochs
    # =========================

    def run_epoch(self, target_ds, epoch: int, log: Optional[TrainingLog] = None) -> List[LossReport]:
        reports = []
        loader = batch_iter(target_ds, self.cfg.batch_size, self.cfg.seed, epoch, use_masks=False)
        stage = 2 if self.cfg.schedule.is_stage2(epoch) else 1
        for batch in tqdm(loader, desc=f"epoch {epoch} (stage {stage})", leave=False):
            report = self.step(batch, epoch)
            reports.append(report)
            if log is not None:
                log.log_step(report)
        return reports

    def audit_freeze(self, epoch: int):
        current = freeze_digests(self.bundle)
        for name, digest in self.state.digests.items():
            if current[name] != digest:
                raise RuntimeError(f"Freeze violation after epoch {epoch}: {name} parameters changed")

    def validate(self, val_ds, epoch: int, out_dir: Optional[Path] = None) -> Dict[str, float]:
        """Mean target DSC of U1, U2∘SC and U3."""
        b, device = self.bundle, self.cfg.device
        sc = None if self.cfg.ablation.no_sc else b.sc
        scores = {
            "u1": mean_dsc(b.u1, val_ds, device=device),
            "u2_sc": mean_dsc(b.u2, val_ds, sc=sc, device=device),
            "u3": mean_dsc(b.u3, val_ds, device=device),
        }
        if self.cfg.dump_triplets and out_dir is not None and sc is not None:
            self.dump_triplets(val_ds, Path(out_dir) / "triplets" / f"epoch_{epoch:03d}.png")
        return scores

    @torch.no_grad()
    def dump_triplets(self, val_ds, path: Path):
        volume, _ = val_ds[0]
        images = torch.from_numpy(volume.voxels[: self.cfg.batch_size]).unsqueeze(1).to(self.cfg.device)
        batch = SliceBatch(images)
        x_ts, raw = to_source_style(self.bundle.sc, batch, train_mode=False)
        save_triplet_grid(batch.images, raw, x_ts.images, path)

    def snapshot_state(self) -> TrainingState:
        self.state.optimizer_states = {k: copy.deepcopy(o.state_dict()) for k, o in self.optimizers.items()}
        return self.state


# =========================
# Bundle checkpoints
# =========================

def save_bundle(session: AdaptationSession, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = session.snapshot_state()
    payload = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "networks": {name: network_record(net) for name, net in session.bundle.items()},
        "optimizers": state.optimizer_states,
        "state": {
            "epoch": state.epoch,
            "step": state.step,
            "history": state.history,
            "digests": state.digests,
        },
        "rng_state": torch.get_rng_state(),
        "config": session.cfg.model_dump(mode="json"),
    }
    torch.save(payload, path)
    return path


def load_bundle(path, cfg: Optional[AdaptationConfig] = None) -> Tuple[NetworkBundle, TrainingState]:
    """Restore networks and training state; with cfg, specs must match it."""
    payload = read_checkpoint(path)
    if payload["format"] != BUNDLE_FORMAT:
        raise ValueError(f"{path} is a single network checkpoint, not an adaptation bundle")
    records = payload["networks"]
    expected = {"u1": None, "u2": None, "sc": None, "u3": None}
    if cfg is not None:
        expected = {"u1": cfg.source_spec, "u2": cfg.source_spec, "sc": cfg.effective_sc_spec(), "u3": cfg.u3_spec}
    nets = {name: network_from_record(records[name], expected[name]) for name in expected}
    bundle = NetworkBundle(**nets)
    for _, net in bundle.items():
        apply_freeze(net, _plan_from_frozen(net))

    raw = payload["state"]
    state = TrainingState(
        epoch=raw["epoch"],
        step=raw["step"],
        history=list(raw["history"]),
        optimizer_states=payload["optimizers"],
        digests=dict(raw["digests"]),
    )
    if payload.get("rng_state") is not None:
        torch.set_rng_state(payload["rng_state"])
    return bundle, state


def _plan_from_frozen(net):
    plan = full_plan(net)
    plan.trainable_block_ids -= set(net.frozen_blocks)
    return plan


# =========================
# Entry points
# =========================

def extension_epoch(u3: UNet, labeled_ds, cfg: AdaptationConfig, optimizer, epoch: int = 0) -> UNet:
    """One supervised epoch of U3 on labeled target volumes, reusing U3's optimizer."""
    if not labeled_ds:
        raise ValueError("Extension module needs at least one labeled target volume")
    slices = sum(v.shape[0] for v, _ in labeled_ds)
    batch_size = min(cfg.u3_optim.batch_size, slices)
    supervised_epoch(u3, labeled_ds, optimizer, batch_size, cfg.seed + 7919, epoch, cfg.flat_dice, cfg.device)
    return u3


def run_adaptation(
    target_ds,
    source_checkpoint,
    cfg: AdaptationConfig,
    labeled_volume=None,
    val_ds=None,
    out_dir=None,
    resume_from=None,
) -> AdaptationSession:
    """
    Full two-stage adaptation; returns the session holding all four networks.

    Args:
        target_ds: Target training volumes (masks, if any, are never used for training)
        source_checkpoint: Source model path or an already loaded UNet
        labeled_volume: Optional (Volume, LabelMask) list enabling the extension module
        val_ds: Labeled target test volumes for per-epoch validation
        out_dir: Directory for logs, bundle checkpoint and figures
        resume_from: Bundle checkpoint to continue from
    """
    out_dir = Path(out_dir) if out_dir else None

    if resume_from:
        bundle, state = load_bundle(resume_from, cfg)
        print(f"[ADAPT] Resuming from {resume_from} at epoch {state.epoch}")
    else:
        if isinstance(source_checkpoint, UNet):
            source_net = source_checkpoint
        else:
            source_net, _ = load_network(source_checkpoint, expected_spec=cfg.source_spec)
        bundle, state = build_bundle(source_net, cfg), None

    session = AdaptationSession(bundle, cfg, state)
    log = TrainingLog(out_dir, resume_epoch=session.state.epoch)
    sched = cfg.schedule
    print(
        f"[ADAPT] {cfg.ablation.label()}: {sched.total_epochs} epochs, T={sched.stage_t}, "
        f"batch {cfg.batch_size}, {len(target_ds)} target volumes"
        + (f", extension with {len(labeled_volume)} labeled volume(s)" if labeled_volume else "")
    )

    for epoch in range(session.state.epoch, sched.total_epochs):
        reports = session.run_epoch(target_ds, epoch, log)
        if labeled_volume:
            extension_epoch(bundle.u3, labeled_volume, cfg, session.optimizers["u3"], epoch)
        session.audit_freeze(epoch)

        row = {"epoch": epoch, "stage": 2 if sched.is_stage2(epoch) else 1}
        if reports:
            row["mean_total"] = sum(r.total for r in reports) / len(reports)
        last = epoch == sched.total_epochs - 1
        if val_ds and ((epoch + 1) % cfg.validate_every == 0 or last):
            row.update(session.validate(val_ds, epoch, out_dir))
        row.update({f"digest_{k}": v[:12] for k, v in session.state.digests.items()})
        session.state.history.append(row)
        log.log_epoch(row)
        session.state.epoch = epoch + 1

        scores = ", ".join(f"{k}={row[k]:.3f}" for k in ("u1", "u2_sc", "u3") if k in row)
        tqdm.write(f"[ADAPT] epoch {epoch} stage {row['stage']} loss={row.get('mean_total', float('nan')):.4f} {scores}")

        if out_dir is not None:
            save_bundle(session, out_dir / "adapt_bundle.pt")
            log.flush()

    print("[ADAPT] ✅ Adaptation finished")
    return session


def adapt(
    target_ds,
    source_checkpoint,
    cfg: AdaptationConfig,
    labeled_volume=None,
    val_ds=None,
    out_dir=None,
    resume_from=None,
) -> Tuple[UNet, TrainingState]:
    """Run adaptation and return the desired model U3 with the final training state."""
    session = run_adaptation(target_ds, source_checkpoint, cfg, labeled_volume, val_ds, out_dir, resume_from)
    return session.bundle.u3, session.snapshot_state()
