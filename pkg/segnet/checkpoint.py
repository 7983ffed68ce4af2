"""Network checkpoints: spec + parameters + batch-norm running statistics."""

from pathlib import Path
from typing import Optional

import torch
from pydantic import BaseModel

from segnet.unet import NetworkSpec, UNet

CHECKPOINT_FORMAT = "sfda-network"
CHECKPOINT_VERSION = 1


def network_kind(net) -> str:
    return "unet" if isinstance(net, UNet) else "sc"


def network_record(net) -> dict:
    """Serializable description of one network (spec, weights, freeze state)."""
    return {
        "kind": network_kind(net),
        "spec": net.spec.model_dump(),
        "state_dict": {k: v.detach().cpu().clone() for k, v in net.state_dict().items()},
        "frozen_blocks": sorted(net.frozen_blocks),
    }


def network_from_record(record: dict, expected_spec: Optional[BaseModel] = None):
    """Rebuild a network from network_record output."""
    from stylecomp.network import SCNet, SCSpec

    kind = record.get("kind")
    if kind == "unet":
        spec = NetworkSpec.model_validate(record["spec"])
        net = UNet(spec)
    elif kind == "sc":
        spec = SCSpec.model_validate(record["spec"])
        net = SCNet(spec)
    else:
        raise ValueError(f"Unknown network kind '{kind}' in checkpoint")

    if expected_spec is not None and spec != expected_spec:
        raise ValueError(
            f"Checkpoint spec does not match the configured spec.\n"
            f"  checkpoint: {spec.model_dump()}\n"
            f"  configured: {expected_spec.model_dump()}"
        )
    net.load_state_dict(record["state_dict"], strict=True)
    net.frozen_blocks = set(record.get("frozen_blocks", []))
    return net


def save_network(net, path, metadata: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "network": network_record(net),
        "metadata": metadata or {},
    }
    torch.save(payload, path)
    return path


def read_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise OSError(f"Cannot read checkpoint {path}: {str(e)}")
    if not isinstance(payload, dict) or payload.get("format") not in (CHECKPOINT_FORMAT, "sfda-bundle"):
        raise ValueError(f"{path} is not an sfda checkpoint")
    return payload


def load_network(path, expected_spec: Optional[BaseModel] = None):
    """
    Load a single-network checkpoint.

    Args:
        path: File written by save_network
        expected_spec: Raise ValueError if the stored spec differs

    Returns:
        (network, metadata dict)
    """
    payload = read_checkpoint(path)
    if payload["format"] != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is an adaptation bundle, not a single network checkpoint")
    return network_from_record(payload["network"], expected_spec), payload.get("metadata", {})
