"""Checkpoint container: format tag, layer list, tensors with their shapes, and a
training log as CSV."""

from __future__ import annotations

import csv
from pathlib import Path

import torch

from ..errors import ModelError
from .network import FORMAT_VERSION, LayerSpec, PatchDetector, check_finite

LOG_FIELDS = ("epoch", "step", "lr", "train_loss", "train_acc", "val_acc")


def save_checkpoint(model: PatchDetector, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    payload = dict(
        format=FORMAT_VERSION,
        meta=model.describe(),
        shapes={k: list(v.shape) for k, v in state.items()},
        state=state,
    )
    torch.save(payload, path)
    return path


def load_checkpoint(path) -> PatchDetector:
    path = Path(path)
    if not path.is_file():
        raise ModelError(f"missing detector checkpoint: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise ModelError(f"unreadable checkpoint {path}: {exc}") from None
    if payload.get("format") != FORMAT_VERSION:
        raise ModelError(f"{path} has format {payload.get('format')!r}, expected {FORMAT_VERSION!r}")
    meta = payload["meta"]
    model = PatchDetector([LayerSpec(**d) for d in meta["layers"]], meta["patch_size"], meta["feature_mode"],
                          seed=None)
    for name, shape in payload["shapes"].items():
        if list(payload["state"][name].shape) != shape:
            raise ModelError(f"tensor {name} in {path} does not match its recorded shape {shape}")
    try:
        model.load_state_dict(payload["state"])
    except RuntimeError as exc:
        raise ModelError(f"{path} does not fit its own layer list: {exc}") from None
    model.seed = meta.get("seed")
    check_finite(model)
    model.eval()
    return model


def write_log(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in LOG_FIELDS})
    return path


def read_log(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [dict(epoch=int(r["epoch"]), step=int(r["step"]), lr=float(r["lr"]), train_loss=float(r["train_loss"]),
                 train_acc=float(r["train_acc"]), val_acc=float(r["val_acc"])) for r in rows]
