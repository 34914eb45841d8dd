"""Model checkpoints: tensor manifest plus a header with everything needed to
reuse the model on raw data or resume training."""

from __future__ import annotations

from dataclasses import dataclass

from iol.diff_engine.checkpoint import load_into, params_to_manifest, read_manifest, save_manifest
from iol.diff_engine.optim import AdamState
from iol.model import IOLModel, ModelConfig, init_model
from iol.trainer import TrainReport
from iol.trajectory_store import StandardizationParams


@dataclass
class Checkpoint:
    model: IOLModel
    standardization: StandardizationParams
    optimizer: AdamState | None = None
    report: TrainReport | None = None
    data: dict | None = None


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    header = {
        "model_config": ckpt.model.config.to_dict(),
        "alpha_raw": float(ckpt.model.gen.alpha_raw.data),
        "beta": float(ckpt.model.gen.beta.data),
        "standardization": ckpt.standardization.to_dict(),
        "data": ckpt.data or {},
        "optimizer": ckpt.optimizer.to_dict() if ckpt.optimizer else None,
        "report": ckpt.report.to_dict(include_timing=False) if ckpt.report else None,
    }
    save_manifest(params_to_manifest(ckpt.model.parameters(), header), path)


def load_checkpoint(path) -> Checkpoint:
    manifest = read_manifest(path)
    header = manifest.get("header", {})
    try:
        config = ModelConfig(**header["model_config"])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: checkpoint header lacks a valid model_config") from exc
    model = init_model(config)
    load_into(model.parameters(), manifest)
    return Checkpoint(
        model,
        StandardizationParams.from_dict(header["standardization"]),
        AdamState.from_dict(header["optimizer"]) if header.get("optimizer") else None,
        TrainReport.from_dict(header["report"]) if header.get("report") else None,
        header.get("data") or {},
    )
