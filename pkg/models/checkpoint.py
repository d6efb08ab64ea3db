"""
Checkpoint archive.

One torch.save file holding the model weights, the backbone config, the
OIM lookup table, the frozen prompt bank, optimizer and scheduler state,
the step counter, RNG states and the training config.
"""

import logging
import random
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import torch

from datamodel.errors import ContractError
from models.config import BackboneConfig

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

REQUIRED_KEYS = ("version", "backbone_config", "model", "step")


def capture_rng() -> Dict[str, Any]:
    return {
        "python": random.getstate(),
        "numpy": np.random.get_state(),
        "torch": torch.get_rng_state(),
    }


def restore_rng(state: Dict[str, Any]) -> None:
    random.setstate(state["python"])
    np.random.set_state(state["numpy"])
    torch.set_rng_state(state["torch"])


def save_checkpoint(
    path: Union[str, Path],
    model: torch.nn.Module,
    backbone_config: BackboneConfig,
    step: int,
    lookup_table: Optional[torch.nn.Module] = None,
    prompt_bank: Optional[torch.nn.Module] = None,
    optimizer: Optional[torch.optim.Optimizer] = None,
    scheduler: Optional[Any] = None,
    config: Optional[Dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    archive = {
        "version": CHECKPOINT_VERSION,
        "backbone_config": backbone_config.model_dump(mode="json"),
        "model": model.state_dict(),
        "lookup_table": lookup_table.state_dict() if lookup_table is not None else None,
        "prompt_bank": prompt_bank.export() if prompt_bank is not None else None,
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "scheduler": scheduler.state_dict() if scheduler is not None else None,
        "step": step,
        "rng": capture_rng(),
        "config": config or {},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(archive, tmp)
    tmp.replace(path)
    logger.info(f"Saved checkpoint at step {step} to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    archive = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(archive, dict):
        raise ContractError(f"{path} is not a checkpoint archive")
    missing = [k for k in REQUIRED_KEYS if k not in archive]
    if missing:
        raise ContractError(f"{path} is missing checkpoint fields {missing}")
    if archive["version"] != CHECKPOINT_VERSION:
        raise ContractError(f"{path} has checkpoint version {archive['version']}, expected {CHECKPOINT_VERSION}")
    archive["backbone_config"] = BackboneConfig.model_validate(archive["backbone_config"])
    return archive
