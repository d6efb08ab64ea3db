"""Hash-based checks that frozen components stay bit-identical."""

import hashlib
import logging
from typing import Dict, Mapping

import torch
from torch import nn

logger = logging.getLogger(__name__)


class FrozenComponentError(RuntimeError):
    """Raised when a component that must stay frozen has changed."""
    pass


def state_hash(module: nn.Module) -> str:
    """sha256 over every parameter and buffer, in name order."""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode("utf-8"))
        if isinstance(tensor, torch.Tensor):
            data = tensor.detach().cpu().contiguous()
            digest.update(str(data.dtype).encode("utf-8"))
            digest.update(data.reshape(-1).view(torch.uint8).numpy().tobytes() if data.numel() else b"")
    return digest.hexdigest()


def audit_frozen(components: Mapping[str, nn.Module]) -> Dict[str, str]:
    return {name: state_hash(module) for name, module in components.items() if module is not None}


class FrozenAudit:
    def __init__(self, components: Mapping[str, nn.Module]):
        self.components = {k: v for k, v in components.items() if v is not None}
        self.baseline = audit_frozen(self.components)

    def check(self, step: int) -> None:
        current = audit_frozen(self.components)
        changed = sorted(k for k, v in current.items() if v != self.baseline[k])
        if changed:
            raise FrozenComponentError(f"frozen components changed by step {step}: {changed}")
        logger.debug(f"frozen audit passed at step {step}")
