from dataclasses import dataclass

import torch
from torch import Tensor

from models.contracts import TextEncoder
from prompts.templates import BACKGROUND_TEXT, FOREGROUND_TEXT


class PromptInitError(RuntimeError):
    """Raised when prompts cannot be encoded."""
    pass


@dataclass(frozen=True)
class ObjectPrompts:
    foreground_text: str
    background_text: str
    t_fore: Tensor
    t_back: Tensor


def build_object_prompts(encoder: TextEncoder) -> ObjectPrompts:
    """Encode the fixed foreground / background prompts with a frozen encoder."""
    try:
        with torch.no_grad():
            encoded = encoder.encode([FOREGROUND_TEXT, BACKGROUND_TEXT])
    except Exception as e:
        raise PromptInitError(f"text encoder failed on object prompts: {e}") from e
    if encoded.dim() != 2 or encoded.shape[0] != 2:
        raise PromptInitError(f"text encoder returned {tuple(encoded.shape)} for two prompts")
    return ObjectPrompts(FOREGROUND_TEXT, BACKGROUND_TEXT, encoded[0].detach(), encoded[1].detach())
