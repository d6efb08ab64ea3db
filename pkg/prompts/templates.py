"""Prompt texts. Learnable slots are written as the placeholder word X."""

from enum import Enum
from typing import List, Optional

FOREGROUND_TEXT = "A photo of a vehicle"
BACKGROUND_TEXT = "Not a photo of a vehicle"
PLACEHOLDER = "X"
NUM_CONTEXT_TOKENS = 4


class PromptVariant(str, Enum):
    ATTRIBUTE = "attribute"
    PLAIN = "plain"


def render_template(
    variant: PromptVariant = PromptVariant.ATTRIBUTE,
    num_context: int = NUM_CONTEXT_TOKENS,
    color: Optional[str] = None,
    vtype: Optional[str] = None,
) -> str:
    """
    attribute: "A photo of a X X X X vehicle with X color and X type."
    plain:     "A photo of a X X X X vehicle."

    `color` / `vtype` replace the attribute placeholders with fixed words.
    """
    if num_context < 1:
        raise ValueError("at least one context token is required")
    context = " ".join([PLACEHOLDER] * num_context)
    if PromptVariant(variant) == PromptVariant.PLAIN:
        return f"A photo of a {context} vehicle."
    return f"A photo of a {context} vehicle with {color or PLACEHOLDER} color and {vtype or PLACEHOLDER} type."


def slot_names(variant: PromptVariant, num_context: int, fixed_attributes: bool = False) -> List[str]:
    """Learnable slots in template order."""
    names = [f"ctx{i}" for i in range(num_context)]
    if PromptVariant(variant) == PromptVariant.ATTRIBUTE and not fixed_attributes:
        names += ["color", "type"]
    return names
