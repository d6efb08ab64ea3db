"""
Total objective.

    total = det + reid + (sra_obj + sra_id) + (mil_img + mil_box + mil_fea)

Every weight is 1. Components switched off by LossToggles are reported as
exact zeros so the metrics file keeps a fixed set of columns.
"""

import math
from dataclasses import dataclass, fields
from typing import Dict, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict
from torch import Tensor

LOSS_COMPONENTS = ("det", "reid", "sra_obj", "sra_id", "mil_img", "mil_box", "mil_fea")

Scalar = Union[float, Tensor]


class TrainingStepError(RuntimeError):
    """Raised when a loss component is non-finite; names the component and step."""

    def __init__(self, component: str, step: Optional[int] = None, value: float = float("nan")):
        self.component = component
        self.step = step
        self.value = value
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"loss component '{component}' is non-finite ({value}){where}")


class LossToggles(BaseModel):
    """Switches for the five auxiliary losses. det and reid are always on."""

    model_config = ConfigDict(extra="forbid")

    sra_obj: bool = True
    sra_id: bool = True
    mil_img: bool = True
    mil_box: bool = True
    mil_fea: bool = True

    @classmethod
    def ablation(cls, name: str) -> "LossToggles":
        try:
            enabled = ABLATION_PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown ablation preset '{name}', choose from {sorted(ABLATION_PRESETS)}")
        return cls(**{key: key in enabled for key in cls.model_fields})

    def enabled(self, component: str) -> bool:
        return getattr(self, component, True)


# one entry per row of the component study, from the det+reid baseline to the full objective
ABLATION_PRESETS: Dict[str, frozenset] = {
    "baseline": frozenset(),
    "obj": frozenset({"sra_obj"}),
    "id": frozenset({"sra_id"}),
    "sra": frozenset({"sra_obj", "sra_id"}),
    "img": frozenset({"mil_img"}),
    "box": frozenset({"mil_box"}),
    "fea": frozenset({"mil_fea"}),
    "mil": frozenset({"mil_img", "mil_box", "mil_fea"}),
    "full": frozenset({"sra_obj", "sra_id", "mil_img", "mil_box", "mil_fea"}),
}


@dataclass
class LossBundle:
    det: Scalar = 0.0
    reid: Scalar = 0.0
    sra_obj: Scalar = 0.0
    sra_id: Scalar = 0.0
    mil_img: Scalar = 0.0
    mil_box: Scalar = 0.0
    mil_fea: Scalar = 0.0
    total: Scalar = 0.0

    def as_floats(self) -> Dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


def _as_float(value: Scalar) -> float:
    return float(value.detach()) if isinstance(value, Tensor) else float(value)


def total_loss(
    components: Mapping[str, Scalar],
    toggles: Optional[LossToggles] = None,
    step: Optional[int] = None,
) -> LossBundle:
    """Validate and sum the seven components.

    Missing or disabled components count as 0. Raises TrainingStepError on
    the first non-finite component.
    """
    unknown = set(components) - set(LOSS_COMPONENTS)
    if unknown:
        raise KeyError(f"unknown loss components: {sorted(unknown)}")

    values = {}
    for name in LOSS_COMPONENTS:
        value = components.get(name, 0.0)
        if toggles is not None and not toggles.enabled(name):
            value = 0.0
        as_float = _as_float(value)
        if not math.isfinite(as_float):
            raise TrainingStepError(name, step, as_float)
        values[name] = value

    total = (
        values["det"]
        + values["reid"]
        + (values["sra_obj"] + values["sra_id"])
        + (values["mil_img"] + values["mil_box"] + values["mil_fea"])
    )
    if isinstance(total, Tensor) and total.dim() != 0:
        total = total.sum()
    return LossBundle(**values, total=total)
