"""
Online Instance Matching.

The lookup table keeps one unit-norm prototype per labeled identity and a
circular queue of embeddings from unlabeled vehicles. Embeddings are scored
against [prototypes ; queue] with a temperature, and labeled rows are trained
with cross-entropy towards their own prototype. The table update runs after
the loss is computed, on detached embeddings, so the loss itself is an
ordinary differentiable function of its inputs.
"""

from typing import Tuple

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from datamodel.errors import ContractError
from datamodel.records import UNLABELED


class IdentityLookupTable(nn.Module):
    """Per-identity prototypes [C, o] plus an unlabeled queue [Q, o].

    Prototypes start at zero and become unit-norm on their first update.
    """

    def __init__(
        self,
        num_identities: int,
        dim: int,
        queue_size: int = 500,
        momentum: float = 0.5,
        temperature: float = 1.0 / 30.0,
    ):
        super().__init__()
        if not 0.0 < momentum < 1.0:
            raise ContractError(f"momentum must lie in (0, 1), got {momentum}")
        if temperature <= 0:
            raise ContractError(f"temperature must be positive, got {temperature}")
        self.num_identities = num_identities
        self.dim = dim
        self.queue_size = queue_size
        self.momentum = momentum
        self.temperature = temperature
        self.register_buffer("prototypes", torch.zeros(num_identities, dim))
        self.register_buffer("unlabeled_queue", torch.zeros(queue_size, dim))
        self.register_buffer("queue_head", torch.zeros((), dtype=torch.long))

    def memory(self) -> Tensor:
        return torch.cat([self.prototypes, self.unlabeled_queue], dim=0)

    @torch.no_grad()
    def update(self, embeddings: Tensor, identities: Tensor) -> None:
        """Momentum-update labeled prototypes, push unlabeled rows into the queue.

        Rows are applied in order, so repeated identities in one batch
        compound their updates.
        """
        embeddings = embeddings.detach().to(self.prototypes.dtype)
        for x, y in zip(embeddings, identities.tolist()):
            if y == UNLABELED:
                if self.queue_size == 0:
                    continue
                head = int(self.queue_head)
                self.unlabeled_queue[head] = x
                self.queue_head.fill_((head + 1) % self.queue_size)
            else:
                row = self.momentum * self.prototypes[y - 1] + (1.0 - self.momentum) * x
                self.prototypes[y - 1] = row / row.norm().clamp(min=1e-12)


def oim_loss(
    embeddings: Tensor,
    identities: Tensor,
    table: IdentityLookupTable,
    update: bool = True,
    reduction: str = "mean",
) -> Tuple[Tensor, IdentityLookupTable]:
    """Cross-entropy of temperature-scaled similarities against the table.

    Args:
        embeddings: [n, o] unit-norm embeddings.
        identities: [n] labels in 1..C, or UNLABELED (0).
        table: lookup table, updated in place when `update` is set.
        reduction: 'mean' over labeled rows or 'sum'.

    Returns the loss and the (same, updated) table.
    """
    if embeddings.dim() != 2 or embeddings.shape[1] != table.dim:
        raise ContractError(f"embeddings {tuple(embeddings.shape)} do not match table dim {table.dim}")
    if identities.shape != (embeddings.shape[0],):
        raise ContractError("one identity label per embedding is required")
    if identities.numel() and (int(identities.max()) > table.num_identities or int(identities.min()) < 0):
        raise ContractError(
            f"identity labels must lie in 0..{table.num_identities}, "
            f"got [{int(identities.min())}, {int(identities.max())}]"
        )

    labeled = identities != UNLABELED
    if bool(labeled.any()):
        memory = table.memory().to(embeddings.dtype)
        logits = embeddings[labeled] @ memory.t() / table.temperature
        loss = F.cross_entropy(logits, identities[labeled] - 1, reduction=reduction)
    else:
        loss = embeddings.sum() * 0.0

    if update:
        table.update(embeddings, identities)
    return loss, table
