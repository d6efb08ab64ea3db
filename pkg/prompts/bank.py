"""
Per-identity learnable prompt tokens.

Every identity c owns M context vectors plus (attribute variant) a color
and a type vector. They are spliced into the word embeddings of the
template at the placeholder positions, and the frozen text encoder turns
each row into the identity's text embedding t_c.
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import torch
from torch import Tensor, nn

from datamodel.errors import ContractError
from models.contracts import TextEncoder
from prompts.templates import NUM_CONTEXT_TOKENS, PromptVariant, render_template

logger = logging.getLogger(__name__)

TOKEN_INIT_STD = 0.02


class IdentityPromptBank(nn.Module):
    def __init__(
        self,
        num_identities: int,
        text_encoder: TextEncoder,
        num_context: int = NUM_CONTEXT_TOKENS,
        variant: PromptVariant = PromptVariant.ATTRIBUTE,
        attribute_words: Optional[Dict[int, Tuple[str, str]]] = None,
        seed: int = 0,
    ):
        super().__init__()
        if num_identities < 1:
            raise ContractError("a prompt bank needs at least one identity")
        self.num_identities = num_identities
        self.num_context = num_context
        self.variant = PromptVariant(variant)
        self.token_dim = text_encoder.token_dim
        self.text_dim = text_encoder.text_dim
        words = {c: w for c, w in (attribute_words or {}).items() if 1 <= c <= num_identities}
        attribute = self.variant == PromptVariant.ATTRIBUTE
        self.fixed_attributes = attribute and len(words) == num_identities

        texts = []
        for identity in range(1, num_identities + 1):
            color, vtype = words.get(identity, (None, None))
            texts.append(render_template(self.variant, num_context, color, vtype))
        token_ids = text_encoder.tokenize(texts)

        placeholder = text_encoder.placeholder_id()
        slots = [(row == placeholder).nonzero().flatten().tolist() for row in token_ids]
        # identities with fixed words have only the context placeholders left
        learned = [attribute and identity not in words for identity in range(1, num_identities + 1)]
        for identity, positions in enumerate(slots, start=1):
            expected = num_context + (2 if learned[identity - 1] else 0)
            if len(positions) != expected:
                raise ContractError(
                    f"template for identity {identity} has {len(positions)} placeholder tokens, expected {expected}"
                )
        self.context_positions = slots[0][:num_context]

        self.register_buffer("token_ids", token_ids)
        with torch.no_grad():
            self.register_buffer("base_embeddings", text_encoder.token_embedding(token_ids).detach().clone())
        self.register_buffer("encoded", torch.zeros(num_identities, self.text_dim))
        self.register_buffer("learned_attribute_rows", torch.tensor(learned, dtype=torch.bool))

        generator = torch.Generator().manual_seed(seed)
        self.context_tokens = nn.Parameter(
            torch.randn(num_identities, num_context, self.token_dim, generator=generator) * TOKEN_INIT_STD
        )
        if any(learned):
            # rows with fixed words never read these
            self.color_token = nn.Parameter(torch.randn(num_identities, self.token_dim, generator=generator) * TOKEN_INIT_STD)
            self.type_token = nn.Parameter(torch.randn(num_identities, self.token_dim, generator=generator) * TOKEN_INIT_STD)
            self.attribute_positions = slots[learned.index(True)][num_context : num_context + 2]
        else:
            self.color_token = None
            self.type_token = None
            self.attribute_positions = []

    def prompt_embeddings(self, rows: Optional[Tensor] = None) -> Tensor:
        """Template word embeddings with the learnable tokens spliced in: [k, L, token_dim]."""
        if rows is None:
            rows = torch.arange(self.num_identities, device=self.context_tokens.device)
        emb = self.base_embeddings[rows].clone().to(self.context_tokens.dtype)
        emb[:, self.context_positions, :] = self.context_tokens[rows]
        if self.color_token is not None:
            learned = self.learned_attribute_rows[rows]
            picked = rows[learned]
            emb[learned, self.attribute_positions[0], :] = self.color_token[picked]
            emb[learned, self.attribute_positions[1], :] = self.type_token[picked]
        return emb

    def forward(self, text_encoder: TextEncoder, identities: Optional[Tensor] = None) -> Tensor:
        """Text embeddings for identities (1-based labels); all identities when None."""
        rows = None if identities is None else identities.long() - 1
        if rows is not None and rows.numel() and (int(rows.min()) < 0 or int(rows.max()) >= self.num_identities):
            raise ContractError(f"identities must lie in 1..{self.num_identities}")
        emb = self.prompt_embeddings(rows)
        ids = self.token_ids if rows is None else self.token_ids[rows]
        return text_encoder.encode_embeddings(emb, ids)

    def freeze(self) -> "IdentityPromptBank":
        for p in self.parameters():
            p.requires_grad_(False)
        return self

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())

    def export(self) -> dict:
        return {
            "C": self.num_identities,
            "M": self.num_context,
            "token_dim": self.token_dim,
            "variant": self.variant.value,
            "fixed_attributes": self.fixed_attributes,
            "state": self.state_dict(),
        }

    @classmethod
    def from_export(
        cls,
        exported: dict,
        text_encoder: TextEncoder,
        attribute_words: Optional[Dict[int, Tuple[str, str]]] = None,
    ) -> "IdentityPromptBank":
        if exported["token_dim"] != text_encoder.token_dim:
            raise ContractError(
                f"bank was learned with token_dim {exported['token_dim']}, encoder has {text_encoder.token_dim}"
            )
        bank = cls(
            exported["C"],
            text_encoder,
            num_context=exported["M"],
            variant=exported.get("variant", PromptVariant.ATTRIBUTE),
            attribute_words=attribute_words,
        )
        bank.load_state_dict(exported["state"])
        return bank.freeze()


@torch.no_grad()
def encode_bank(bank: IdentityPromptBank, text_encoder: TextEncoder) -> Tensor:
    """Encode every identity's prompt and store the result in `bank.encoded`: [C, text_dim]."""
    encoded = bank(text_encoder).detach()
    bank.encoded.copy_(encoded.to(bank.encoded.dtype))
    return bank.encoded


def save_bank(bank: IdentityPromptBank, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(bank.export(), path)
    return path


def load_bank(
    path: Union[str, Path],
    text_encoder: TextEncoder,
    attribute_words: Optional[Dict[int, Tuple[str, str]]] = None,
) -> IdentityPromptBank:
    return IdentityPromptBank.from_export(torch.load(Path(path), map_location="cpu", weights_only=False), text_encoder, attribute_words)
