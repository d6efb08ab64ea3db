from prompts.bank import IdentityPromptBank, encode_bank, load_bank, save_bank
from prompts.objects import ObjectPrompts, PromptInitError, build_object_prompts
from prompts.templates import (
    BACKGROUND_TEXT,
    FOREGROUND_TEXT,
    NUM_CONTEXT_TOKENS,
    PromptVariant,
    render_template,
    slot_names,
)
from prompts.token_learning import PromptConfig, contrastive_loss, learn_tokens, pretrain_id_tokens

__all__ = [
    "BACKGROUND_TEXT",
    "FOREGROUND_TEXT",
    "IdentityPromptBank",
    "NUM_CONTEXT_TOKENS",
    "ObjectPrompts",
    "PromptConfig",
    "PromptInitError",
    "PromptVariant",
    "build_object_prompts",
    "contrastive_loss",
    "encode_bank",
    "learn_tokens",
    "load_bank",
    "pretrain_id_tokens",
    "render_template",
    "save_bank",
    "slot_names",
]
