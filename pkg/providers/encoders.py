"""
Frozen text and image encoders.

The Toy* encoders are small, deterministically seeded towers that run
offline; the OpenClip* adapters wrap a pretrained open_clip model. Both
pairs satisfy models.contracts.TextEncoder / ImageEncoder, so prompt
learning and the alignment losses never know which one they got.
"""

import logging
import re
import zlib
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from tenacity import retry, stop_after_attempt, wait_exponential
from torch import Tensor, nn

logger = logging.getLogger(__name__)

PAD_ID, SOT_ID, EOT_ID = 0, 1, 2
_FIRST_WORD_ID = 3
_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")

CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


class EncoderInitError(RuntimeError):
    """Raised when an encoder cannot be built or loaded."""
    pass


def _freeze(module: nn.Module) -> None:
    for p in module.parameters():
        p.requires_grad_(False)
    module.eval()


class ToyTextEncoder(nn.Module):
    """CLIP-shaped text tower with a hashed word vocabulary."""

    def __init__(
        self,
        token_dim: int = 64,
        text_dim: int = 64,
        context_length: int = 32,
        vocab_size: int = 4096,
        layers: int = 2,
        heads: int = 4,
        seed: int = 0,
        logit_scale: float = 100.0,
    ):
        super().__init__()
        self.token_dim = token_dim
        self.text_dim = text_dim
        self.context_length = context_length
        self.vocab_size = vocab_size
        self.logit_scale = logit_scale
        self.seed = seed

        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.embedding = nn.Embedding(vocab_size, token_dim)
            nn.init.normal_(self.embedding.weight, std=0.02)
            self.positional_embedding = nn.Parameter(torch.randn(context_length, token_dim) * 0.01)
            layer = nn.TransformerEncoderLayer(
                token_dim, heads, dim_feedforward=4 * token_dim, dropout=0.0, batch_first=True
            )
            self.transformer = nn.TransformerEncoder(layer, layers, enable_nested_tensor=False)
            self.ln_final = nn.LayerNorm(token_dim)
            self.text_projection = nn.Parameter(torch.randn(token_dim, text_dim) * token_dim ** -0.5)
        self.register_buffer(
            "attn_mask", nn.Transformer.generate_square_subsequent_mask(context_length), persistent=False
        )
        _freeze(self)

    def _word_id(self, word: str) -> int:
        return _FIRST_WORD_ID + zlib.crc32(word.encode("utf-8")) % (self.vocab_size - _FIRST_WORD_ID)

    def tokenize(self, texts: Sequence[str]) -> Tensor:
        ids = torch.full((len(texts), self.context_length), PAD_ID, dtype=torch.long)
        for row, text in enumerate(texts):
            words = [self._word_id(w) for w in _TOKEN_RE.findall(text.lower())]
            seq = [SOT_ID] + words[: self.context_length - 2] + [EOT_ID]
            ids[row, : len(seq)] = torch.tensor(seq)
        return ids

    def placeholder_id(self) -> int:
        return self._word_id("x")

    def token_embedding(self, token_ids: Tensor) -> Tensor:
        return self.embedding(token_ids.to(self.embedding.weight.device))

    def encode_embeddings(self, embeddings: Tensor, token_ids: Tensor) -> Tensor:
        x = embeddings + self.positional_embedding.to(embeddings.dtype)
        x = self.transformer(x, mask=self.attn_mask.to(x.dtype))
        x = self.ln_final(x)
        eot = (token_ids == EOT_ID).int().argmax(dim=-1).to(x.device)
        return x[torch.arange(x.shape[0], device=x.device), eot] @ self.text_projection.to(x.dtype)

    @torch.no_grad()
    def encode(self, texts: List[str]) -> Tensor:
        ids = self.tokenize(texts)
        return self.encode_embeddings(self.token_embedding(ids), ids)


class ToyImageEncoder(nn.Module):
    """Small frozen conv tower mapping crops into the toy text space."""

    def __init__(self, text_dim: int = 64, input_size: Tuple[int, int] = (32, 32), seed: int = 1):
        super().__init__()
        self.text_dim = text_dim
        self.input_size = tuple(input_size)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.net = nn.Sequential(
                nn.Conv2d(3, 32, 3, stride=2, padding=1),
                nn.ReLU(inplace=True),
                nn.Conv2d(32, 64, 3, stride=2, padding=1),
                nn.ReLU(inplace=True),
                nn.AdaptiveAvgPool2d(1),
                nn.Flatten(),
                nn.Linear(64, text_dim),
            )
        self.register_buffer("pixel_mean", torch.tensor(CLIP_MEAN).view(-1, 1, 1))
        self.register_buffer("pixel_std", torch.tensor(CLIP_STD).view(-1, 1, 1))
        _freeze(self)

    def encode_image(self, images: Tensor) -> Tensor:
        if tuple(images.shape[-2:]) != self.input_size:
            images = F.interpolate(images, size=self.input_size, mode="bilinear", align_corners=False)
        return self.net((images - self.pixel_mean) / self.pixel_std)


def _import_open_clip():
    try:
        import open_clip
    except ImportError as e:
        raise EncoderInitError("open_clip is not installed; pip install open_clip_torch") from e
    return open_clip


@retry(stop=stop_after_attempt(3), wait=wait_exponential(multiplier=1, min=2, max=16), reraise=True)
def load_open_clip(model_name: str = "ViT-B-16", pretrained: str = "openai"):
    """Create (and download on first use) an open_clip model; returns (model, tokenizer)."""
    open_clip = _import_open_clip()
    logger.info(f"Loading open_clip {model_name} ({pretrained})")
    model, _, _ = open_clip.create_model_and_transforms(model_name, pretrained=pretrained)
    _freeze(model)
    return model, open_clip.get_tokenizer(model_name)


class OpenClipTextEncoder(nn.Module):
    """CLIP text tower with access to the word-embedding stage for prompt tokens."""

    def __init__(self, model: Optional[nn.Module] = None, tokenizer=None, model_name: str = "ViT-B-16", pretrained: str = "openai"):
        super().__init__()
        if model is None:
            try:
                model, tokenizer = load_open_clip(model_name, pretrained)
            except Exception as e:
                raise EncoderInitError(f"could not load open_clip {model_name}/{pretrained}: {e}") from e
        self.model = model
        self.tokenizer = tokenizer
        self.token_dim = model.token_embedding.weight.shape[1]
        self.text_dim = model.text_projection.shape[1]
        self.logit_scale = float(model.logit_scale.exp())
        _freeze(self)

    def tokenize(self, texts: Sequence[str]) -> Tensor:
        return self.tokenizer(list(texts))

    def placeholder_id(self) -> int:
        return int(self.tokenize(["X"])[0, 1])

    def token_embedding(self, token_ids: Tensor) -> Tensor:
        return self.model.token_embedding(token_ids.to(self.model.token_embedding.weight.device))

    def encode_embeddings(self, embeddings: Tensor, token_ids: Tensor) -> Tensor:
        x = embeddings + self.model.positional_embedding.to(embeddings.dtype)
        batch_first = getattr(self.model.transformer, "batch_first", True)
        if not batch_first:
            x = x.permute(1, 0, 2)
        x = self.model.transformer(x, attn_mask=self.model.attn_mask)
        if not batch_first:
            x = x.permute(1, 0, 2)
        x = self.model.ln_final(x)
        # the end-of-text token has the largest id in CLIP's vocabulary
        eot = token_ids.argmax(dim=-1).to(x.device)
        return x[torch.arange(x.shape[0], device=x.device), eot] @ self.model.text_projection

    @torch.no_grad()
    def encode(self, texts: List[str]) -> Tensor:
        ids = self.tokenize(texts)
        return self.encode_embeddings(self.token_embedding(ids), ids)


class OpenClipImageEncoder(nn.Module):
    def __init__(self, model: nn.Module):
        super().__init__()
        self.model = model
        self.text_dim = model.text_projection.shape[1]
        size = getattr(model.visual, "image_size", 224)
        self.input_size = tuple(size) if isinstance(size, (tuple, list)) else (size, size)
        self.register_buffer("pixel_mean", torch.tensor(CLIP_MEAN).view(-1, 1, 1))
        self.register_buffer("pixel_std", torch.tensor(CLIP_STD).view(-1, 1, 1))
        _freeze(self)

    def encode_image(self, images: Tensor) -> Tensor:
        images = F.interpolate(images, size=self.input_size, mode="bicubic", align_corners=False)
        return self.model.encode_image((images - self.pixel_mean) / self.pixel_std)


def build_encoders(kind: str = "toy", model_name: str = "ViT-B-16", pretrained: str = "openai", text_dim: int = 64, token_dim: int = 64, seed: int = 0):
    """Return a (text_encoder, image_encoder) pair of the requested kind."""
    if kind == "toy":
        return (
            ToyTextEncoder(token_dim=token_dim, text_dim=text_dim, seed=seed),
            ToyImageEncoder(text_dim=text_dim, seed=seed + 1),
        )
    if kind == "open_clip":
        try:
            model, tokenizer = load_open_clip(model_name, pretrained)
        except Exception as e:
            raise EncoderInitError(f"could not load open_clip {model_name}/{pretrained}: {e}") from e
        return OpenClipTextEncoder(model, tokenizer), OpenClipImageEncoder(model)
    raise EncoderInitError(f"unknown encoder kind '{kind}'")
