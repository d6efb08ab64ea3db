"""Interfaces the search network and prompt learning consume from outside."""

from typing import List, Protocol, Sequence, runtime_checkable

from torch import Tensor


@runtime_checkable
class TeacherEmbedder(Protocol):
    """Frozen crop embedder: [m, 3, H, W] crops -> [m, o] vectors."""

    embedding_dim: int

    @property
    def frozen(self) -> bool: ...

    def embed(self, crops: Tensor) -> Tensor: ...


@runtime_checkable
class TextEncoder(Protocol):
    """Frozen text tower.

    `tokenize` produces fixed-length id sequences, `token_embedding` maps
    ids to word vectors and `encode_embeddings` runs the transformer over
    (possibly edited) word vectors, reading the end-of-text position.
    """

    token_dim: int
    text_dim: int
    logit_scale: float

    def tokenize(self, texts: Sequence[str]) -> Tensor: ...

    def token_embedding(self, token_ids: Tensor) -> Tensor: ...

    def encode_embeddings(self, embeddings: Tensor, token_ids: Tensor) -> Tensor: ...

    def encode(self, texts: List[str]) -> Tensor: ...

    def placeholder_id(self) -> int: ...


@runtime_checkable
class ImageEncoder(Protocol):
    """Frozen image tower whose output lives in the text embedding space."""

    text_dim: int
    input_size: tuple

    def encode_image(self, images: Tensor) -> Tensor: ...
