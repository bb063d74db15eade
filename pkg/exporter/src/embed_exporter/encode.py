"""Batched sentence encoding with a deterministic offline fallback.

When an encoder checkpoint directory is supplied, inference runs through
sentence-transformers. Without one (the common offline case) each encoder
name maps to a deterministic hashed bag-of-words projection: tokens are
feature-hashed into a sparse vector and projected to 768 dimensions with a
Gaussian matrix seeded from the encoder name. The fallback preserves the
properties the pipeline relies on — identical texts encode identically,
and texts sharing vocabulary are closer in cosine than unrelated texts.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import EncoderError
from .fetch import tokenize

EMBED_DIM = 768
HASH_DIM = 4096


class HashedProjectionEncoder:
    """Deterministic token-hashing encoder, seeded by encoder name."""

    def __init__(self, name: str):
        self.name = name
        seed = int.from_bytes(
            hashlib.sha256(name.encode("utf-8")).digest()[:4], "big"
        )
        rng = np.random.default_rng(seed)
        self._proj = (
            rng.standard_normal((HASH_DIM, EMBED_DIM)) / np.sqrt(HASH_DIM)
        ).astype(np.float32)

    def encode(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), EMBED_DIM), dtype=np.float32)
        for i, text in enumerate(texts):
            for token in tokenize(text):
                digest = hashlib.sha256(token.encode("utf-8")).digest()
                bucket = int.from_bytes(digest[:4], "big") % HASH_DIM
                sign = 1.0 if digest[4] % 2 == 0 else -1.0
                out[i] += sign * self._proj[bucket]
            norm = float(np.linalg.norm(out[i]))
            if norm > 0:
                out[i] /= norm
        return out


class SentenceTransformerEncoder:
    """Wraps a local sentence-transformers checkpoint directory."""

    def __init__(self, checkpoint: Path):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:  # pragma: no cover - environment-specific
            raise EncoderError(
                "sentence-transformers is not installed; "
                "use the built-in hashed encoder instead"
            ) from exc
        self._model = SentenceTransformer(str(checkpoint))

    def encode(self, texts: list[str]) -> np.ndarray:
        vectors = self._model.encode(
            texts, convert_to_numpy=True, show_progress_bar=False
        ).astype(np.float32)
        if vectors.shape != (len(texts), EMBED_DIM):
            raise EncoderError(
                f"checkpoint produced shape {vectors.shape}, "
                f"expected (n, {EMBED_DIM})"
            )
        return vectors


def get_encoder(name: str, checkpoint: Path | None = None):
    if checkpoint is not None:
        checkpoint = Path(checkpoint)
        if not checkpoint.exists():
            raise EncoderError(f"encoder checkpoint not resolvable: {checkpoint}")
        return SentenceTransformerEncoder(checkpoint)
    return HashedProjectionEncoder(name)


def encode_texts(encoder, texts: list[str], batch_size: int) -> np.ndarray:
    """Batched inference; on MemoryError the batch is halved and retried once."""
    if not texts:
        return np.zeros((0, EMBED_DIM), dtype=np.float32)
    halved = False
    vectors = []
    start = 0
    while start < len(texts):
        batch = texts[start:start + batch_size]
        try:
            block = np.asarray(encoder.encode(batch), dtype=np.float32)
        except MemoryError:
            if halved or batch_size == 1:
                raise EncoderError(
                    f"encoder ran out of memory at batch size {batch_size}"
                ) from None
            batch_size = max(1, batch_size // 2)
            halved = True
            continue
        if block.shape != (len(batch), EMBED_DIM):
            raise EncoderError(
                f"encoder returned shape {block.shape}, "
                f"expected ({len(batch)}, {EMBED_DIM})"
            )
        if not np.isfinite(block).all():
            raise EncoderError("encoder produced non-finite values")
        vectors.append(block)
        start += len(batch)
    return np.vstack(vectors)


def write_embeddings_jsonl(path, ids: list[str], vectors: np.ndarray) -> None:
    if vectors.ndim != 2 or len(ids) != vectors.shape[0]:
        raise EncoderError("one embedding row per id required")
    with open(path, "w", encoding="utf-8") as fh:
        for pid, row in zip(ids, vectors):
            fh.write(
                json.dumps({"id": pid, "v": [float(x) for x in row]}) + "\n"
            )
