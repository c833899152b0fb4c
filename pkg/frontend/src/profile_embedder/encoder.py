"""Text encoders behind a single encode(texts) -> list[vector] interface.

The built-in "hash64" model needs no weights: token trigrams feature-hashed
into 64 signed buckets and L2-normalized, identical across runs and
platforms. Any other model name is handed to sentence-transformers, and the
output dimension becomes that model's native dimension.
"""

from __future__ import annotations

import hashlib
import math

HASH_MODEL = "hash64"
HASH_DIM = 64


def hash_encode(text: str, dim: int = HASH_DIM) -> list[float]:
    vec = [0.0] * dim
    tokens = text.lower().split()
    if not tokens:
        return vec
    padded = ["<s>"] + tokens + ["</s>"]
    for i in range(len(padded) - 2):
        digest = hashlib.sha256(" ".join(padded[i:i + 3]).encode("utf-8")).digest()
        bucket = int.from_bytes(digest[:8], "big") % dim
        vec[bucket] += 1.0 if digest[8] % 2 == 0 else -1.0
    norm = math.sqrt(sum(v * v for v in vec))
    if norm > 0:
        vec = [v / norm for v in vec]
    return vec


class HashEncoder:
    name = HASH_MODEL
    dim = HASH_DIM

    def encode(self, texts):
        return [hash_encode(t, self.dim) for t in texts]


class SentenceTransformerEncoder:
    """Wraps a pretrained sentence encoder; vectors are cast to float64."""

    def __init__(self, model_name: str):
        from sentence_transformers import SentenceTransformer

        self.name = model_name
        self.model = SentenceTransformer(model_name)
        self.dim = int(self.model.get_sentence_embedding_dimension())

    def encode(self, texts):
        if not texts:
            return []
        vectors = self.model.encode(list(texts), convert_to_numpy=True,
                                    show_progress_bar=False)
        return [[float(x) for x in row] for row in vectors.astype("float64")]


def load_encoder(model_name: str):
    if model_name == HASH_MODEL:
        return HashEncoder()
    return SentenceTransformerEncoder(model_name)
