"""Text embeddings: precomputed-store lookup with a hash-based fallback encoder.

The store file is JSON-lines: a header record {"schema_version", "dim"}
followed by {"key", "vector"} records, where key is the SHA-256 hex of the
UTF-8 text. The same schema is produced by the offline profile-embedder
tool, so vectors computed elsewhere drop in transparently.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmbeddingError

SCHEMA_VERSION = 1
FALLBACK_DIM = 64

PROVENANCE_PRECOMPUTED = "precomputed"
PROVENANCE_FALLBACK = "fallback"


def text_key(text: str) -> str:
    """Stable cross-language join key for a text."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class EmbeddingStore:
    dim: int = FALLBACK_DIM
    vectors: dict[str, np.ndarray] = field(default_factory=dict)
    provenance: str = PROVENANCE_FALLBACK

    def add(self, key: str, vector):
        arr = np.asarray(vector, dtype=np.float64)
        if arr.shape != (self.dim,):
            raise EmbeddingError(f"vector for {key} has dim {arr.shape}, store dim {self.dim}")
        self.vectors[key] = arr

    def get(self, key: str):
        return self.vectors.get(key)


def hash_embed(text: str, dim: int = FALLBACK_DIM) -> np.ndarray:
    """Token 3-gram feature hashing into `dim` signed buckets, L2-normalized.

    The token stream is lowercased, whitespace-split and padded with <s>/</s>
    boundary markers so any non-empty text yields at least one trigram. Empty
    text maps to the zero vector. Buckets and signs come from SHA-256, so the
    result is identical across runs and platforms.
    """
    v = np.zeros(dim, dtype=np.float64)
    tokens = text.lower().split()
    if not tokens:
        return v
    padded = ["<s>"] + tokens + ["</s>"]
    for i in range(len(padded) - 2):
        gram = " ".join(padded[i : i + 3])
        digest = hashlib.sha256(gram.encode("utf-8")).digest()
        bucket = int.from_bytes(digest[:8], "big") % dim
        sign = 1.0 if digest[8] % 2 == 0 else -1.0
        v[bucket] += sign
    norm = math.sqrt(float(np.dot(v, v)))
    if norm > 0:
        v /= norm
    return v


def encode_text(text: str, store: EmbeddingStore | None = None) -> np.ndarray:
    """Stored vector when the text's key is present, else the hash fallback."""
    if store is not None:
        hit = store.get(text_key(text))
        if hit is not None:
            return hit
    dim = store.dim if store is not None else FALLBACK_DIM
    return hash_embed(text, dim)


def profile_embeddings(profile, store: EmbeddingStore | None = None):
    """(e_perf, e_ptp, e_type) for one backbone's three textual profiles."""
    return (
        encode_text(profile.perf_profile, store),
        encode_text(profile.ptp_profile, store),
        encode_text(profile.type_profile, store),
    )


def cosine(a, b) -> float:
    """Cosine similarity; exact 1.0 for elementwise-identical vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dab = float(np.dot(a, b))
    daa = float(np.dot(a, a))
    dbb = float(np.dot(b, b))
    if daa == 0.0 or dbb == 0.0:
        return 0.0
    return math.copysign(math.sqrt((dab * dab) / (daa * dbb)), dab)


def _format_float(x: float) -> str:
    # repr gives the shortest round-trip form; bit-exact on reload
    return repr(float(x))


def _record_line(key: str, vector: np.ndarray) -> str:
    vals = ",".join(_format_float(v) for v in vector)
    return '{"key":"%s","vector":[%s]}' % (key, vals)


def save_store(store: EmbeddingStore, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema_version": SCHEMA_VERSION, "dim": store.dim},
                            separators=(",", ":")) + "\n")
        for key in store.vectors:
            fh.write(_record_line(key, store.vectors[key]) + "\n")


def load_store(path, provenance: str = PROVENANCE_PRECOMPUTED) -> EmbeddingStore:
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise EmbeddingError(f"bad embeddings header in {path}: {exc}") from exc
        if "dim" not in header or "schema_version" not in header:
            raise EmbeddingError(f"embeddings header missing fields in {path}")
        if header["schema_version"] != SCHEMA_VERSION:
            raise EmbeddingError(f"unsupported embeddings schema {header['schema_version']}")
        store = EmbeddingStore(dim=int(header["dim"]), provenance=provenance)
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            vec = np.asarray(rec["vector"], dtype=np.float64)
            if vec.shape != (store.dim,):
                raise EmbeddingError(
                    f"{path}:{lineno}: vector dim {vec.shape[0]} != store dim {store.dim}")
            store.vectors[rec["key"]] = vec
    return store
