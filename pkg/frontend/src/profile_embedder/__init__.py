"""Offline embedder writing the store file the configurator loads."""

__version__ = "0.1.0"

from .cli import collect_texts, embed_all, text_key, write_store
from .encoder import HASH_MODEL, hash_encode, load_encoder

__all__ = [
    "HASH_MODEL",
    "collect_texts",
    "embed_all",
    "hash_encode",
    "load_encoder",
    "text_key",
    "write_store",
    "__version__",
]
