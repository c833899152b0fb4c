"""Batch-encode catalog profiles, role prompts, and queries to a store file.

The output is JSON lines: a {"schema_version", "dim"} header, then one
{"key", "vector"} record per distinct text, keyed by the SHA-256 hex of the
UTF-8 text. The write is atomic (temp file + rename).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile

from .encoder import HASH_MODEL, load_encoder

SCHEMA_VERSION = 1


def text_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def collect_texts(catalog_path=None, templates_path=None, dataset_path=None):
    """Every text the configurator will look up, in first-seen order."""
    texts = []
    seen = set()

    def add(text):
        if text not in seen:
            seen.add(text)
            texts.append(text)

    if catalog_path:
        with open(catalog_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        for rec in doc["backbones"]:
            for field in ("perf_profile", "ptp_profile", "type_profile"):
                add(rec[field])
    if templates_path:
        with open(templates_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        for rec in doc["templates"]:
            add(rec["role_prompt"])
    if dataset_path:
        with open(dataset_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    add(json.loads(line)["text"])
    return texts


def _format_float(x: float) -> str:
    return repr(float(x))


def write_store(path, dim: int, records):
    """records: iterable of (key_hex, vector). Atomic replace on success."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(prefix=".embed-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"schema_version": SCHEMA_VERSION, "dim": dim},
                                separators=(",", ":")) + "\n")
            for key, vector in records:
                vals = ",".join(_format_float(v) for v in vector)
                fh.write('{"key":"%s","vector":[%s]}\n' % (key, vals))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def embed_all(catalog=None, templates=None, dataset=None, out="embeddings.jsonl",
              model=HASH_MODEL, batch_size=64):
    """Encode every distinct input text and write the store file.

    Returns (n_texts, dim). Deterministic for a fixed model version; duplicate
    texts collapse to a single record.
    """
    texts = collect_texts(catalog, templates, dataset)
    encoder = load_encoder(model)
    records = []
    for start in range(0, len(texts), batch_size):
        batch = texts[start:start + batch_size]
        for text, vector in zip(batch, encoder.encode(batch)):
            records.append((text_key(text), vector))
    write_store(out, encoder.dim, records)
    return len(records), encoder.dim


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="profile-embedder",
        description="encode backbone profiles, role prompts, and queries "
                    "into an embeddings file")
    parser.add_argument("--catalog", default=None, help="catalog JSON")
    parser.add_argument("--templates", default=None, help="role templates JSON")
    parser.add_argument("--dataset", default=None, help="query dataset JSONL")
    parser.add_argument("--out", required=True, help="output embeddings file")
    parser.add_argument("--model", default=HASH_MODEL,
                        help=f"'{HASH_MODEL}' (built-in, no weights) or a "
                             "sentence-transformers model name")
    parser.add_argument("--batch-size", type=int, default=64)
    args = parser.parse_args(argv)
    try:
        count, dim = embed_all(catalog=args.catalog, templates=args.templates,
                               dataset=args.dataset, out=args.out,
                               model=args.model, batch_size=args.batch_size)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {count} embeddings (dim {dim}, model {args.model}) to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
