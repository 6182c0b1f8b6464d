"""Small shared helpers: canonical hashing and output headers."""

import hashlib
import json

from . import __version__


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def config_hash(obj):
    """Short stable digest of a config mapping, for output manifests."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:12]


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_line(cfg_hash, seed):
    """One-line provenance stamp embedded in every CLI output file."""
    return f"tool=bgmhan {__version__} config={cfg_hash} seed={seed}"
