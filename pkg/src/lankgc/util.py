"""Small shared helpers: hashing, key=value files, worker counts."""

from __future__ import annotations

import hashlib
import os

ARTIFACT_VERSION = "0.1.0"
THREADS_ENV = "LANKGC_THREADS"


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def write_kv(path, mapping):
    """Write a flat ``key = value`` text file with sorted keys."""
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(mapping):
            fh.write(f"{key} = {mapping[key]}\n")


def read_kv(path):
    """Parse a flat ``key = value`` text file; blank lines and # comments skipped."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def worker_count():
    """Worker cap for parallel sections: LANKGC_THREADS or the cpu count."""
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1
