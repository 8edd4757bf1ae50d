"""Model parameters: allocation, tape hookup, checkpoint files.

All trainable state is a flat dict of named float64 arrays:

    entity_emb      (n, d)    input embeddings, one row per entity
    relation_emb    (R, d)    relation embeddings (R = 2m with inverses)
    transform_vec   (R, d)    unit projection vector per relation
    query_vec       (R, d)    query context rows for the neural attention
    attn_proj       (d, 2d)   attention projection matrix
    attn_score_vec  (d,)      attention scoring vector
    lstm_w_{f,i,c,o} (d, 2d)  gate weights (only with the lstm aggregator)
    lstm_b_{f,i,c,o} (d,)     gate biases

Checkpoints are a directory holding one raw little-endian float64 file
per parameter plus a ``manifest`` of ``key = value`` lines recording
shapes, the run configuration, and vocabulary checksums.
"""

from __future__ import annotations

import hashlib
import os

import numpy as np

LSTM_GATES = ("f", "i", "c", "o")


class ParamStore:
    """Named float64 arrays plus helpers to expose them on a tape."""

    def __init__(self, arrays):
        self.arrays = dict(arrays)

    def __getitem__(self, name):
        return self.arrays[name]

    def __contains__(self, name):
        return name in self.arrays

    def names(self):
        return sorted(self.arrays)

    def leaves(self, tape):
        """Wrap every array as a gradient-requiring leaf on ``tape``."""
        return {name: tape.leaf(self.arrays[name], requires_grad=True) for name in self.names()}

    def copy(self):
        return ParamStore({k: v.copy() for k, v in self.arrays.items()})

    def renormalize_transforms(self):
        """Rescale every transform row back to unit L2 norm, in place."""
        w = self.arrays["transform_vec"]
        norms = np.linalg.norm(w, axis=1, keepdims=True)
        np.divide(w, norms, out=w, where=norms > 0.0)


def collect_gradients(leaves):
    """Gradients keyed like the store; untouched parameters read as zero."""
    out = {}
    for name, leaf in leaves.items():
        out[name] = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
    return out


def init_params(n_entities, n_relations, dim, seed, with_lstm=False):
    """Allocate and initialize all parameters.

    Entries are uniform on ``[-1/sqrt(d), 1/sqrt(d)]``; transform rows
    are then renormalized to unit length.  ``n_relations`` is the full
    (augmented) relation count.
    """
    if dim < 1:
        raise ValueError(f"embedding dimension must be >= 1, got {dim}")
    rng = np.random.default_rng(seed)
    s = 1.0 / np.sqrt(dim)

    def u(*shape):
        return rng.uniform(-s, s, size=shape)

    arrays = {
        "entity_emb": u(n_entities, dim),
        "relation_emb": u(n_relations, dim),
        "transform_vec": u(n_relations, dim),
        "query_vec": u(n_relations, dim),
        "attn_proj": u(dim, 2 * dim),
        "attn_score_vec": u(dim),
    }
    if with_lstm:
        for g in LSTM_GATES:
            arrays[f"lstm_w_{g}"] = u(dim, 2 * dim)
            arrays[f"lstm_b_{g}"] = np.zeros(dim)
    store = ParamStore(arrays)
    store.renormalize_transforms()
    return store


def vocab_checksums(vocab):
    digest = hashlib.sha256(vocab.checksum_material()).hexdigest()
    return {"vocab_sha256": digest, "n_entities": str(vocab.n_entities), "n_relations": str(vocab.n_relations)}


def save_checkpoint(out_dir, store, meta):
    """Write one ``<name>.f64`` file per parameter plus a manifest."""
    os.makedirs(out_dir, exist_ok=True)
    lines = dict(meta)
    for name in store.names():
        arr = store.arrays[name]
        arr.astype("<f8").tofile(os.path.join(out_dir, f"{name}.f64"))
        lines[f"shape.{name}"] = "x".join(str(d) for d in arr.shape)
    with open(os.path.join(out_dir, "manifest"), "w", encoding="utf-8") as fh:
        for k in sorted(lines):
            fh.write(f"{k} = {lines[k]}\n")


def load_checkpoint(ckpt_dir):
    """Read a checkpoint directory back into (store, meta)."""
    manifest = os.path.join(ckpt_dir, "manifest")
    if not os.path.exists(manifest):
        raise FileNotFoundError(f"no manifest in checkpoint directory {ckpt_dir}")
    meta = {}
    with open(manifest, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    arrays = {}
    for key in list(meta):
        if not key.startswith("shape."):
            continue
        name = key[len("shape."):]
        shape = tuple(int(d) for d in meta[key].split("x"))
        path = os.path.join(ckpt_dir, f"{name}.f64")
        if not os.path.exists(path):
            raise FileNotFoundError(f"checkpoint parameter file missing: {path}")
        flat = np.fromfile(path, dtype="<f8")
        expect = int(np.prod(shape)) if shape else 1
        if flat.size != expect:
            raise ValueError(f"{path}: expected {expect} values, found {flat.size}")
        arrays[name] = flat.astype(np.float64).reshape(shape)
    if not arrays:
        raise ValueError(f"checkpoint at {ckpt_dir} declares no parameters")
    return ParamStore(arrays), meta
