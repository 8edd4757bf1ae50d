"""Neighborhood aggregation: from sampled neighbor facts to an embedding.

An entity is encoded, under a query relation, by combining the
relation-specific projections of its neighbors' input embeddings.  The
projection removes the component along the (unit) relation transform
vector:

    T_r(e) = e - (w_r . e) w_r

Aggregator kinds:

    mean          uniform weights over the real neighbors
    lstm          sequence model over a random permutation of neighbors
    lan           logic weights plus query-aware neural attention
    query-attn    the neural attention alone
    global-attn   the neural attention alone, with the query zeroed
    logic-only    the logic weights alone

The neural attention scores a neighbor by
``u_a . tanh(W_a [z_q ; T_r(e)])`` and normalizes with a masked softmax,
so real slots sum to one.  Logic weights come from the mined implication
table (see :mod:`lankgc.rules`).  For ``lan`` the two weight vectors are
summed, not renormalized.

Two implementations are kept deliberately: :func:`encode` walks one
entity at a time through the small readable ops, and
:func:`encode_batch` runs whole batches through block primitives.  The
test suite pins them to each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .kg import sample_neighbors
from .rules import logic_attention, logic_attention_batch

AGGREGATOR_KINDS = ("mean", "lstm", "lan", "query-attn", "global-attn", "logic-only")
_LOGIC_KINDS = ("lan", "logic-only")
_ATTN_KINDS = ("lan", "query-attn", "global-attn")


@dataclass
class AggregatorConfig:
    kind: str = "lan"
    neighbor_budget: int = 64
    logic_mode: str = "normalized"
    epsilon: float = 1e-3

    def __post_init__(self):
        if self.kind not in AGGREGATOR_KINDS:
            raise ValueError(f"unknown aggregator kind: {self.kind!r}")
        if self.neighbor_budget < 1:
            raise ValueError(f"neighbor budget must be >= 1, got {self.neighbor_budget}")
        if self.logic_mode not in ("raw", "normalized"):
            raise ValueError(f"unknown logic mode: {self.logic_mode!r}")
        if self.epsilon <= 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def needs_rules(self):
        return self.kind in _LOGIC_KINDS

    @property
    def uses_lstm(self):
        return self.kind == "lstm"


@dataclass
class EncodedEntity:
    """Result of encoding one entity: embedding, attention trace, flag.

    ``trace`` rows are ``(relation, entity, alpha_logic, alpha_nn,
    alpha_total)`` for each real neighbor slot; it stays empty for the
    mean and lstm aggregators, which have no attention to report.
    ``flagged`` marks an empty neighborhood (the embedding is zero).
    """

    embedding: np.ndarray
    trace: list = field(default_factory=list)
    flagged: bool = False


def transform(tape, e_vec, w_vec):
    """Project out the transform direction: ``e - (w . e) w``."""
    return ad.sub(tape, e_vec, ad.scale_by(tape, w_vec, ad.dot(tape, w_vec, e_vec)))


def transform_batch(tape, entries, transforms):
    """Row-wise :func:`transform` for ``(k, d)`` stacks."""
    proj = ad.row_dot(tape, entries, transforms)
    return ad.sub(tape, entries, ad.col_scale(tape, transforms, proj))


def nn_attention(tape, query_row, transformed, attn_proj, attn_score_vec):
    """Unnormalized attention scores of ``(k, d)`` transformed neighbors."""
    k = transformed.data.shape[0]
    q_rep = ad.repeat_rows(tape, ad.reshape(tape, query_row, (1, query_row.data.shape[0])), k)
    hidden = ad.tanh(tape, ad.matmul(tape, ad.concat(tape, q_rep, transformed), ad.transpose(tape, attn_proj)))
    return ad.matvec(tape, hidden, attn_score_vec)


def aggregate_mean(tape, transformed, mask):
    """Masked mean of the real neighbor rows; zero vector when empty."""
    return ad.mean_masked(tape, transformed, mask)


def _lstm_step(tape, h, c, x, leaves):
    hx = ad.concat(tape, h, x)
    gates = {}
    for g in ("f", "i", "c", "o"):
        pre = ad.add(tape, ad.matvec(tape, leaves[f"lstm_w_{g}"], hx), leaves[f"lstm_b_{g}"])
        gates[g] = ad.tanh(tape, pre) if g == "c" else ad.sigmoid(tape, pre)
    c_new = ad.add(tape, ad.mul(tape, gates["f"], c), ad.mul(tape, gates["i"], gates["c"]))
    h_new = ad.mul(tape, gates["o"], ad.tanh(tape, c_new))
    return h_new, c_new


def aggregate_lstm(tape, transformed, order, leaves, dim):
    """Run the neighbor rows named by ``order`` through an LSTM.

    ``order`` is the sequence of (valid) slot indices to consume; the
    final hidden state is the aggregate.  An empty order yields zeros.
    """
    h = tape.constant(np.zeros(dim))
    c = tape.constant(np.zeros(dim))
    for slot in order:
        x = ad.pick_row(tape, transformed, int(slot))
        h, c = _lstm_step(tape, h, c, x, leaves)
    return h


def encode_from_sample(store, table, cfg, query, sample, rng):
    """Encode one entity from an already-sampled neighborhood.

    Forward-only reference path: builds a private tape over constant
    leaves and reports the full attention trace.
    """
    tape = ad.Tape()
    dim = store["entity_emb"].shape[1]
    k = sample.mask.shape[0]
    n_valid = sample.n_valid
    if n_valid == 0:
        return EncodedEntity(np.zeros(dim), trace=[], flagged=True)

    entries = tape.constant(store["entity_emb"][sample.entities])
    transforms = tape.constant(store["transform_vec"][sample.relations])
    transformed = transform_batch(tape, entries, transforms)

    logic_w = None
    if cfg.needs_rules:
        if table is None:
            raise ValueError(f"aggregator {cfg.kind!r} needs a mined rule table")
        logic_w = logic_attention(
            table, sample.relations, sample.mask, query, mode=cfg.logic_mode, epsilon=cfg.epsilon
        )

    nn_w = None
    if cfg.kind in _ATTN_KINDS:
        if cfg.kind == "global-attn":
            q_row = tape.constant(np.zeros(dim))
        else:
            q_row = tape.constant(store["query_vec"][query])
        scores = nn_attention(
            tape, q_row, transformed, tape.constant(store["attn_proj"]), tape.constant(store["attn_score_vec"])
        )
        nn_w = ad.softmax_masked(tape, scores, sample.mask)

    if cfg.kind == "mean":
        out = aggregate_mean(tape, transformed, sample.mask)
    elif cfg.kind == "lstm":
        order = rng.permutation(n_valid)
        out = aggregate_lstm(tape, transformed, order, _constant_lstm_leaves(tape, store), dim)
    else:
        if cfg.kind == "logic-only":
            weights = tape.constant(logic_w)
        elif cfg.kind in ("query-attn", "global-attn"):
            weights = nn_w
        else:
            weights = ad.add(tape, nn_w, tape.constant(logic_w))
        out = ad.reshape(
            tape,
            ad.weighted_block_sum(tape, transformed, ad.reshape(tape, weights, (1, k))),
            (dim,),
        )

    trace = []
    if cfg.kind not in ("mean", "lstm"):
        lw = logic_w if logic_w is not None else np.zeros(k)
        nw = nn_w.data if nn_w is not None else np.zeros(k)
        for j in range(k):
            if not sample.mask[j]:
                continue
            trace.append(
                (int(sample.relations[j]), int(sample.entities[j]), float(lw[j]), float(nw[j]), float(lw[j] + nw[j]))
            )
    return EncodedEntity(out.data.copy(), trace=trace, flagged=False)


def _constant_lstm_leaves(tape, store):
    leaves = {}
    for g in ("f", "i", "c", "o"):
        for part in ("w", "b"):
            name = f"lstm_{part}_{g}"
            leaves[name] = tape.constant(store[name])
    return leaves


def encode(entity, query, kg, table, store, cfg, rng):
    """Sample the entity's neighborhood from ``kg`` and encode it."""
    sample = sample_neighbors(kg.neighborhood(entity), cfg.neighbor_budget, rng)
    return encode_from_sample(store, table, cfg, query, sample, rng)


def stack_samples(neighborhood_fn, ent_ids, budget, rng):
    """Sample neighborhoods for a batch of entities into (B, K) arrays.

    ``neighborhood_fn(e)`` returns the (k, 2) adjacency rows of ``e``.
    Trailing all-padding columns are trimmed, so K is at most the budget
    but no larger than the widest sampled neighborhood (and at least 1).
    """
    samples = [sample_neighbors(neighborhood_fn(int(e)), budget, rng) for e in ent_ids]
    width = max(1, max((s.n_valid for s in samples), default=1))
    relations = np.stack([s.relations[:width] for s in samples])
    entities = np.stack([s.entities[:width] for s in samples])
    mask = np.stack([s.mask[:width] for s in samples])
    return relations, entities, mask


def encode_batch(tape, leaves, relations, entities, mask, queries, cfg, dense_table=None, rng=None):
    """Encode a batch of entities; returns a ``(B, d)`` Value.

    ``relations``/``entities``/``mask`` are (B, K) sampled neighborhoods
    with real entries first (as produced by :func:`stack_samples`), and
    ``queries`` is the (B,) query relation per row.  Rows without any
    real neighbor come out as zero vectors.
    """
    relations = np.asarray(relations, dtype=np.int64)
    entities = np.asarray(entities, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    queries = np.asarray(queries, dtype=np.int64)
    bsz, k = relations.shape
    dim = leaves["entity_emb"].data.shape[1]

    entries = ad.take_rows(tape, leaves["entity_emb"], entities.reshape(-1))
    transforms = ad.take_rows(tape, leaves["transform_vec"], relations.reshape(-1))
    transformed = transform_batch(tape, entries, transforms)

    valid_row = mask.any(axis=1)

    if cfg.kind == "lstm":
        return _encode_batch_lstm(tape, leaves, transformed, mask, rng, bsz, k, dim)

    logic_w = None
    if cfg.needs_rules:
        if dense_table is None:
            raise ValueError(f"aggregator {cfg.kind!r} needs a mined rule table")
        logic_w = logic_attention_batch(
            dense_table, relations, mask, queries, mode=cfg.logic_mode, epsilon=cfg.epsilon
        )

    if cfg.kind == "mean":
        counts = np.maximum(mask.sum(axis=1), 1)
        weights = tape.constant(mask.astype(np.float64) / counts[:, None])
    elif cfg.kind == "logic-only":
        weights = tape.constant(logic_w)
    else:
        if cfg.kind == "global-attn":
            q_rows = tape.constant(np.zeros((bsz, dim)))
        else:
            q_rows = ad.take_rows(tape, leaves["query_vec"], queries)
        q_rep = ad.repeat_rows(tape, q_rows, k)
        hidden = ad.tanh(
            tape, ad.matmul(tape, ad.concat(tape, q_rep, transformed), ad.transpose(tape, leaves["attn_proj"]))
        )
        scores = ad.reshape(tape, ad.matvec(tape, hidden, leaves["attn_score_vec"]), (bsz, k))
        soft_mask = mask.copy()
        soft_mask[~valid_row, 0] = True
        alpha_nn = ad.softmax_masked(tape, scores, soft_mask)
        if not valid_row.all():
            alpha_nn = ad.mul(tape, alpha_nn, tape.constant(np.broadcast_to(valid_row[:, None], mask.shape).astype(np.float64).copy()))
        if cfg.kind == "lan":
            weights = ad.add(tape, alpha_nn, tape.constant(logic_w))
        else:
            weights = alpha_nn
    return ad.weighted_block_sum(tape, transformed, weights)


def _encode_batch_lstm(tape, leaves, transformed, mask, rng, bsz, k, dim):
    """Batched LSTM aggregation with per-row freezing after the last real slot.

    Each row consumes its real slots in a freshly permuted order; rows
    that have run out keep their hidden state unchanged, so the final
    state equals the single-entity LSTM over the same sequence.
    """
    if rng is None:
        raise ValueError("lstm aggregation needs an rng for the neighbor permutation")
    counts = mask.sum(axis=1)
    order = np.zeros((bsz, k), dtype=np.int64)
    for b in range(bsz):
        v = int(counts[b])
        if v:
            order[b, :v] = rng.permutation(v)
    h = tape.constant(np.zeros((bsz, dim)))
    c = tape.constant(np.zeros((bsz, dim)))
    t_max = int(counts.max()) if bsz else 0
    for t in range(t_max):
        idx = np.arange(bsz) * k + order[:, t]
        x = ad.take_rows(tape, transformed, idx)
        hx = ad.concat(tape, h, x)
        gates = {}
        for g in ("f", "i", "c", "o"):
            w_t = ad.transpose(tape, leaves[f"lstm_w_{g}"])
            bias = ad.repeat_rows(tape, ad.reshape(tape, leaves[f"lstm_b_{g}"], (1, dim)), bsz)
            pre = ad.add(tape, ad.matmul(tape, hx, w_t), bias)
            gates[g] = ad.tanh(tape, pre) if g == "c" else ad.sigmoid(tape, pre)
        c_new = ad.add(tape, ad.mul(tape, gates["f"], c), ad.mul(tape, gates["i"], gates["c"]))
        h_new = ad.mul(tape, gates["o"], ad.tanh(tape, c_new))
        live = (counts > t).astype(np.float64)
        keep = tape.constant(live)
        drop = tape.constant(1.0 - live)
        h = ad.add(tape, ad.col_scale(tape, h_new, keep), ad.col_scale(tape, h, drop))
        c = ad.add(tape, ad.col_scale(tape, c_new, keep), ad.col_scale(tape, c, drop))
    return h
