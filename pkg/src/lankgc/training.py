"""Margin-ranking training over the augmented training graph.

Every positive triplet is paired with negatives obtained by corrupting
one endpoint (subject or object, a fair coin per negative) with a
uniformly random entity, resampled while the corrupted triplet is a
known training fact.  The loss per pair is a hinge on the score gap,

    [margin - phi(positive) + phi(negative)]_+

applied to the output-embedding scores and, when the subtask switch is
on, also to the raw input-embedding scores (same relation embeddings,
same margin).  Batches are averaged; attention parameters can carry an
L2 penalty.  After every optimizer step the relation transform vectors
are renormalized to unit length.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .context import BundleContext
from .decoder import check_scorer, score_batch
from .encoder import AggregatorConfig, encode_batch, stack_samples
from .evaluation import link_prediction
from .params import collect_gradients, init_params, save_checkpoint, vocab_checksums
from .rules import mine_confidence
from .util import ARTIFACT_VERSION

_ATTN_PARAM_NAMES = ("attn_proj", "attn_score_vec", "query_vec")


class TrainError(RuntimeError):
    """Training could not proceed (bad inputs or diverged numerics)."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    margin: float = 1.0
    dim: int = 100
    neighbor_budget: int = 64
    negatives_per_positive: int = 1
    l2_rate: float = 0.0
    epochs: int = 100
    batch_size: int = 256
    optimizer: str = "adam"
    seed: int = 0
    subtask_enabled: bool = True
    eval_every: int = 0
    patience: int = 10
    checkpoint_every: int = 0
    valid_max_queries: int = 500

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.margin <= 0.0:
            raise ValueError(f"margin must be > 0, got {self.margin}")
        if self.l2_rate < 0.0:
            raise ValueError(f"l2 rate must be >= 0, got {self.l2_rate}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.neighbor_budget < 1:
            raise ValueError(f"neighbor budget must be >= 1, got {self.neighbor_budget}")
        if self.negatives_per_positive < 1:
            raise ValueError(f"negatives per positive must be >= 1, got {self.negatives_per_positive}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be adam or sgd, got {self.optimizer!r}")


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)
    epoch_main_losses: list = field(default_factory=list)
    epoch_subtask_losses: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    valid_mrr: list = field(default_factory=list)
    best_epoch: int = 0
    best_mrr: float = 0.0
    stopped_early: bool = False
    seconds: float = 0.0


class Sgd:
    def __init__(self, store):
        pass

    def step(self, store, grads, lr):
        for name, g in grads.items():
            store.arrays[name] -= lr * g


class Adam:
    def __init__(self, store, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in store.arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in store.arrays.items()}
        self.t = 0

    def step(self, store, grads, lr):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            store.arrays[name] -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def make_optimizer(name, store):
    return Adam(store) if name == "adam" else Sgd(store)


def corrupt(triplet, triplet_set, n_entities, rng):
    """Corrupt one endpoint uniformly; retry (up to 100x) known facts."""
    s, q, o = (int(x) for x in triplet)
    corrupt_subject = rng.random() < 0.5
    cand = (s, q, o)
    for _ in range(100):
        e = int(rng.integers(n_entities))
        cand = (e, q, o) if corrupt_subject else (s, q, e)
        if cand not in triplet_set:
            return cand
    return cand


def hinge(tape, margin, phi_pos, phi_neg):
    """Per-pair ranking hinge ``[margin - phi_pos + phi_neg]_+`` as a (B,) Value."""
    b = phi_pos.data.shape[0]
    margin_vec = tape.constant(np.full(b, float(margin)))
    return ad.relu(tape, ad.add(tape, ad.sub(tape, margin_vec, phi_pos), phi_neg))


def output_scores(tape, leaves, triplets, neighborhood_fn, dense, acfg, scorer, rng, budget):
    """phi over output embeddings: both endpoints neighborhood-encoded."""
    triplets = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    b = triplets.shape[0]
    ent_ids = np.concatenate([triplets[:, 0], triplets[:, 2]])
    queries = np.tile(triplets[:, 1], 2)
    rels, ents, mask = stack_samples(neighborhood_fn, ent_ids, budget, rng)
    enc = encode_batch(tape, leaves, rels, ents, mask, queries, acfg, dense_table=dense, rng=rng)
    subj = ad.take_rows(tape, enc, np.arange(b))
    obj = ad.take_rows(tape, enc, np.arange(b) + b)
    q_emb = ad.take_rows(tape, leaves["relation_emb"], triplets[:, 1])
    return score_batch(tape, subj, q_emb, obj, scorer)


def input_scores(tape, leaves, triplets, scorer):
    """phi over raw input embeddings (the subtask), same relation rows."""
    triplets = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    subj = ad.take_rows(tape, leaves["entity_emb"], triplets[:, 0])
    obj = ad.take_rows(tape, leaves["entity_emb"], triplets[:, 2])
    q_emb = ad.take_rows(tape, leaves["relation_emb"], triplets[:, 1])
    return score_batch(tape, subj, q_emb, obj, scorer)


def main_loss(tape, leaves, positive, negative, neighborhood_fn, dense, tcfg, acfg, scorer, rng):
    """Output-embedding hinge for one positive/negative pair (scalar Value)."""
    phi_p = output_scores(tape, leaves, [positive], neighborhood_fn, dense, acfg, scorer, rng, tcfg.neighbor_budget)
    phi_n = output_scores(tape, leaves, [negative], neighborhood_fn, dense, acfg, scorer, rng, tcfg.neighbor_budget)
    return ad.reshape(tape, hinge(tape, tcfg.margin, phi_p, phi_n), ())


def subtask_loss(tape, leaves, positive, negative, tcfg, scorer):
    """Input-embedding hinge for one positive/negative pair (scalar Value)."""
    phi_p = input_scores(tape, leaves, [positive], scorer)
    phi_n = input_scores(tape, leaves, [negative], scorer)
    return ad.reshape(tape, hinge(tape, tcfg.margin, phi_p, phi_n), ())


def batch_objective(tape, leaves, positives, negatives, neighborhood_fn, dense, tcfg, acfg, scorer, rng):
    """Mean pair loss over a batch, plus the attention L2 penalty.

    Encodes the four endpoint groups (positive/negative x subject/object)
    in a single pass; equivalent to summing :func:`main_loss` and
    :func:`subtask_loss` over the batch.  Returns ``(loss, parts)`` where
    ``parts`` holds the main and subtask components as plain floats.
    """
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    negatives = np.asarray(negatives, dtype=np.int64).reshape(-1, 3)
    b = positives.shape[0]
    both = np.concatenate([positives, negatives], axis=0)
    phi = output_scores(tape, leaves, both, neighborhood_fn, dense, acfg, scorer, rng, tcfg.neighbor_budget)
    loss = ad.mean_all(tape, hinge(tape, tcfg.margin, ad.narrow(tape, phi, 0, b), ad.narrow(tape, phi, b, 2 * b)))
    parts = {"main": float(loss.data), "subtask": 0.0}
    if tcfg.subtask_enabled:
        psi = input_scores(tape, leaves, both, scorer)
        sub = ad.mean_all(tape, hinge(tape, tcfg.margin, ad.narrow(tape, psi, 0, b), ad.narrow(tape, psi, b, 2 * b)))
        parts["subtask"] = float(sub.data)
        loss = ad.add(tape, loss, sub)
    if tcfg.l2_rate > 0.0:
        reg = None
        for name in _ATTN_PARAM_NAMES:
            if name not in leaves:
                continue
            term = ad.l2_norm_sq(tape, leaves[name])
            reg = term if reg is None else ad.add(tape, reg, term)
        if reg is not None:
            loss = ad.add(tape, loss, ad.scale(tape, reg, tcfg.l2_rate))
    return loss, parts


def train(bundle, tcfg, acfg=None, scorer="transe", rules_table=None, out_dir=None, log=None):
    """Fit a model on a bundle; returns ``(store, report)``.

    Positives are the inverse-augmented training triplets.  When
    ``eval_every`` is set and the bundle has validation triplets, a
    filtered-MRR probe on (a deterministic subset of) validation drives
    best-checkpoint tracking and early stopping.
    """
    started = time.perf_counter()
    if acfg is None:
        acfg = AggregatorConfig()
    if acfg.neighbor_budget != tcfg.neighbor_budget:
        acfg = AggregatorConfig(
            kind=acfg.kind, neighbor_budget=tcfg.neighbor_budget,
            logic_mode=acfg.logic_mode, epsilon=acfg.epsilon,
        )
    check_scorer(scorer, tcfg.dim)
    if not bundle.train:
        raise TrainError("bundle has no training triplets")

    ctx = BundleContext(bundle)
    graph = ctx.train_graph
    if acfg.needs_rules and rules_table is None:
        rules_table = mine_confidence(graph)
    dense = rules_table.dense() if (rules_table is not None and acfg.needs_rules) else None

    store = init_params(ctx.vocab.n_entities, graph.n_relations, tcfg.dim, tcfg.seed, with_lstm=acfg.uses_lstm)
    positives = graph.triplets
    rng = np.random.default_rng(tcfg.seed)
    opt = make_optimizer(tcfg.optimizer, store)
    report = TrainReport()
    best_store = None
    stale = 0

    valid_ids = None
    if tcfg.eval_every > 0 and bundle.valid:
        valid_ids = ctx.to_ids(bundle.valid)
        if valid_ids.shape[0] > tcfg.valid_max_queries:
            pick = np.random.default_rng(tcfg.seed).permutation(valid_ids.shape[0])
            valid_ids = valid_ids[pick[: tcfg.valid_max_queries]]

    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(positives.shape[0])
        total = np.zeros(3)
        norm_sum, count, batches = 0.0, 0, 0
        for lo in range(0, order.size, tcfg.batch_size):
            pos = positives[order[lo:lo + tcfg.batch_size]]
            if tcfg.negatives_per_positive > 1:
                pos = np.repeat(pos, tcfg.negatives_per_positive, axis=0)
            neg = np.array(
                [corrupt(t, graph.triplet_set, ctx.vocab.n_entities, rng) for t in pos], dtype=np.int64
            )
            tape = ad.Tape()
            leaves = store.leaves(tape)
            loss, parts = batch_objective(tape, leaves, pos, neg, ctx.neighborhood, dense, tcfg, acfg, scorer, rng)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainError(
                    f"non-finite loss at epoch {epoch}, batch {lo // tcfg.batch_size}: {value}"
                )
            tape.backward(loss)
            grads = collect_gradients(leaves)
            norm_sum += np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            opt.step(store, grads, tcfg.learning_rate)
            store.renormalize_transforms()
            for name, arr in store.arrays.items():
                if not np.isfinite(arr).all():
                    raise TrainError(
                        f"non-finite values in {name} after epoch {epoch}, "
                        f"batch {lo // tcfg.batch_size} (diverged?)"
                    )
            total += np.array([value, parts["main"], parts["subtask"]]) * pos.shape[0]
            count += pos.shape[0]
            batches += 1
        mean = (total / max(count, 1)).tolist()
        report.epoch_losses.append(mean[0])
        report.epoch_main_losses.append(mean[1])
        report.epoch_subtask_losses.append(mean[2])
        report.grad_norms.append(norm_sum / max(batches, 1))
        if log:
            log(f"epoch {epoch}: loss {report.epoch_losses[-1]:.6f}")

        if valid_ids is not None and epoch % tcfg.eval_every == 0:
            mrr = link_prediction(
                ctx, store, acfg, scorer, dense, seed=tcfg.seed, triplets=valid_ids, rank_side="object"
            ).metrics.mrr
            report.valid_mrr.append((epoch, mrr))
            if log:
                log(f"epoch {epoch}: validation MRR {mrr:.4f}")
            if mrr > report.best_mrr:
                report.best_mrr, report.best_epoch = mrr, epoch
                best_store = store.copy()
                stale = 0
            else:
                stale += 1
                if stale >= tcfg.patience:
                    report.stopped_early = True
                    if log:
                        log(f"early stop at epoch {epoch} (patience {tcfg.patience})")
                    break

        if out_dir and tcfg.checkpoint_every > 0 and epoch % tcfg.checkpoint_every == 0:
            _save(os.path.join(out_dir, f"epoch-{epoch:04d}"), store, ctx, tcfg, acfg, scorer, epoch)

    if best_store is not None:
        store = best_store
    report.seconds = time.perf_counter() - started
    if out_dir:
        _save(out_dir, store, ctx, tcfg, acfg, scorer, report.best_epoch or tcfg.epochs)
    return store, report


def _save(path, store, ctx, tcfg, acfg, scorer, epoch):
    meta = {
        "artifact_version": ARTIFACT_VERSION,
        "epoch": str(epoch),
        "scorer": scorer,
        "aggregator": acfg.kind,
        "logic_mode": acfg.logic_mode,
        "epsilon": repr(acfg.epsilon),
        "dim": str(tcfg.dim),
        "neighbor_budget": str(tcfg.neighbor_budget),
        "margin": repr(tcfg.margin),
        "seed": str(tcfg.seed),
    }
    meta.update(vocab_checksums(ctx.vocab))
    save_checkpoint(path, store, meta)
