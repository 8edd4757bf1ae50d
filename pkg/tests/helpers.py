"""Shared test fixtures-in-code: tiny graphs, random corpora, and oracles.

The oracle functions here deliberately reimplement the library math in
plain numpy loops, straight from the formulas, so the vectorized
production paths have something independent to be checked against.
"""

from __future__ import annotations

import math

import numpy as np

from lankgc.kg import augment_inverses, graph_from_names
from lankgc.splits import Corpus, SplitError, SplitSpec, build_split


def make_graph(triples):
    """Name triples -> inverse-augmented KnowledgeGraph."""
    return augment_inverses(graph_from_names(triples))


def random_name_triples(rng, n_entities, n_relations, n_triples):
    """Distinct random (s, r, o) name triples without self-loops."""
    triples = set()
    guard = 0
    while len(triples) < n_triples and guard < 50 * n_triples:
        guard += 1
        s, o = rng.integers(n_entities, size=2)
        if s == o:
            continue
        r = rng.integers(n_relations)
        triples.add((f"e{s:04d}", f"r{r:02d}", f"e{o:04d}"))
    return sorted(triples)


def random_corpus(rng, n_entities=60, n_relations=4, n_triples=240):
    """A random corpus split 70/10/20 into train/valid/test."""
    triples = random_name_triples(rng, n_entities, n_relations, n_triples)
    order = rng.permutation(len(triples))
    a = int(0.7 * len(triples))
    b = int(0.8 * len(triples))
    return Corpus(
        train=[triples[i] for i in order[:a]],
        valid=[triples[i] for i in order[a:b]],
        test=[triples[i] for i in order[b:]],
    )


def random_bundles(count, start_seed=0, strategy="subject", **corpus_kw):
    """First ``count`` random corpora (by seed) that survive the split filters."""
    bundles = []
    seed = start_seed
    while len(bundles) < count:
        rng = np.random.default_rng(seed)
        corpus = random_corpus(rng, **corpus_kw)
        try:
            bundles.append(build_split(corpus, SplitSpec(strategy, 0.5, seed)))
        except SplitError:
            pass
        seed += 1
    return bundles


# ---------------------------------------------------------------------------
# independent numpy-only forward path


def naive_confidence(kg):
    """Double-loop implication confidences; the miner must match exactly."""
    rel_sets = []
    for e in range(kg.n_entities):
        rel_sets.append({int(r) for r, _ in kg.neighborhood(e)})
    conf = {}
    for r1 in range(kg.n_relations):
        have_r1 = [s for s in rel_sets if r1 in s]
        if not have_r1:
            continue
        for r2 in range(kg.n_relations):
            both = sum(1 for s in have_r1 if r2 in s)
            if both:
                conf[(r1, r2)] = both / len(have_r1)
    return conf


def oracle_logic(dense, rels, query, mode="normalized", epsilon=1e-3):
    """Logic weights of a fully-valid neighborhood, straight from the formula."""
    rels = [int(r) for r in rels]
    present = set(rels)
    w = []
    for r in rels:
        num = float(dense[r, query])
        others = [float(dense[rp, r]) for rp in present if rp != r]
        denom = max(others) if others else 1.0
        w.append(num / max(denom, epsilon))
    if mode == "normalized":
        total = sum(w)
        if total > 0.0:
            w = [x / total for x in w]
    return np.array(w)


def oracle_encode(arrays, dense, kind, query, neighborhood,
                  logic_mode="normalized", epsilon=1e-3):
    """Plain numpy aggregation over a full (r, e) neighborhood array.

    Covers every aggregator except lstm, whose output depends on a
    sampled order and is checked separately.
    """
    nb = np.asarray(neighborhood, dtype=np.int64).reshape(-1, 2)
    d = arrays["entity_emb"].shape[1]
    if nb.shape[0] == 0:
        return np.zeros(d)
    transformed = []
    for r, e in nb:
        w = arrays["transform_vec"][r]
        v = arrays["entity_emb"][e]
        transformed.append(v - np.dot(w, v) * w)
    transformed = np.array(transformed)
    if kind == "mean":
        return transformed.mean(axis=0)
    logic = None
    if kind in ("lan", "logic-only"):
        logic = oracle_logic(dense, nb[:, 0], query, logic_mode, epsilon)
    alpha = None
    if kind in ("lan", "query-attn", "global-attn"):
        z_q = np.zeros(d) if kind == "global-attn" else arrays["query_vec"][query]
        scores = np.array([
            arrays["attn_score_vec"] @ np.tanh(arrays["attn_proj"] @ np.concatenate([z_q, t]))
            for t in transformed
        ])
        ex = np.exp(scores - scores.max())
        alpha = ex / ex.sum()
    if kind == "logic-only":
        weights = logic
    elif kind in ("query-attn", "global-attn"):
        weights = alpha
    elif kind == "lan":
        weights = alpha + logic
    else:
        raise ValueError(f"oracle does not cover aggregator {kind!r}")
    return weights @ transformed


def oracle_score(s, q, o, kind):
    if kind == "transe":
        return float(-np.sum(np.abs(s + q - o)))
    if kind == "distmult":
        return float(np.sum(s * q * o))
    h = s.shape[0] // 2
    t1 = np.sum(s[:h] * q[:h] * o[:h])
    t2 = np.sum(s[h:] * q[h:] * o[:h])
    t3 = np.sum(s[:h] * q[h:] * o[h:])
    t4 = np.sum(s[h:] * q[:h] * o[h:])
    return float((t1 - t2) + (t3 + t4))


def oracle_rank(ctx, arrays, dense, kind, scorer, triplet, rank_side, known,
                cand_cache=None, logic_mode="normalized", epsilon=1e-3):
    """Brute-force filtered rank; neighbor budget must cover every degree."""
    s, q, o = (int(x) for x in triplet)
    truth = s if rank_side == "subject" else o
    fixed = o if rank_side == "subject" else s
    q_vec = arrays["relation_emb"][q]
    fixed_emb = oracle_encode(arrays, dense, kind, q, ctx.neighborhood(fixed),
                              logic_mode, epsilon)
    scores = {}
    for c in ctx.seen_ids:
        c = int(c)
        key = (q, c)
        if cand_cache is not None and key in cand_cache:
            emb = cand_cache[key]
        else:
            emb = oracle_encode(arrays, dense, kind, q, ctx.neighborhood(c),
                                logic_mode, epsilon)
            if cand_cache is not None:
                cand_cache[key] = emb
        if rank_side == "subject":
            scores[c] = oracle_score(emb, q_vec, fixed_emb, scorer)
        else:
            scores[c] = oracle_score(fixed_emb, q_vec, emb, scorer)
    truth_score = scores[truth]
    better = ties = 0
    for c, sc in scores.items():
        if c == truth:
            continue
        fact = (c, q, o) if rank_side == "subject" else (s, q, c)
        if fact in known:
            continue
        if sc > truth_score:
            better += 1
        elif sc == truth_score:
            ties += 1
    return 1 + better + math.ceil(ties / 2)


def oracle_metrics(ranks):
    ranks = np.asarray(ranks, dtype=np.float64)
    return {
        "mr": ranks.mean(),
        "mrr": (1.0 / ranks).mean(),
        "hits1": (ranks <= 1).mean(),
        "hits3": (ranks <= 3).mean(),
        "hits10": (ranks <= 10).mean(),
    }


def max_degree(ctx):
    """Largest neighborhood over train and aux graphs (for budget choices)."""
    best = 1
    for e in range(ctx.vocab.n_entities):
        best = max(best, ctx.neighborhood(e).shape[0])
    return best


def oracle_threshold(scores, labels):
    """Scan every decision region (midpoints plus the two outsides)."""
    xs = sorted(float(s) for s in scores)
    cands = [xs[0] - 1.0, xs[-1] + 1.0]
    for a, b in zip(xs[:-1], xs[1:]):
        if a < b:
            cands.append((a + b) / 2.0)
    best_acc, best = -1, None
    for delta in sorted(cands):
        acc = sum(
            1 for s, y in zip(scores, labels) if (float(s) >= delta) == (int(y) == 1)
        )
        if acc > best_acc:
            best_acc, best = acc, delta
    return best


def oracle_threshold_table(rows):
    """(per-relation thresholds, pooled default) from (rel, score, label) rows."""
    by_rel = {}
    for rel, sc, lab in rows:
        by_rel.setdefault(int(rel), ([], []))
        by_rel[int(rel)][0].append(float(sc))
        by_rel[int(rel)][1].append(int(lab))
    per = {rel: oracle_threshold(xs, ys) for rel, (xs, ys) in by_rel.items()}
    default = oracle_threshold(
        [sc for _, sc, _ in rows], [lab for _, _, lab in rows]
    )
    return per, default
