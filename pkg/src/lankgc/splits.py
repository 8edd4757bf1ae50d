"""Construction of unseen-entity evaluation splits from a standard corpus.

Starting from a corpus with conventional train/valid/test files, a
fraction R of the test triplets is sampled and their subjects (or
objects, per strategy) become candidate unseen entities.  Candidates
whose training neighbors would all disappear with them are filtered
out.  Training triplets touching an unseen entity on exactly one side
move to the auxiliary set, which later supplies the neighborhoods of
unseen entities; triplets touching unseen entities on both sides are
dropped.  Test triplets are kept only when their strategy-side endpoint
is unseen and the other endpoint still occurs in the new training set;
validation triplets must live entirely inside the new training
vocabulary.

Sampling takes a prefix of a seeded permutation of the test file, so
growing R only ever adds candidate entities.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .kg import ParseError, parse_triplet_file
from .util import ARTIFACT_VERSION, read_kv, sha256_file, write_kv

BUNDLE_FILES = ("train.tsv", "aux.tsv", "valid.tsv", "test.tsv", "unseen.txt")
STRATEGIES = ("subject", "object")


class SplitError(ValueError):
    """The requested split cannot be built or a bundle is invalid."""


@dataclass
class Corpus:
    """An original corpus: three triplet lists plus source checksums."""

    train: list
    valid: list
    test: list
    checksums: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SplitSpec:
    strategy: str = "subject"
    sample_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise SplitError(f"unknown strategy: {self.strategy!r}")
        if not (0.0 < self.sample_rate <= 1.0):
            raise SplitError(f"sample rate must be in (0, 1], got {self.sample_rate}")


@dataclass
class DatasetBundle:
    train: list
    aux: list
    valid: list
    test: list
    unseen: list
    spec: SplitSpec
    corpus_checksums: dict = field(default_factory=dict)

    def seen_entities(self):
        seen = set()
        for s, _, o in self.train:
            seen.add(s)
            seen.add(o)
        return seen

    def all_entities(self):
        ents = set()
        for part in (self.train, self.aux, self.valid, self.test):
            for s, _, o in part:
                ents.add(s)
                ents.add(o)
        ents.update(self.unseen)
        return ents

    def all_relations(self):
        rels = set()
        for part in (self.train, self.aux, self.valid, self.test):
            for _, r, _ in part:
                rels.add(r)
        return rels


@dataclass
class SplitStats:
    n_relations: int
    n_seen: int
    n_unseen: int
    min_neighbors: int
    max_neighbors: int
    avg_neighbors: float


def corpus_file(directory, stem):
    for ext in (".tsv", ".txt"):
        path = os.path.join(directory, stem + ext)
        if os.path.exists(path):
            return path
    raise FileNotFoundError(f"no {stem}.tsv or {stem}.txt in {directory}")


def load_corpus(directory):
    paths = {stem: corpus_file(directory, stem) for stem in ("train", "valid", "test")}
    parts = {stem: parse_triplet_file(p) for stem, p in paths.items()}
    for stem in ("train", "test"):
        if not parts[stem]:
            raise SplitError(f"corpus {stem} file is empty: {paths[stem]}")
    checksums = {f"corpus_sha256.{stem}": sha256_file(p) for stem, p in paths.items()}
    return Corpus(parts["train"], parts["valid"], parts["test"], checksums)


def build_split(corpus, spec):
    """Carve an unseen-entity bundle out of ``corpus`` per ``spec``."""
    if not corpus.test:
        raise SplitError("cannot build a split from an empty test set")
    if not corpus.train:
        raise SplitError("cannot build a split from an empty training set")

    rng = np.random.default_rng(spec.seed)
    n_test = len(corpus.test)
    n_take = max(1, int(round(spec.sample_rate * n_test)))
    perm = rng.permutation(n_test)
    chosen = np.zeros(n_test, dtype=bool)
    chosen[perm[:n_take]] = True
    side = 0 if spec.strategy == "subject" else 2
    candidates = {corpus.test[i][side] for i in range(n_test) if chosen[i]}

    neighbors = {}
    for s, _, o in corpus.train:
        neighbors.setdefault(s, set()).add(o)
        neighbors.setdefault(o, set()).add(s)

    unseen = {
        e
        for e in candidates
        if any(v not in candidates for v in neighbors.get(e, ()))
    }
    if not unseen:
        raise SplitError("no unseen entities survive the neighbor filter; increase the rate or check the corpus")

    train, aux = [], []
    for t in corpus.train:
        hits = (t[0] in unseen) + (t[2] in unseen)
        if hits == 0:
            train.append(t)
        elif hits == 1:
            aux.append(t)
    if not train:
        raise SplitError("every training triplet touches an unseen entity")

    seen = set()
    for s, _, o in train:
        seen.add(s)
        seen.add(o)

    if spec.strategy == "subject":
        test = [t for t in corpus.test if t[0] in unseen and t[2] in seen]
    else:
        test = [t for t in corpus.test if t[2] in unseen and t[0] in seen]
    if not test:
        raise SplitError("no test triplets survive the split filters")
    valid = [t for t in corpus.valid if t[0] in seen and t[2] in seen]

    return DatasetBundle(
        train=train,
        aux=aux,
        valid=valid,
        test=test,
        unseen=sorted(unseen),
        spec=spec,
        corpus_checksums=dict(corpus.checksums),
    )


def split_stats(bundle):
    """Summary counts: relations and entities in train, neighbor degrees of unseen."""
    relations = {r for _, r, _ in bundle.train}
    degree = {e: 0 for e in bundle.unseen}
    for s, _, o in bundle.aux:
        if s in degree:
            degree[s] += 1
        if o in degree:
            degree[o] += 1
    counts = sorted(degree.values())
    return SplitStats(
        n_relations=len(relations),
        n_seen=len(bundle.seen_entities()),
        n_unseen=len(bundle.unseen),
        min_neighbors=counts[0] if counts else 0,
        max_neighbors=counts[-1] if counts else 0,
        avg_neighbors=float(sum(counts)) / len(counts) if counts else 0.0,
    )


def _write_triplets(path, triples):
    with open(path, "w", encoding="utf-8") as fh:
        for s, r, o in triples:
            fh.write(f"{s}\t{r}\t{o}\n")


def write_bundle(bundle, out_dir):
    """Write the five bundle files plus a checksummed manifest."""
    os.makedirs(out_dir, exist_ok=True)
    _write_triplets(os.path.join(out_dir, "train.tsv"), bundle.train)
    _write_triplets(os.path.join(out_dir, "aux.tsv"), bundle.aux)
    _write_triplets(os.path.join(out_dir, "valid.tsv"), bundle.valid)
    _write_triplets(os.path.join(out_dir, "test.tsv"), bundle.test)
    with open(os.path.join(out_dir, "unseen.txt"), "w", encoding="utf-8") as fh:
        for name in bundle.unseen:
            fh.write(name + "\n")
    manifest = {
        "artifact_version": ARTIFACT_VERSION,
        "strategy": bundle.spec.strategy,
        "sample_rate": repr(bundle.spec.sample_rate),
        "seed": str(bundle.spec.seed),
        "count.train": str(len(bundle.train)),
        "count.aux": str(len(bundle.aux)),
        "count.valid": str(len(bundle.valid)),
        "count.test": str(len(bundle.test)),
        "count.unseen": str(len(bundle.unseen)),
    }
    manifest.update(bundle.corpus_checksums)
    for name in BUNDLE_FILES:
        manifest[f"sha256.{name}"] = sha256_file(os.path.join(out_dir, name))
    write_kv(os.path.join(out_dir, "manifest"), manifest)


def read_bundle(bundle_dir):
    """Load a bundle directory, verifying manifest checksums."""
    manifest_path = os.path.join(bundle_dir, "manifest")
    if not os.path.exists(manifest_path):
        raise SplitError(f"no manifest in bundle directory {bundle_dir}")
    manifest = read_kv(manifest_path)
    for name in BUNDLE_FILES:
        path = os.path.join(bundle_dir, name)
        if not os.path.exists(path):
            raise SplitError(f"bundle file missing: {path}")
        want = manifest.get(f"sha256.{name}")
        got = sha256_file(path)
        if want is not None and want != got:
            raise SplitError(f"checksum mismatch for {path}: manifest {want}, file {got}")
    try:
        spec = SplitSpec(
            strategy=manifest.get("strategy", "subject"),
            sample_rate=float(manifest.get("sample_rate", "0.1")),
            seed=int(manifest.get("seed", "0")),
        )
    except ValueError as exc:
        raise SplitError(f"bad manifest values in {manifest_path}: {exc}") from None

    def read_part(name):
        try:
            return parse_triplet_file(os.path.join(bundle_dir, name))
        except ParseError as exc:
            raise SplitError(str(exc)) from None

    with open(os.path.join(bundle_dir, "unseen.txt"), "r", encoding="utf-8") as fh:
        unseen = [line.rstrip("\n") for line in fh if line.strip()]
    checksums = {k: v for k, v in manifest.items() if k.startswith("corpus_sha256.")}
    return DatasetBundle(
        train=read_part("train.tsv"),
        aux=read_part("aux.tsv"),
        valid=read_part("valid.tsv"),
        test=read_part("test.tsv"),
        unseen=unseen,
        spec=spec,
        corpus_checksums=checksums,
    )
