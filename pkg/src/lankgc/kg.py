"""Knowledge-graph core: vocabulary, triplet storage, neighborhoods.

Triplets are (subject, relation, object) over string names on disk and
integer ids in memory.  Entity and relation ids are assigned by sorting
names lexicographically, so the same set of triplets always produces
the same ids regardless of file order.

Inverse augmentation doubles the relation vocabulary: a base relation
with id ``r`` in ``[0, m)`` gets an inverse with id ``r + m``.  Inverse
relations are serialized with the reserved name suffix ``**INV``, which
is rejected in input files.
"""

from __future__ import annotations

import numpy as np

INVERSE_SUFFIX = "**INV"


class ParseError(ValueError):
    """A corpus file line that does not parse; message carries the line number."""


class GraphError(ValueError):
    """A structurally invalid graph or graph operation."""


class Vocabulary:
    """Bidirectional name<->id maps for entities and base relations."""

    def __init__(self, entity_names, relation_names):
        self.entities = sorted(set(entity_names))
        self.relations = sorted(set(relation_names))
        self._ent_index = {name: i for i, name in enumerate(self.entities)}
        self._rel_index = {name: i for i, name in enumerate(self.relations)}

    @property
    def n_entities(self):
        return len(self.entities)

    @property
    def n_relations(self):
        """Number of base relations (inverses not counted)."""
        return len(self.relations)

    def entity_id(self, name):
        try:
            return self._ent_index[name]
        except KeyError:
            raise GraphError(f"unknown entity: {name!r}") from None

    def relation_id(self, name):
        """Id for a relation name; ``r**INV`` maps into the inverse block."""
        if name.endswith(INVERSE_SUFFIX):
            base = name[: -len(INVERSE_SUFFIX)]
            if base in self._rel_index:
                return self._rel_index[base] + len(self.relations)
            raise GraphError(f"unknown relation: {name!r}")
        try:
            return self._rel_index[name]
        except KeyError:
            raise GraphError(f"unknown relation: {name!r}") from None

    def entity_name(self, i):
        return self.entities[i]

    def relation_name(self, r):
        m = len(self.relations)
        if 0 <= r < m:
            return self.relations[r]
        if m <= r < 2 * m:
            return self.relations[r - m] + INVERSE_SUFFIX
        raise GraphError(f"relation id out of range: {r}")

    def has_entity(self, name):
        return name in self._ent_index

    def checksum_material(self):
        """Stable byte string covering both vocabularies (for manifests)."""
        return "\n".join(self.entities + ["--"] + self.relations).encode("utf-8")


class KnowledgeGraph:
    """Immutable triplet store with per-entity adjacency.

    ``triplets`` is an ``(N, 3)`` int64 array of (s, r, o) ids, in the
    deduplicated order they were supplied.  ``adjacency[e]`` lists the
    outgoing edges of ``e`` as a ``(k, 2)`` array of (relation, entity)
    pairs sorted by relation id then entity id.  On an augmented graph
    the adjacency is the full neighborhood of the paper's aggregators:
    every fact touching ``e``, with incoming facts visible through
    inverse relations.
    """

    def __init__(self, vocab, triplets, augmented=False):
        self.vocab = vocab
        self.triplets = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
        self.augmented = bool(augmented)
        self.triplet_set = {(int(s), int(r), int(o)) for s, r, o in self.triplets}
        self._adjacency = self._build_adjacency()

    @property
    def n_entities(self):
        return self.vocab.n_entities

    @property
    def n_relations(self):
        """Relation id space size: m for a raw graph, 2m once augmented."""
        m = self.vocab.n_relations
        return 2 * m if self.augmented else m

    def _build_adjacency(self):
        n = self.vocab.n_entities
        if len(self.triplets) == 0:
            return [np.zeros((0, 2), dtype=np.int64) for _ in range(n)]
        order = np.lexsort((self.triplets[:, 2], self.triplets[:, 1], self.triplets[:, 0]))
        srt = self.triplets[order]
        adjacency = []
        bounds = np.searchsorted(srt[:, 0], np.arange(n + 1))
        for e in range(n):
            adjacency.append(srt[bounds[e]:bounds[e + 1], 1:].copy())
        return adjacency

    def neighborhood(self, e):
        """Outgoing (relation, entity) pairs of entity ``e``, deterministic order."""
        if not (0 <= e < self.vocab.n_entities):
            raise GraphError(f"entity id out of range: {e}")
        return self._adjacency[e]

    def isolated_entities(self):
        """Ids of entities with an empty neighborhood (possible pre-augmentation)."""
        return [e for e in range(self.vocab.n_entities) if len(self._adjacency[e]) == 0]

    def inverse(self, r):
        """Map a relation id to its inverse id (and back)."""
        if not self.augmented:
            raise GraphError("inverse ids only exist on an augmented graph")
        m = self.vocab.n_relations
        return r + m if r < m else r - m


def parse_triplet_file(path):
    """Read a 3-column TSV of name triplets, deduplicated, order preserved.

    Malformed lines (not exactly three tab-separated fields) raise
    :class:`ParseError` naming the offending line.  The reserved inverse
    suffix is rejected in relation names.
    """
    triples = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}")
            s, r, o = fields
            if INVERSE_SUFFIX in r:
                raise ParseError(f"{path}:{lineno}: relation name uses reserved suffix {INVERSE_SUFFIX!r}")
            t = (s, r, o)
            if t not in seen:
                seen.add(t)
                triples.append(t)
    return triples


def graph_from_names(name_triples, vocab=None):
    """Build a graph from (s, r, o) name tuples, assigning sorted ids."""
    if not name_triples:
        raise GraphError("empty graph: no triplets supplied")
    if vocab is None:
        ents = set()
        rels = set()
        for s, r, o in name_triples:
            ents.add(s)
            ents.add(o)
            rels.add(r)
        vocab = Vocabulary(ents, rels)
    ids = np.empty((len(name_triples), 3), dtype=np.int64)
    for i, (s, r, o) in enumerate(name_triples):
        ids[i, 0] = vocab.entity_id(s)
        ids[i, 1] = vocab.relation_id(r)
        ids[i, 2] = vocab.entity_id(o)
    return KnowledgeGraph(vocab, ids, augmented=False)


def load_triplets(path):
    """Load a TSV corpus file into a (non-augmented) graph."""
    triples = parse_triplet_file(path)
    if not triples:
        raise GraphError(f"empty graph: {path} has no triplets")
    return graph_from_names(triples)


def load_labeled_triplets(path):
    """Read a 4-column TSV ``s r o label`` with label 1 or 0.

    Returns (s, r, o, label) name tuples; used by triplet classification.
    """
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(fields)}")
            s, r, o, label = fields
            if label not in ("0", "1"):
                raise ParseError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
            rows.append((s, r, o, int(label)))
    if not rows:
        raise ParseError(f"{path}: no labeled triplets")
    return rows


def augment_inverses(kg):
    """Add an inverse fact (o, r+m, s) for every fact (s, r, o).

    Self-loops produce a distinct inverse self-loop under the inverse
    relation id.  Augmenting twice is an error.
    """
    if kg.augmented:
        raise GraphError("graph is already inverse-augmented")
    m = kg.vocab.n_relations
    fwd = kg.triplets
    inv = np.stack([fwd[:, 2], fwd[:, 1] + m, fwd[:, 0]], axis=1)
    return KnowledgeGraph(kg.vocab, np.concatenate([fwd, inv], axis=0), augmented=True)


class NeighborSample:
    """A fixed-width neighbor slice: ids plus a validity mask.

    Real entries come first; padded slots carry relation/entity id 0 and
    ``mask`` False.  An empty neighborhood yields an all-masked sample.
    """

    __slots__ = ("relations", "entities", "mask")

    def __init__(self, relations, entities, mask):
        self.relations = relations
        self.entities = entities
        self.mask = mask

    @property
    def n_valid(self):
        return int(self.mask.sum())


def sample_neighbors(entries, budget, rng):
    """Draw at most ``budget`` neighbors without replacement, then pad.

    ``entries`` is a ``(k, 2)`` (relation, entity) array as returned by
    :meth:`KnowledgeGraph.neighborhood`.  When the neighborhood fits the
    budget it is taken whole (no randomness); otherwise a uniform sample
    without replacement is drawn and kept in adjacency order.
    """
    if budget < 1:
        raise ValueError(f"neighbor budget must be >= 1, got {budget}")
    entries = np.asarray(entries, dtype=np.int64).reshape(-1, 2)
    k = entries.shape[0]
    if k > budget:
        take = rng.choice(k, size=budget, replace=False)
        take.sort()
        entries = entries[take]
        k = budget
    relations = np.zeros(budget, dtype=np.int64)
    entities = np.zeros(budget, dtype=np.int64)
    mask = np.zeros(budget, dtype=bool)
    relations[:k] = entries[:, 0]
    entities[:k] = entries[:, 1]
    mask[:k] = True
    return NeighborSample(relations, entities, mask)
