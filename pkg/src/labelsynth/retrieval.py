"""Embedding-space math for one-shot label recognition.

Embeddings are produced elsewhere (any feature extractor); this module only
compares them: cosine distance, the batch-all triplet loss used to train
such an extractor, and top-k ranking of a query against a one-per-class
gallery.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EmbeddingParseError, EmptyGallery


@dataclass(frozen=True)
class Embedding:
    """Unit-length feature vector tagged with its class id."""

    vector: np.ndarray
    class_id: int

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=float).ravel()
        if v.size == 0:
            raise ValueError("embedding is empty")
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding has non-finite components")
        n = np.linalg.norm(v)
        if n == 0:
            raise ValueError("embedding has zero length")
        object.__setattr__(self, "vector", v / n)
        object.__setattr__(self, "class_id", int(self.class_id))

    @property
    def dim(self) -> int:
        return self.vector.size


def cosine_distance(u: Embedding, v: Embedding) -> float:
    """``1 - <u, v>``, in [0, 2]."""
    if u.dim != v.dim:
        raise DimensionMismatch(f"dimensions differ: {u.dim} vs {v.dim}")
    return float(np.clip(1.0 - u.vector @ v.vector, 0.0, 2.0))


@dataclass(frozen=True)
class TripletBatch:
    """P classes with K embeddings each, stored as a (P, K, D) array."""

    embeddings: np.ndarray
    class_ids: tuple[int, ...]
    margin: float = 0.3

    def __post_init__(self):
        x = np.asarray(self.embeddings, dtype=float)
        if x.ndim != 3:
            raise ValueError("embeddings must have shape (P, K, D)")
        p, k, _ = x.shape
        if p < 2 or k < 2:
            raise ValueError(f"need P >= 2 and K >= 2, got P={p}, K={k}")
        if len(self.class_ids) != p:
            raise ValueError("one class id per class row required")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if not np.all(np.isfinite(x)):
            raise ValueError("embeddings must be finite")
        norms = np.linalg.norm(x, axis=2, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("embedding has zero length")
        object.__setattr__(self, "embeddings", x / norms)
        object.__setattr__(self, "class_ids", tuple(int(c) for c in self.class_ids))

    @classmethod
    def from_embeddings(cls, items: list[Embedding], margin: float = 0.3) -> TripletBatch:
        """Group embeddings by class; every class must have the same count."""
        groups: dict[int, list[np.ndarray]] = {}
        for e in items:
            groups.setdefault(e.class_id, []).append(e.vector)
        sizes = {len(g) for g in groups.values()}
        if len(sizes) != 1:
            raise ValueError(f"classes have unequal sizes {sorted(sizes)}")
        ids = sorted(groups)
        return cls(np.array([groups[c] for c in ids]), tuple(ids), margin)

    @property
    def P(self) -> int:
        return self.embeddings.shape[0]

    @property
    def K(self) -> int:
        return self.embeddings.shape[1]


@dataclass(frozen=True)
class TripletLoss:
    loss: float
    triplets: int
    active: int


def batch_all_triplet_loss(batch: TripletBatch, reduction: str = "sum") -> TripletLoss:
    """Hinge triplet loss over every (anchor, positive, negative) combination.

    For anchor ``a`` and positive ``p != a`` of class i and every embedding
    ``n`` of every other class j, the term is
    ``max(0, m + D(a, p) - D(a, n))`` with cosine distance D. ``reduction``
    is ``"sum"`` (the plain total) or ``"mean_active"`` (average over the
    terms that are positive).
    """
    if reduction not in ("sum", "mean_active"):
        raise ValueError(f"unknown reduction {reduction!r}")
    x = batch.embeddings
    P, K, D = x.shape
    flat = x.reshape(P * K, D)
    dist = 1.0 - flat @ flat.T
    labels = np.repeat(np.arange(P), K)
    same = labels[:, None] == labels[None, :]
    eye = np.eye(P * K, dtype=bool)
    pos_mask = same & ~eye
    neg_mask = ~same
    # terms[a, p, n] = m + D(a, p) - D(a, n)
    terms = batch.margin + dist[:, :, None] - dist[:, None, :]
    valid = pos_mask[:, :, None] & neg_mask[:, None, :]
    hinge = np.where(valid, np.maximum(terms, 0.0), 0.0)
    active = int(np.count_nonzero(hinge > 0))
    total = float(hinge.sum())
    count = int(valid.sum())
    if reduction == "mean_active":
        total = total / active if active else 0.0
    return TripletLoss(total, count, active)


def rank_top_k(query: Embedding, gallery: list[Embedding], k: int = 5) -> list[tuple[int, float]]:
    """Gallery classes by decreasing cosine similarity to ``query``.

    Ties are broken by ascending class id. Returns at most ``k`` entries.
    """
    if not gallery:
        raise EmptyGallery("gallery is empty")
    if k < 1:
        raise ValueError("k must be at least 1")
    dims = {g.dim for g in gallery}
    if dims != {query.dim}:
        raise DimensionMismatch(f"query has dimension {query.dim}, gallery has {sorted(dims)}")
    ids = [g.class_id for g in gallery]
    if len(set(ids)) != len(ids):
        raise ValueError("gallery must hold one embedding per class")
    G = np.array([g.vector for g in gallery])
    sims = G @ query.vector
    order = np.lexsort((np.array(ids), -sims))
    return [(ids[i], float(sims[i])) for i in order[:k]]


def parse_embeddings(text: str) -> list[Embedding]:
    """Parse ``class_id c1 c2 ...`` records, one per line.

    Blank lines and lines starting with ``#`` are skipped. All records must
    share one dimension.
    """
    out: list[Embedding] = []
    dim = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) < 2:
            raise EmbeddingParseError("expected a class id followed by components", lineno)
        try:
            cid = int(fields[0])
        except ValueError:
            raise EmbeddingParseError(f"class id {fields[0]!r} is not an integer", lineno) from None
        try:
            vec = np.array([float(f) for f in fields[1:]])
        except ValueError as exc:
            raise EmbeddingParseError(f"bad component: {exc}", lineno) from None
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise EmbeddingParseError(f"expected {dim} components, found {vec.size}", lineno)
        try:
            out.append(Embedding(vec, cid))
        except ValueError as exc:
            raise EmbeddingParseError(str(exc), lineno) from None
    return out


def load_embeddings(path) -> list[Embedding]:
    return parse_embeddings(Path(path).read_text(encoding="utf-8"))


def format_embeddings(items: list[Embedding]) -> str:
    return "".join(
        f"{e.class_id} " + " ".join(repr(float(c)) for c in e.vector) + "\n" for e in items
    )
