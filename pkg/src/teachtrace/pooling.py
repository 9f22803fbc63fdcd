"""Pooling per-sample knowledge vectors into a per-class teaching state.

Gated attention scores each knowledge vector with a tanh head modulated by
a sigmoid gate; normalized scores give a convex combination per class.  The
stacked per-class vectors form the agent's state.  A weight ledger keeps a
per-sample attention estimate alive across interactions by propagating the
attention of sampled points to similar unsampled ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .numerics import Array, DifferentiableBlock, sigmoid, uniform_init
from .students import LabeledDataset, MiniBatch


@dataclass(frozen=True)
class KnowledgeVector:
    """Knowledge-tracer read for one sample at one step."""

    f: Array
    sample_index: int
    step: int


class GatedAttention(DifferentiableBlock):
    """Positive attention scores for knowledge vectors of width ``n_in``.

    score(f) = exp(c . (tanh(W^T f) * sigmoid(U^T f)) / sqrt(n_in))
    """

    def __init__(self, n_in: int, width: int = 32, *, rng: np.random.Generator) -> None:
        super().__init__()
        if n_in < 1 or width < 1:
            raise ValueError("attention dimensions must be positive")
        self.n_in = int(n_in)
        self.width = int(width)
        self.params["W"] = uniform_init(rng, (n_in, width), fan_in=n_in)
        self.params["U"] = uniform_init(rng, (n_in, width), fan_in=n_in)
        self.params["c"] = uniform_init(rng, (width,), fan_in=width)
        self._finish_setup()

    def score_forward(self, F: Array) -> "AttnCache":
        F = np.atleast_2d(np.asarray(F, dtype=float))
        if F.shape[1] != self.n_in:
            raise ValueError(f"knowledge width {F.shape[1]} != expected {self.n_in}")
        H = np.tanh(F @ self.params["W"])
        Q = sigmoid(F @ self.params["U"])
        gates = H * Q
        raw = gates @ self.params["c"] / np.sqrt(self.n_in)
        scores = np.exp(raw)
        return AttnCache(F=F, H=H, Q=Q, gates=gates, scores=scores)

    def score_backward(self, cache: "AttnCache", dscores: Array) -> None:
        """Accumulate parameter gradients given d(loss)/d(scores)."""
        draw = np.asarray(dscores, dtype=float) * cache.scores
        scale = 1.0 / np.sqrt(self.n_in)
        self.grads["c"] += scale * (cache.gates.T @ draw)
        dgates = scale * np.outer(draw, self.params["c"])
        dH = dgates * cache.Q
        dQ = dgates * cache.H
        self.grads["W"] += cache.F.T @ (dH * (1.0 - cache.H**2))
        self.grads["U"] += cache.F.T @ (dQ * cache.Q * (1.0 - cache.Q))


@dataclass
class AttnCache:
    F: Array
    H: Array
    Q: Array
    gates: Array
    scores: Array


@dataclass
class PoolResult:
    """Convex combination of one class's knowledge vectors."""

    pooled: Array  # (n_in,)
    alphas: Array  # (m,) nonnegative, sums to 1
    cache: AttnCache | None  # None for mean pooling


def gated_scores(attention: GatedAttention, vectors: Sequence[KnowledgeVector]) -> Array:
    """Raw positive scores for a list of knowledge vectors."""
    if len(vectors) == 0:
        raise ValueError("no vectors to score")
    F = np.stack([v.f for v in vectors])
    return attention.score_forward(F).scores


def pool_class(attention: GatedAttention | None, F: Array | Sequence[KnowledgeVector]) -> PoolResult | None:
    """Pool one class's vectors; None signals the class is absent.

    With ``attention`` set, weights are the normalized gated scores; without
    it, plain mean pooling (uniform weights).
    """
    if not isinstance(F, np.ndarray):
        if len(F) == 0:
            return None
        F = np.stack([v.f for v in F])
    if F.size == 0:
        return None
    F = np.atleast_2d(F)
    if attention is None:
        m = F.shape[0]
        alphas = np.full(m, 1.0 / m)
        return PoolResult(pooled=F.mean(axis=0), alphas=alphas, cache=None)
    cache = attention.score_forward(F)
    total = cache.scores.sum()
    alphas = cache.scores / total
    return PoolResult(pooled=alphas @ F, alphas=alphas, cache=cache)


def pool_backward(attention: GatedAttention, result: PoolResult, dpooled: Array) -> None:
    """Backprop d(loss)/d(pooled vector) into the attention parameters."""
    if result.cache is None:
        raise ValueError("mean pooling has no attention parameters")
    dalpha = result.cache.F @ np.asarray(dpooled, dtype=float)
    total = result.cache.scores.sum()
    dscores = (dalpha - result.alphas @ dalpha) / total
    attention.score_backward(result.cache, dscores)


class KnowledgeState:
    """Per-class pooled knowledge, one row per class.

    ``provenance[y]`` records the interaction that last refreshed row y
    (-1 when the row has never been refreshed).
    """

    def __init__(self, matrix: Array, provenance: Array) -> None:
        self.matrix = np.asarray(matrix, dtype=float)
        self.provenance = np.asarray(provenance, dtype=int)
        if self.matrix.ndim != 2 or self.provenance.shape != (self.matrix.shape[0],):
            raise ValueError("state matrix and provenance misaligned")

    @classmethod
    def initial(cls, num_classes: int, width: int) -> "KnowledgeState":
        return cls(np.zeros((num_classes, width)), np.full(num_classes, -1))

    @property
    def num_classes(self) -> int:
        return self.matrix.shape[0]

    @property
    def width(self) -> int:
        return self.matrix.shape[1]

    def flat(self) -> Array:
        return self.matrix.reshape(-1).copy()


def build_state(
    prev: KnowledgeState,
    pooled: Mapping[int, Array],
    interaction: int,
) -> KnowledgeState:
    """New state: rows for pooled classes refreshed, other rows carried over."""
    matrix = prev.matrix.copy()
    provenance = prev.provenance.copy()
    for class_id, g in pooled.items():
        if not 0 <= class_id < prev.num_classes:
            raise ValueError(f"class {class_id} outside the state")
        g = np.asarray(g, dtype=float)
        if g.shape != (prev.width,):
            raise ValueError(f"pooled vector for class {class_id} has width {g.shape}, expected ({prev.width},)")
        matrix[class_id] = g
        provenance[class_id] = interaction
    return KnowledgeState(matrix, provenance)


def clipped_cosine(X: Array, Y: Array) -> Array:
    """Pairwise cosine similarity clipped to [0, 1]; zero vectors score 0."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    xn = np.linalg.norm(X, axis=1)
    yn = np.linalg.norm(Y, axis=1)
    denom = np.outer(xn, yn)
    with np.errstate(divide="ignore", invalid="ignore"):
        sims = np.where(denom > 0, (X @ Y.T) / np.where(denom > 0, denom, 1.0), 0.0)
    return np.clip(sims, 0.0, 1.0)


class WeightLedger:
    """Per-sample attention weights kept fresh between interactions.

    Sampled points take their attention weight directly; unsampled points of
    the same class receive a similarity-weighted estimate, averaged with
    their previous weight over the number of completed interactions.
    Weights start uniform within each class at episode reset.
    """

    def __init__(self, dataset: LabeledDataset) -> None:
        self.dataset = dataset
        self.weights = np.zeros(len(dataset))
        self.last_update = np.full(len(dataset), -1)
        self.interactions = 0
        self.seed_uniform()

    def seed_uniform(self) -> None:
        """Episode reset: uniform within each class, counter back to zero."""
        for class_id, members in self.dataset.by_class.items():
            if members.size:
                self.weights[members] = 1.0 / members.size
        self.last_update.fill(-1)
        self.interactions = 0

    def complete_interaction(self) -> None:
        self.interactions += 1

    def update(self, batch: MiniBatch, alphas: Mapping[int, float]) -> None:
        """Fold the latest attention weights into the ledger.

        ``alphas`` maps sample index -> attention weight for the previous
        batch.  Requires at least one completed interaction; the first batch
        of an episode is seeded uniformly instead.
        """
        if self.interactions < 1:
            raise ValueError("no completed interactions yet; the ledger starts uniform")
        idx = batch.indices
        missing = [int(i) for i in idx if int(i) not in alphas]
        if missing:
            raise ValueError(f"attention weights missing for samples {missing}")
        labels = self.dataset.labels
        feats = self.dataset.features
        for class_id in np.unique(labels[idx]):
            in_batch = idx[labels[idx] == class_id]
            alpha_vec = np.array([alphas[int(i)] for i in in_batch])
            members = self.dataset.by_class[int(class_id)]
            unsampled = np.setdiff1d(members, in_batch, assume_unique=True)
            if unsampled.size:
                sims = clipped_cosine(feats[unsampled], feats[in_batch])
                estimate = sims @ alpha_vec
                self.weights[unsampled] = (self.weights[unsampled] + estimate) / self.interactions
            self.weights[in_batch] = alpha_vec
            self.last_update[in_batch] = self.interactions
            self.last_update[unsampled] = self.interactions
        if np.any(self.weights < 0):
            raise AssertionError("ledger weights went negative")

    def class_probabilities(self, class_id: int) -> tuple[Array, Array]:
        """Members of the class and their weights renormalized to sum 1."""
        members = self.dataset.by_class[int(class_id)]
        w = self.weights[members]
        total = w.sum()
        if total <= 0:
            probs = np.full(members.size, 1.0 / members.size)
        else:
            probs = w / total
        return members, probs
