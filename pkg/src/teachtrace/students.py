"""Student models: the learners being taught.

A student maps feature vectors to class scores, trains one SGD step at a
time on cross-entropy mini-batches handed over by a teacher, and reports
per-sample losses plus accuracy / AUC on held-out slices.  Students never
look at labels outside the batch they were given; that isolation is what
makes teaching strategies comparable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .numerics import Array, Mlp, Sgd, softmax


@dataclass(frozen=True)
class Sample:
    """One labelled point.  ``concept`` is the generator tag when known."""

    index: int
    features: np.ndarray
    label: int
    concept: int | None = None


class LabeledDataset:
    """Indexed samples with dense feature and label views.

    Sample indices always equal row positions (0..n-1).  Splits re-index
    their subsets, so embedding tables keyed by sample id stay aligned with
    whatever dataset they were built against.
    """

    def __init__(
        self,
        features: Array,
        labels: Array,
        num_classes: int,
        concepts: Sequence[int] | None = None,
    ) -> None:
        features = np.asarray(features, dtype=float)
        labels = np.asarray(labels, dtype=int)
        if features.ndim != 2:
            raise ValueError("features must be a 2-D array (samples x dims)")
        if labels.shape != (features.shape[0],):
            raise ValueError("labels must align with feature rows")
        if num_classes < 2:
            raise ValueError("need at least two classes")
        if features.shape[0] and (labels.min() < 0 or labels.max() >= num_classes):
            raise ValueError("labels must lie in [0, num_classes)")
        if not np.all(np.isfinite(features)):
            raise ValueError("features contain non-finite values")
        self.features = features
        self.labels = labels
        self.num_classes = int(num_classes)
        self.concepts = None if concepts is None else np.asarray(concepts, dtype=int)
        if self.concepts is not None and self.concepts.shape != labels.shape:
            raise ValueError("concept tags must align with labels")
        self.by_class = {
            c: np.flatnonzero(labels == c) for c in range(self.num_classes)
        }

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def sample(self, index: int) -> Sample:
        concept = None if self.concepts is None else int(self.concepts[index])
        return Sample(index=int(index), features=self.features[index], label=int(self.labels[index]), concept=concept)

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        """Re-indexed copy restricted to ``indices`` (new ids are 0..k-1)."""
        idx = np.asarray(indices, dtype=int)
        concepts = None if self.concepts is None else self.concepts[idx]
        return LabeledDataset(self.features[idx], self.labels[idx], self.num_classes, concepts)


class MiniBatch:
    """Duplicate-free indices into a dataset."""

    def __init__(self, indices: Sequence[int]) -> None:
        idx = np.asarray(indices, dtype=int)
        if idx.ndim != 1:
            raise ValueError("batch indices must be 1-D")
        if len(np.unique(idx)) != len(idx):
            raise ValueError("batch contains duplicate indices")
        self.indices = idx

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self) -> Iterator[int]:
        return iter(int(i) for i in self.indices)


@dataclass
class EvalResult:
    accuracy: float
    auc: float | None
    mean_loss: float


@dataclass
class DatasetSplits:
    """Stratified split of one dataset.  ``reward_slice`` is a fixed small
    subset of ``valid`` used for step-level performance probes."""

    train: LabeledDataset
    valid: LabeledDataset
    reward_slice: LabeledDataset
    test: LabeledDataset


def _check_batch(dataset: LabeledDataset, batch: MiniBatch) -> Array:
    if len(batch) == 0:
        raise ValueError("empty batch")
    idx = batch.indices
    if idx.min() < 0 or idx.max() >= len(dataset):
        raise ValueError("batch index out of range")
    return idx


def _cross_entropy(logits: Array, labels: Array) -> Array:
    """Per-row -log p[label], computed through log-sum-exp for stability."""
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return lse - z[np.arange(len(labels)), labels]


def average_ranks(values: Array) -> Array:
    """1-based ranks; tied values share the average of their rank range."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=float)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def rank_auc(scores: Array, positives: Array) -> float | None:
    """Probability a random positive outscores a random negative.

    Computed from rank statistics; ties contribute one half.  Returns None
    when either class is missing from the slice.
    """
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = int(positives.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = average_ranks(np.asarray(scores, dtype=float))
    u = ranks[positives].sum() - 0.5 * n_pos * (n_pos + 1)
    return float(u / (n_pos * n_neg))


class Student:
    """Classifier with one-step batch training and deterministic scoring."""

    def __init__(self, kind: str, net: Mlp, num_classes: int, lr: float) -> None:
        self.kind = kind
        self.net = net
        self.num_classes = num_classes
        self.lr = lr
        self.opt = Sgd(lr)

    @property
    def feature_dim(self) -> int:
        return self.net.layer_dims[0]

    def scores(self, features: Array) -> Array:
        return self.net.forward(np.atleast_2d(features))

    def predict_proba(self, features: Array) -> Array:
        return softmax(self.scores(features))

    def predict(self, features: Array) -> Array:
        # argmax takes the first maximum, i.e. ties resolve to the lowest class id
        return np.argmax(self.scores(features), axis=1)

    def sample_loss(self, sample: Sample) -> float:
        logits = self.scores(sample.features[None, :])
        return float(_cross_entropy(logits, np.array([sample.label]))[0])

    def batch_eval(self, dataset: LabeledDataset, batch: MiniBatch) -> tuple[Array, Array]:
        """Per-sample losses and correctness flags; no parameters change."""
        idx = _check_batch(dataset, batch)
        logits = self.scores(dataset.features[idx])
        labels = dataset.labels[idx]
        losses = _cross_entropy(logits, labels)
        correct = np.argmax(logits, axis=1) == labels
        return losses, correct

    def train_on_batch(self, dataset: LabeledDataset, batch: MiniBatch) -> float:
        """One SGD step on the batch; returns the pre-step mean loss."""
        idx = _check_batch(dataset, batch)
        labels = dataset.labels[idx]
        if labels.max() >= self.num_classes:
            raise ValueError("batch label outside the student's class range")
        logits = self.net.forward(dataset.features[idx])
        losses = _cross_entropy(logits, labels)
        probs = softmax(logits)
        probs[np.arange(len(labels)), labels] -= 1.0
        self.net.backward(probs / len(labels))
        self.opt.step(self.net)
        return float(losses.mean())

    def accuracy(self, dataset: LabeledDataset) -> float:
        if len(dataset) == 0:
            raise ValueError("cannot score an empty dataset")
        return float(np.mean(self.predict(dataset.features) == dataset.labels))

    def evaluate(self, dataset: LabeledDataset) -> EvalResult:
        if len(dataset) == 0:
            raise ValueError("cannot evaluate an empty dataset")
        logits = self.scores(dataset.features)
        probs = softmax(logits)
        labels = dataset.labels
        acc = float(np.mean(np.argmax(logits, axis=1) == labels))
        loss = float(_cross_entropy(logits, labels).mean())
        if self.num_classes == 2:
            auc = rank_auc(probs[:, 1], labels == 1)
        else:
            per_class = [rank_auc(probs[:, c], labels == c) for c in range(self.num_classes)]
            usable = [a for a in per_class if a is not None]
            auc = float(np.mean(usable)) if usable else None
        return EvalResult(accuracy=acc, auc=auc, mean_loss=loss)

    def reinitialize(self, rng: np.random.Generator) -> None:
        """Fresh parameter draw plus a fresh optimizer; same architecture."""
        self.net.reinitialize(rng)
        self.opt = Sgd(self.lr)


def make_student(
    kind: str,
    feature_dim: int,
    num_classes: int,
    rng: np.random.Generator,
    hidden: int = 32,
    lr: float = 0.05,
) -> Student:
    if kind == "logistic":
        net = Mlp((feature_dim, num_classes), rng)
    elif kind == "mlp":
        net = Mlp((feature_dim, hidden, num_classes), rng)
    else:
        raise ValueError(f"unknown student kind {kind!r}")
    return Student(kind, net, num_classes, lr)
