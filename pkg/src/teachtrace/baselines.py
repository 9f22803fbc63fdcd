"""Baseline teachers and the ablation wiring.

Teacher kinds:

* ``kadt``        full model: tracer state, gated attention, weight ledger
* ``kadt_kt``     ablation: mean pooling, no ledger
* ``kadt_basic``  ablation: scalar hand-crafted state, dense reward
* ``l2t``         scalar state with a sparse threshold reward
* ``spl``         self-paced learning, no trained teacher
* ``random``      uniform sampling, no trained teacher

``random`` and ``spl`` have no teacher-training phase; the harness runs
them in the frozen phase only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agent import AgentNets, DenseReward, TeachingStack
from .ktrace import KnowledgeTracer
from .numerics import Adam, make_rng
from .pooling import GatedAttention
from .students import LabeledDataset, MiniBatch, Student

TEACHER_KINDS = ("kadt", "kadt_kt", "kadt_basic", "l2t", "spl", "random")
TRAINED_TEACHERS = ("kadt", "kadt_kt", "kadt_basic", "l2t")


def random_teach(dataset: LabeledDataset, batch_size: int, rng: np.random.Generator) -> MiniBatch:
    """Uniform draw over all samples, without replacement."""
    if not 1 <= batch_size <= len(dataset):
        raise ValueError("batch_size must lie in [1, dataset size]")
    return MiniBatch(np.sort(rng.choice(len(dataset), size=batch_size, replace=False)))


@dataclass
class SplSchedule:
    """Hardness threshold that grows multiplicatively per epoch."""

    threshold: float
    growth: float = 1.1
    epoch: int = 0

    def __post_init__(self) -> None:
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.growth <= 1.0:
            raise ValueError("growth must exceed 1 so the threshold increases strictly")

    def advance(self) -> None:
        self.threshold *= self.growth
        self.epoch += 1


def spl_filter(
    student: Student,
    dataset: LabeledDataset,
    schedule: SplSchedule,
    batch_size: int,
    rng: np.random.Generator,
) -> tuple[MiniBatch, bool]:
    """Batch of currently easy samples (loss <= threshold).

    Falls back to the ``batch_size`` easiest samples when the pool is too
    small; the flag reports whether the fallback fired.
    """
    if not 1 <= batch_size <= len(dataset):
        raise ValueError("batch_size must lie in [1, dataset size]")
    losses, _ = student.batch_eval(dataset, MiniBatch(np.arange(len(dataset))))
    pool = np.flatnonzero(losses <= schedule.threshold)
    if pool.size >= batch_size:
        picked = rng.choice(pool, size=batch_size, replace=False)
        return MiniBatch(np.sort(picked)), False
    easiest = np.argsort(losses, kind="stable")[:batch_size]
    return MiniBatch(np.sort(easiest)), True


def sparse_reward(p_t: float, threshold: float) -> float:
    """1 when performance strictly exceeds the threshold, else 0."""
    if not 0.0 <= p_t <= 1.0:
        raise ValueError(f"p_t={p_t} outside [0, 1]")
    return 1.0 if p_t > threshold else 0.0


class SparseReward:
    """Threshold reward; the threshold tracks the best past-episode
    performance seen while the teacher trains."""

    def __init__(self, threshold: float = 0.0) -> None:
        self.threshold = threshold

    def __call__(self, p_t: float, p_prev: float) -> float:
        return sparse_reward(p_t, self.threshold)

    def note_episode(self, best_performance: float) -> None:
        self.threshold = max(self.threshold, best_performance)


@dataclass
class StackSettings:
    """Architecture and learning-rate knobs for building a teaching stack."""

    num_concepts: int = 4
    key_dim: int = 50
    value_dim: int = 50
    attention_width: int = 32
    hidden: tuple[int, ...] = (64, 64)
    gamma: float = 0.99
    tau: float = 0.001
    logit_bound: float = 0.5
    reward_deadband: float = 0.01
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    attention_lr: float = 1e-3
    kt_lr: float = 1e-2
    spl_threshold: float = 0.5
    spl_growth: float = 1.1


def make_stack(
    kind: str,
    train: LabeledDataset,
    settings: StackSettings,
    seed: int,
    batch_size: int = 32,
) -> TeachingStack:
    """Assemble the teacher-side components for one seeded run.

    ``batch_size`` only matters for the teacher kinds that draw their own
    batches (random, spl).
    """
    if kind not in TEACHER_KINDS:
        raise ValueError(f"unknown teacher kind {kind!r}; expected one of {TEACHER_KINDS}")
    num_classes = train.num_classes
    dense = DenseReward(settings.reward_deadband)
    # the policy's logit head is centered on the empirical class mix, so an
    # untrained actor samples like draws from the data and the bounded head
    # explores around that point
    counts = np.bincount(train.labels, minlength=num_classes).astype(float)
    prior_logits = np.log(counts / counts.sum())

    if kind in ("kadt", "kadt_kt"):
        tracer = KnowledgeTracer(
            len(train),
            settings.num_concepts,
            key_dim=settings.key_dim,
            value_dim=settings.value_dim,
            rng=make_rng(seed, 10),
        )
        attention = (
            GatedAttention(settings.num_concepts, width=settings.attention_width, rng=make_rng(seed, 11))
            if kind == "kadt"
            else None
        )
        if attention is not None:
            # zero score head: pooling starts exactly uniform (the mean-pool
            # limit) and only departs from it as the head learns, so the
            # ledger is not seeded with an arbitrary random tilt
            attention.params["c"].fill(0.0)
        nets = AgentNets(
            num_classes * settings.num_concepts,
            num_classes,
            make_rng(seed, 12),
            hidden=settings.hidden,
            gamma=settings.gamma,
            tau=settings.tau,
            logit_bound=settings.logit_bound,
            prior_logits=prior_logits,
        )
        return TeachingStack(
            kind=kind,
            state_kind="knowledge",
            reward_policy=dense,
            nets=nets,
            actor_opt=Adam(settings.actor_lr),
            critic_opt=Adam(settings.critic_lr),
            tracer=tracer,
            kt_opt=Adam(settings.kt_lr),
            attention=attention,
            attention_opt=Adam(settings.attention_lr) if attention is not None else None,
            use_ledger=kind == "kadt",
        )

    if kind in ("kadt_basic", "l2t"):
        nets = AgentNets(
            3,  # scalar state: batch loss, probe accuracy, episode progress
            num_classes,
            make_rng(seed, 12),
            hidden=settings.hidden,
            gamma=settings.gamma,
            tau=settings.tau,
            logit_bound=settings.logit_bound,
            prior_logits=prior_logits,
        )
        return TeachingStack(
            kind=kind,
            state_kind="scalar",
            reward_policy=dense if kind == "kadt_basic" else SparseReward(),
            nets=nets,
            actor_opt=Adam(settings.actor_lr),
            critic_opt=Adam(settings.critic_lr),
        )

    if kind == "spl":
        schedule = SplSchedule(settings.spl_threshold, settings.spl_growth)

        def draw_spl(student: Student, rng: np.random.Generator):
            batch, fell_back = spl_filter(student, train, schedule, batch_size, rng)
            return batch, "spl_fallback" if fell_back else ""

        return TeachingStack(
            kind=kind,
            state_kind="none",
            reward_policy=dense,
            spl=schedule,
            draw_batch=draw_spl,
        )

    def draw_random(student: Student, rng: np.random.Generator):
        return random_teach(train, batch_size, rng), ""

    return TeachingStack(kind="random", state_kind="none", reward_policy=dense, draw_batch=draw_random)


def ablation_variant(
    variant: str,
    train: LabeledDataset,
    settings: StackSettings,
    seed: int,
    batch_size: int = 32,
) -> TeachingStack:
    """Map an ablation name to its stack: basic, kt, or full."""
    mapping = {"basic": "kadt_basic", "kt": "kadt_kt", "full": "kadt"}
    if variant not in mapping:
        raise ValueError(f"unknown ablation variant {variant!r}; expected one of {sorted(mapping)}")
    return make_stack(mapping[variant], train, settings, seed, batch_size)
