"""Deterministic actor-critic teacher and the teaching loops.

The actor maps the pooled knowledge state to per-class sampling proportions
(softmax over its logits, so actions always lie on the simplex).  The
critic scores state-action pairs; target copies of both, moved by soft
updates, stabilize the TD targets.  Exploration adds temporally correlated
noise to the pre-softmax logits.

Two loops share one body: :func:`run_training` (phase 1) explores, fills
the replay buffer, and updates every trainable part; and
:func:`run_frozen_policy` (phase 2) drives a fresh student with the learned
policy while leaving all teacher parameters untouched.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ktrace import KnowledgeTracer
from .logs import EpisodeRecord, MetricsLog, StepRecord
from .numerics import Array, DifferentiableBlock, Mlp, make_rng, softmax
from .pooling import (
    GatedAttention,
    KnowledgeState,
    WeightLedger,
    build_state,
    pool_backward,
    pool_class,
)
from .students import DatasetSplits, LabeledDataset, MiniBatch, Student


@dataclass(frozen=True)
class Transition:
    """One teaching interaction.  ``groups`` keeps the per-class knowledge
    vectors behind the state's freshly pooled rows, so policy updates can
    re-pool the state under the current attention parameters."""

    state: Array
    action: Array
    reward: float
    next_state: Array
    groups: dict[int, Array] | None = None


class ReplayBuffer:
    """Fixed-capacity ring; the oldest transition is evicted first."""

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self._items: list[Transition] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, item: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
        self._next = (self._next + 1) % self.capacity

    def sample(self, rng: np.random.Generator, size: int) -> list[Transition]:
        if size > len(self._items):
            raise ValueError("not enough transitions buffered")
        idx = rng.choice(len(self._items), size=size, replace=False)
        return [self._items[i] for i in idx]


class OuNoise:
    """Mean-reverting exploration noise.

    x <- x + theta * (beta - x) * dt + sigma * sqrt(dt) * xi
    """

    def __init__(
        self,
        dim: int,
        theta: float = 0.15,
        sigma: float = 0.2,
        beta: float = 0.0,
        dt: float = 1.0,
    ) -> None:
        if dim < 1:
            raise ValueError("dim must be positive")
        if theta < 0 or sigma < 0 or dt <= 0:
            raise ValueError("bad noise parameters")
        self.dim = int(dim)
        self.theta = theta
        self.sigma = sigma
        self.beta = beta
        self.dt = dt
        self.state = np.full(self.dim, beta, dtype=float)

    def reset(self) -> None:
        self.state = np.full(self.dim, self.beta, dtype=float)

    def step(self, rng: np.random.Generator | None = None) -> Array:
        drift = self.theta * (self.beta - self.state) * self.dt
        if self.sigma > 0:
            if rng is None:
                raise ValueError("rng required when sigma > 0")
            shock = self.sigma * np.sqrt(self.dt) * rng.standard_normal(self.dim)
        else:
            shock = 0.0
        self.state = self.state + drift + shock
        return self.state.copy()


class AgentNets:
    """Actor, critic, and their target copies (initialized equal)."""

    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        rng: np.random.Generator,
        hidden: tuple[int, ...] = (64, 64),
        gamma: float = 0.99,
        tau: float = 0.001,
        logit_bound: float = 0.5,
        prior_logits: Array | None = None,
    ) -> None:
        if not 0 <= gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0 < tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if logit_bound <= 0:
            raise ValueError("logit_bound must be positive")
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.gamma = gamma
        self.tau = tau
        self.logit_bound = float(logit_bound)
        if prior_logits is None:
            self.prior_logits = np.zeros(self.action_dim)
        else:
            self.prior_logits = np.asarray(prior_logits, dtype=float).reshape(-1).copy()
            if self.prior_logits.shape[0] != self.action_dim:
                raise ValueError("prior_logits width must equal action_dim")
        # bounded head centered on the prior logits: an unbounded head lets
        # the softmax saturate, after which its Jacobian vanishes and the
        # policy can never be steered out of a corner again; the bound also
        # caps how far from the data's own class mix the deterministic
        # policy can commit, so a policy at the rails still yields usable
        # mini-batches
        self.actor = Mlp(
            (state_dim, *hidden, action_dim), rng, out_activation="tanh", out_scale=logit_bound
        )
        self.critic = Mlp((state_dim + action_dim, *hidden, 1), rng)
        self.target_actor = self.actor.clone()
        self.target_critic = self.critic.clone()

    def policy_logits(self, states: Array, target: bool = False) -> Array:
        """Pre-softmax logits of the (target) policy, prior shift included."""
        net = self.target_actor if target else self.actor
        return net.forward(states) + self.prior_logits


def select_action(
    nets: AgentNets,
    state: Array,
    noise: OuNoise | None = None,
    rng: np.random.Generator | None = None,
    explore: bool = False,
) -> Array:
    """Per-class sampling proportions for the given state.

    Exploration perturbs the pre-softmax logits with the noise process, so
    the returned action still lies on the simplex.
    """
    s = np.asarray(state, dtype=float).reshape(-1)
    if s.shape[0] != nets.state_dim:
        raise ValueError(f"state width {s.shape[0]} != expected {nets.state_dim}")
    if not np.all(np.isfinite(s)):
        raise ValueError("state contains non-finite entries")
    logits = nets.policy_logits(s[None, :])[0]
    if explore:
        if noise is None:
            raise ValueError("exploration requires a noise process")
        logits = logits + noise.step(rng)
    return softmax(logits)


def performance_delta_reward(p_t: float, p_prev: float, deadband: float = 0.01) -> float:
    """Performance change, zeroed inside the deadband to suppress jitter."""
    for name, p in (("p_t", p_t), ("p_prev", p_prev)):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"{name}={p} outside [0, 1]")
    if deadband < 0:
        raise ValueError("deadband must be nonnegative")
    delta = p_t - p_prev
    return 0.0 if abs(delta) <= deadband else float(delta)


class DenseReward:
    """Step reward: deadbanded change of reward-slice accuracy."""

    def __init__(self, deadband: float = 0.01) -> None:
        self.deadband = deadband

    def __call__(self, p_t: float, p_prev: float) -> float:
        return performance_delta_reward(p_t, p_prev, self.deadband)

    def note_episode(self, best_performance: float) -> None:
        pass


def apportion(action: Array, class_sizes, batch_size: int) -> Array:
    """Integer per-class quotas for a simplex action, largest remainder first.

    Quotas never exceed class sizes; surplus moves to the classes with the
    largest unmet remainder (ties resolve to the lowest class id).
    """
    action = np.asarray(action, dtype=float)
    sizes = np.asarray(class_sizes, dtype=int)
    if action.shape != sizes.shape:
        raise ValueError("action and class sizes misaligned")
    if np.any(action < -1e-9) or abs(action.sum() - 1.0) > 1e-6:
        raise ValueError("action must lie on the probability simplex")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    if batch_size > sizes.sum():
        raise ValueError("batch_size exceeds the number of samples")
    ideal = batch_size * np.clip(action, 0.0, None)
    quotas = np.minimum(np.floor(ideal).astype(int), sizes)
    while quotas.sum() < batch_size:
        room = quotas < sizes
        remainders = np.where(room, ideal - quotas, -np.inf)
        pick = int(np.argmax(remainders))
        quotas[pick] += 1
    return quotas


def weighted_sample(
    action: Array,
    dataset: LabeledDataset,
    batch_size: int,
    rng: np.random.Generator,
    ledger: WeightLedger | None = None,
) -> MiniBatch:
    """Draw a batch honoring the action's class proportions.

    Within a class, draws are without replacement, uniform by default or
    proportional to the ledger's renormalized weights when one is given.
    """
    sizes = [len(dataset.by_class[c]) for c in range(dataset.num_classes)]
    quotas = apportion(action, sizes, batch_size)
    parts = []
    for c in range(dataset.num_classes):
        q = int(quotas[c])
        if q == 0:
            continue
        if ledger is None:
            members, probs = dataset.by_class[c], None
        else:
            members, probs = ledger.class_probabilities(c)
        picked = rng.choice(members, size=q, replace=False, p=probs)
        parts.append(np.sort(picked))
    return MiniBatch(np.concatenate(parts))


def critic_update(nets: AgentNets, transitions: list[Transition], opt) -> float:
    """One optimizer step on the TD loss; returns the pre-step loss.

    Targets come from the target networks:
    y = r + gamma * Q'(s', actor'(s')).
    """
    n = len(transitions)
    if n == 0:
        raise ValueError("empty update batch")
    S = np.stack([t.state for t in transitions])
    A = np.stack([t.action for t in transitions])
    R = np.array([t.reward for t in transitions])
    S2 = np.stack([t.next_state for t in transitions])
    A2 = softmax(nets.policy_logits(S2, target=True))
    Q2 = nets.target_critic.forward(np.concatenate([S2, A2], axis=1))[:, 0]
    targets = R + nets.gamma * Q2
    Q = nets.critic.forward(np.concatenate([S, A], axis=1))[:, 0]
    resid = Q - targets
    loss = float(np.mean(resid**2))
    nets.critic.zero_grads()
    nets.critic.backward((2.0 * resid / n)[:, None])
    opt.step(nets.critic)
    return loss


def actor_update(
    nets: AgentNets,
    transitions: list[Transition],
    opt,
    attention: GatedAttention | None = None,
    attention_opt=None,
) -> float:
    """Ascend the critic's score of the actor's actions; returns mean Q.

    When attention parameters are given, each stored state's freshly pooled
    rows are recomputed from the transition's knowledge groups, so the
    objective's gradient also reaches the attention weights (through both
    the state input of the critic and the actor's action).  The critic
    itself provides gradients but is never modified here.
    """
    n = len(transitions)
    if n == 0:
        raise ValueError("empty update batch")
    sd, od = nets.state_dim, nets.action_dim
    width = sd // od

    pools: list[dict[int, object]] = [dict() for _ in range(n)]
    S = np.empty((n, sd))
    for i, t in enumerate(transitions):
        s = t.state.copy()
        if attention is not None and t.groups:
            mat = s.reshape(od, width)
            for y, F in t.groups.items():
                res = pool_class(attention, F)
                mat[y] = res.pooled
                pools[i][y] = res
            s = mat.reshape(-1)
        S[i] = s

    A = softmax(nets.policy_logits(S))
    Q = nets.critic.forward(np.concatenate([S, A], axis=1))
    objective = float(Q.mean())

    # ascent on mean Q == descent on its negation
    nets.critic.zero_grads()
    dSA = nets.critic.backward(np.full((n, 1), -1.0 / n))
    nets.critic.zero_grads()  # discard: the critic is a fixed scorer here
    dS = dSA[:, :sd]
    dA = dSA[:, sd:]
    dlogits = A * (dA - np.sum(dA * A, axis=1, keepdims=True))
    nets.actor.zero_grads()
    dS_actor = nets.actor.backward(dlogits)
    opt.step(nets.actor)

    if attention is not None and attention_opt is not None:
        total = dS + dS_actor
        attention.zero_grads()
        touched = False
        for i, per_class in enumerate(pools):
            if not per_class:
                continue
            rows = total[i].reshape(od, width)
            for y, res in per_class.items():
                pool_backward(attention, res, rows[y])
                touched = True
        if touched:
            attention_opt.step(attention)
    return objective


def soft_update_targets(nets: AgentNets) -> None:
    """theta_target <- tau * theta + (1 - tau) * theta_target, both nets."""
    for src, dst in ((nets.actor, nets.target_actor), (nets.critic, nets.target_critic)):
        for name, p in src.params.items():
            tp = dst.params[name]
            tp *= 1.0 - nets.tau
            tp += nets.tau * p


def blocks_checksum(*blocks: DifferentiableBlock | None) -> str:
    """SHA-256 over the parameters of the given blocks, order-sensitive."""
    digest = hashlib.sha256()
    for block in blocks:
        if block is not None:
            digest.update(block.param_bytes())
    return digest.hexdigest()


@dataclass
class LoopSettings:
    """Knobs of the teaching loop itself (network sizes live elsewhere)."""

    episodes: int
    steps: int
    batch_size: int
    replay_batch: int = 64
    replay_capacity: int = 10_000
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    ou_beta: float = 0.0
    ou_dt: float = 1.0
    # value estimates must stay ahead of the policy, so the critic may take
    # several steps per interaction while the actor moves less often
    critic_updates: int = 1
    actor_delay: int = 1

    def __post_init__(self) -> None:
        if min(self.episodes, self.steps, self.batch_size, self.replay_batch) < 1:
            raise ValueError("loop sizes must be positive")
        if self.critic_updates < 1 or self.actor_delay < 1:
            raise ValueError("update cadence values must be positive")


@dataclass
class TeachingStack:
    """Everything teacher-side for one run: networks, tracer, pooling,
    ledger, and the reward rule.  Baseline kinds leave most fields unset and
    provide ``draw_batch`` instead."""

    kind: str
    state_kind: str  # "knowledge", "scalar" or "none"
    reward_policy: object
    nets: AgentNets | None = None
    actor_opt: object = None
    critic_opt: object = None
    tracer: KnowledgeTracer | None = None
    kt_opt: object = None
    attention: GatedAttention | None = None
    attention_opt: object = None
    use_ledger: bool = False
    draw_batch: Callable[[Student, np.random.Generator], tuple[MiniBatch, str]] | None = None
    spl: object = None

    def checksum(self) -> str:
        """Digest of all learned teacher parameters.  The tracer's value
        memory is transient episode state and deliberately excluded."""
        blocks = []
        if self.nets is not None:
            blocks += [self.nets.actor, self.nets.critic, self.nets.target_actor, self.nets.target_critic]
        blocks += [self.attention, self.tracer]
        return blocks_checksum(*blocks)


def _knowledge_state(
    stack: TeachingStack,
    train: LabeledDataset,
    batch: MiniBatch,
    prev: KnowledgeState,
    interaction: int,
):
    """Fresh reads of the batch, pooled per class into a new state."""
    F, _ = stack.tracer.read_batch(batch.indices)
    labels = train.labels[batch.indices]
    pooled: dict[int, Array] = {}
    groups: dict[int, Array] = {}
    alphas: dict[int, float] = {}
    for y in np.unique(labels):
        rows = np.flatnonzero(labels == y)
        res = pool_class(stack.attention, F[rows])
        pooled[int(y)] = res.pooled
        groups[int(y)] = F[rows].copy()
        for pos, alpha in zip(rows, res.alphas):
            alphas[int(batch.indices[pos])] = float(alpha)
    return build_state(prev, pooled, interaction), groups, alphas


def _concept_accuracy(student: Student, dataset: LabeledDataset) -> tuple[float, ...] | None:
    if dataset.concepts is None:
        return None
    preds = student.predict(dataset.features)
    correct = preds == dataset.labels
    out = []
    for concept in range(int(dataset.concepts.max()) + 1):
        mask = dataset.concepts == concept
        out.append(float(correct[mask].mean()) if mask.any() else float("nan"))
    return tuple(out)


def _realized_proportions(train: LabeledDataset, batch: MiniBatch) -> Array:
    counts = np.bincount(train.labels[batch.indices], minlength=train.num_classes)
    return counts / len(batch)


def _teach(
    settings: LoopSettings,
    stack: TeachingStack,
    splits: DatasetSplits,
    student: Student,
    seed: int,
    log: MetricsLog,
    *,
    phase: int,
    learn: bool,
) -> None:
    train = splits.train
    num_classes = train.num_classes
    rng_ou = make_rng(seed, phase, 1)
    rng_sampler = make_rng(seed, phase, 2)
    rng_replay = make_rng(seed, phase, 3)
    explore = learn and stack.nets is not None
    noise = (
        OuNoise(num_classes, settings.ou_theta, settings.ou_sigma, settings.ou_beta, settings.ou_dt)
        if explore
        else None
    )
    buffer = ReplayBuffer(settings.replay_capacity) if explore else None
    ledger = WeightLedger(train) if stack.use_ledger else None
    uniform = np.full(num_classes, 1.0 / num_classes)
    interaction = 0

    for ep in range(1, settings.episodes + 1):
        if noise is not None:
            noise.reset()
        student.reinitialize(make_rng(seed, phase, 4, ep))
        if stack.tracer is not None:
            stack.tracer.reset_value_memory(make_rng(seed, phase, 5, ep))
        if ledger is not None:
            ledger.seed_uniform()

        p_prev = student.accuracy(splits.reward_slice)
        best_p = p_prev
        prev_batch: MiniBatch | None = None
        prev_alphas: dict[int, float] | None = None
        state = None
        groups: dict[int, Array] | None = None
        if stack.state_kind == "knowledge":
            # read-only warm-up batch, class-balanced; never trained on
            seed_batch = weighted_sample(uniform, train, settings.batch_size, make_rng(seed, phase, 6, ep))
            state, groups, _ = _knowledge_state(
                stack, train, seed_batch, KnowledgeState.initial(num_classes, stack.tracer.num_concepts), 0
            )
        elif stack.state_kind == "scalar":
            probe_rng = make_rng(seed, phase, 6, ep)
            probe = MiniBatch(probe_rng.choice(len(train), size=min(settings.batch_size, len(train)), replace=False))
            probe_losses, _ = student.batch_eval(train, probe)
            state = np.array([float(probe_losses.mean()), p_prev, 0.0])

        for t in range(1, settings.steps + 1):
            try:
                note = ""
                if stack.nets is not None:
                    flat = state.flat() if isinstance(state, KnowledgeState) else state
                    action = select_action(stack.nets, flat, noise, rng_ou, explore=explore)
                else:
                    action = None
                if ledger is not None and ledger.interactions >= 1 and prev_batch is not None:
                    ledger.update(prev_batch, prev_alphas)
                if stack.nets is not None:
                    batch = weighted_sample(action, train, settings.batch_size, rng_sampler, ledger=ledger)
                else:
                    batch, note = stack.draw_batch(student, rng_sampler)

                losses, correct = student.batch_eval(train, batch)
                train_loss = float(losses.mean())
                student.train_on_batch(train, batch)
                p_t = student.accuracy(splits.reward_slice)
                reward = float(stack.reward_policy(p_t, p_prev))

                kt_rmse = None
                if stack.tracer is not None:
                    pred_errors = (~correct).astype(int)
                    if learn:
                        kt_rmse = stack.tracer.train_step(batch, losses, pred_errors, stack.kt_opt)
                    else:
                        # policy frozen: memory still absorbs outcomes, but
                        # no parameter moves
                        _, est = stack.tracer.read_batch(batch.indices)
                        kt_rmse = float(np.sqrt(np.mean((est - losses) ** 2)))
                        for i, err in zip(batch.indices, pred_errors):
                            stack.tracer.write(int(i), int(err))

                next_groups = None
                next_alphas = None
                if stack.state_kind == "knowledge":
                    next_state, next_groups, next_alphas = _knowledge_state(stack, train, batch, state, t)
                elif stack.state_kind == "scalar":
                    next_state = np.array([train_loss, p_t, t / settings.steps])
                else:
                    next_state = None

                if buffer is not None:
                    flat = state.flat() if isinstance(state, KnowledgeState) else state.copy()
                    nflat = next_state.flat() if isinstance(next_state, KnowledgeState) else next_state.copy()
                    buffer.push(Transition(state=flat, action=action.copy(), reward=reward, next_state=nflat, groups=groups))
                    interaction += 1
                    if len(buffer) >= settings.replay_batch:
                        for _ in range(settings.critic_updates):
                            replay = buffer.sample(rng_replay, settings.replay_batch)
                            critic_update(stack.nets, replay, stack.critic_opt)
                        if interaction % settings.actor_delay == 0:
                            actor_update(stack.nets, replay, stack.actor_opt, stack.attention, stack.attention_opt)
                        soft_update_targets(stack.nets)

                logged_action = action if action is not None else _realized_proportions(train, batch)
                log.log_step(
                    StepRecord(
                        phase=phase,
                        episode=ep,
                        step=t,
                        action=tuple(float(a) for a in logged_action),
                        reward=reward,
                        performance=p_t,
                        train_loss=train_loss,
                        kt_rmse=kt_rmse,
                        note=note,
                    )
                )
                state = next_state
                groups = next_groups
                prev_alphas = next_alphas
                prev_batch = batch
                p_prev = p_t
                best_p = max(best_p, p_t)
                if ledger is not None:
                    ledger.complete_interaction()
            except Exception as exc:
                raise RuntimeError(f"phase {phase} episode {ep} step {t} failed: {exc}") from exc

        if learn:
            stack.reward_policy.note_episode(best_p)
        if stack.spl is not None:
            stack.spl.advance()
        valid_res = student.evaluate(splits.valid)
        test_res = student.evaluate(splits.test) if phase == 2 else None
        log.log_episode(
            EpisodeRecord(
                phase=phase,
                episode=ep,
                valid_accuracy=valid_res.accuracy,
                valid_auc=valid_res.auc,
                test_accuracy=None if test_res is None else test_res.accuracy,
                test_auc=None if test_res is None else test_res.auc,
                concept_accuracy=_concept_accuracy(student, splits.valid),
            )
        )


def run_training(
    settings: LoopSettings,
    stack: TeachingStack,
    splits: DatasetSplits,
    student: Student,
    seed: int,
    log: MetricsLog,
) -> None:
    """Phase 1: train the teacher while repeatedly teaching fresh students."""
    _teach(settings, stack, splits, student, seed, log, phase=1, learn=True)


def run_frozen_policy(
    settings: LoopSettings,
    stack: TeachingStack,
    splits: DatasetSplits,
    student: Student,
    seed: int,
    log: MetricsLog,
) -> None:
    """Phase 2: teach with the frozen policy; teacher parameters must not move."""
    before = stack.checksum()
    _teach(settings, stack, splits, student, seed, log, phase=2, learn=False)
    after = stack.checksum()
    if before != after:
        raise AssertionError("teacher parameters changed during the frozen phase")
