"""Gradient-checking harness for every manually differentiated update.

Each loss function here returns a scalar and leaves the matching analytic
gradients in the checked block, mirroring exactly how the corresponding
update computes them.  Central differences only re-run the pure forward
passes, so they are an independent check of the hand-derived chains.
:func:`standard_suite` builds small instances of every block and runs the
whole battery for one seed.
"""

from __future__ import annotations

import numpy as np

from .agent import AgentNets, Transition
from .ktrace import KnowledgeTracer
from .numerics import GradCheckReport, finite_diff_check, make_rng, softmax
from .pooling import GatedAttention, pool_backward, pool_class
from .students import LabeledDataset, MiniBatch, make_student


def stacked_states(nets: AgentNets, transitions, attention):
    """States with freshly re-pooled rows; returns (S, per-transition pools)."""
    sd, od = nets.state_dim, nets.action_dim
    width = sd // od
    pools = [dict() for _ in transitions]
    S = np.empty((len(transitions), sd))
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
    return S, pools


def critic_td_loss(critic, inputs):
    """Mean squared TD error against fixed targets; fills critic grads."""
    nets, transitions = inputs
    n = len(transitions)
    S = np.stack([t.state for t in transitions])
    A = np.stack([t.action for t in transitions])
    R = np.array([t.reward for t in transitions])
    S2 = np.stack([t.next_state for t in transitions])
    A2 = softmax(nets.target_actor.forward(S2) + nets.prior_logits)
    Q2 = nets.target_critic.forward(np.concatenate([S2, A2], axis=1))[:, 0]
    targets = R + nets.gamma * Q2
    Q = critic.forward(np.concatenate([S, A], axis=1))[:, 0]
    resid = Q - targets
    critic.backward((2.0 * resid / n)[:, None])
    return float(np.mean(resid**2))


def actor_policy_loss(actor, inputs):
    """Negated mean critic score of the actor's actions; fills actor grads."""
    nets, transitions = inputs
    n = len(transitions)
    S = np.stack([t.state for t in transitions])
    A = softmax(actor.forward(S) + nets.prior_logits)
    Q = nets.critic.forward(np.concatenate([S, A], axis=1))
    nets.critic.zero_grads()
    dSA = nets.critic.backward(np.full((n, 1), -1.0 / n))
    nets.critic.zero_grads()
    dA = dSA[:, nets.state_dim:]
    dlogits = A * (dA - np.sum(dA * A, axis=1, keepdims=True))
    actor.backward(dlogits)
    return -float(Q.mean())


def attention_policy_loss(attention, inputs):
    """Same objective, differentiated w.r.t. the pooling parameters.

    The gradient reaches the attention weights through both the critic's
    state input and the actor's action.
    """
    nets, transitions = inputs
    n = len(transitions)
    sd, od = nets.state_dim, nets.action_dim
    width = sd // od
    S, pools = stacked_states(nets, transitions, attention)
    A = softmax(nets.policy_logits(S))
    Q = nets.critic.forward(np.concatenate([S, A], axis=1))
    nets.critic.zero_grads()
    dSA = nets.critic.backward(np.full((n, 1), -1.0 / n))
    nets.critic.zero_grads()
    dS = dSA[:, :sd]
    dA = dSA[:, sd:]
    dlogits = A * (dA - np.sum(dA * A, axis=1, keepdims=True))
    nets.actor.zero_grads()
    dS_actor = nets.actor.backward(dlogits)
    nets.actor.zero_grads()
    total = dS + dS_actor
    for i, per_class in enumerate(pools):
        rows = total[i].reshape(od, width)
        for y, res in per_class.items():
            pool_backward(attention, res, rows[y])
    return -float(Q.mean())


def tracer_chain_loss(tracer, inputs):
    """RMSE of the sequential read/write chain; fills tracer grads."""
    batch, losses, errors, memory = inputs
    return tracer.chain_loss_and_grads(batch, losses, errors, memory=memory)


def student_ce_loss(net, inputs):
    """Mean cross-entropy of a student network; fills its grads."""
    features, labels = inputs
    logits = net.forward(features)
    z = logits - logits.max(axis=1, keepdims=True)
    losses = np.log(np.exp(z).sum(axis=1)) - z[np.arange(len(labels)), labels]
    probs = softmax(logits)
    probs[np.arange(len(labels)), labels] -= 1.0
    net.backward(probs / len(labels))
    return float(losses.mean())


def _random_transitions(rng, nets, n, group_width, with_groups):
    out = []
    for _ in range(n):
        groups = None
        if with_groups:
            groups = {y: rng.standard_normal((3, group_width)) for y in range(nets.action_dim)}
        a = rng.random(nets.action_dim)
        out.append(
            Transition(
                state=rng.standard_normal(nets.state_dim),
                action=a / a.sum(),
                reward=float(rng.standard_normal()),
                next_state=rng.standard_normal(nets.state_dim),
                groups=groups,
            )
        )
    return out


def standard_suite(seed: int, h: float = 1e-5, tol: float = 1e-3) -> list[tuple[str, GradCheckReport]]:
    """Run every gradient check once on small, seeded instances."""
    results = []

    tracer = KnowledgeTracer(8, 4, key_dim=5, value_dim=5, rng=make_rng(seed, 1))
    rng = make_rng(seed, 2)
    batch = np.sort(rng.choice(8, size=5, replace=False))
    losses = rng.uniform(0.0, 1.5, size=5)
    errors = rng.integers(0, 2, size=5)
    memory = tracer.value_memory.copy()
    results.append(
        ("tracer_chain", finite_diff_check(tracer, (batch, losses, errors, memory), tracer_chain_loss, h=h, tol=tol))
    )

    nets = AgentNets(8, 2, make_rng(seed, 3), hidden=(6,))
    plain = _random_transitions(make_rng(seed, 4), nets, 5, group_width=4, with_groups=False)
    results.append(("critic", finite_diff_check(nets.critic, (nets, plain), critic_td_loss, h=h, tol=tol)))
    results.append(("actor", finite_diff_check(nets.actor, (nets, plain), actor_policy_loss, h=h, tol=tol)))

    attention = GatedAttention(4, width=5, rng=make_rng(seed, 5))
    grouped = _random_transitions(make_rng(seed, 6), nets, 4, group_width=4, with_groups=True)
    results.append(
        ("attention", finite_diff_check(attention, (nets, grouped), attention_policy_loss, h=h, tol=tol))
    )

    data_rng = make_rng(seed, 7)
    labels = np.arange(10) % 2
    features = data_rng.standard_normal((10, 3)) + labels[:, None]
    for kind in ("logistic", "mlp"):
        student = make_student(kind, 3, 2, make_rng(seed, 8), hidden=5)
        results.append(
            (f"student_{kind}", finite_diff_check(student.net, (features, labels), student_ce_loss, h=h, tol=tol))
        )
    return results
