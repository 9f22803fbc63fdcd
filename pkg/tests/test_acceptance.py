"""Acceptance gate: one test per release criterion.

Each test prints a single PASS line (visible with -s or in failure output) so
the gate can be read as a checklist.  Oracles are independent of the library
code: explicit Python loops, closed forms, or Monte-Carlo estimates.
"""

import filecmp
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from teachtrace.agent import (
    AgentNets,
    OuNoise,
    performance_delta_reward,
    select_action,
    soft_update_targets,
    weighted_sample,
)
from teachtrace.gradcheck import standard_suite
from teachtrace.harness import ExperimentConfig, SyntheticSpec, phase2_summary, run_seed
from teachtrace.ktrace import KnowledgeTracer
from teachtrace.logs import MetricsLog
from teachtrace.numerics import Adam, make_rng
from teachtrace.students import LabeledDataset


def _report(criterion: str, detail: str) -> None:
    print(f"[{criterion}] PASS  {detail}")


# 1 ------------------------------------------------------------------------


def test_criterion_01_gradient_fidelity():
    worst = 0.0
    for seed in range(10):
        for name, report in standard_suite(seed, h=1e-5, tol=1e-3):
            assert report.passed, f"seed {seed} {name}: {report.max_rel_err:.3e} at {report.worst}"
            worst = max(worst, report.max_rel_err)
    _report("criterion 1", f"6 blocks x 10 seeds, worst rel err {worst:.2e} <= 1e-3")


# 2 ------------------------------------------------------------------------


def _loop_write_oracle(tracer, memory, sample_index, pred_error):
    """Gated memory update recomputed slot by slot with plain loops."""
    p = tracer.params
    n, N = tracer.num_samples, tracer.num_concepts
    dk, dv = tracer.key_dim, tracer.value_dim
    u = [float(p["A"][sample_index][t]) for t in range(dk)]
    scores = [sum(float(p["key"][k][t]) * u[t] for t in range(dk)) for k in range(N)]
    m = max(scores)
    exps = [math.exp(s - m) for s in scores]
    w = [e / sum(exps) for e in exps]
    r = [sum(w[k] * float(memory[k][d]) for k in range(N)) for d in range(dv)]
    x = r + u
    f = [
        math.tanh(sum(float(p["W1"][q][k]) * x[q] for q in range(dv + dk)) + float(p["b1"][k]))
        for k in range(N)
    ]
    v = f + [float(p["B"][sample_index + pred_error * n][d]) for d in range(dv)]
    e = [
        1.0 / (1.0 + math.exp(-(sum(float(p["We"][q][d]) * v[q] for q in range(N + dv)) + float(p["be"][d]))))
        for d in range(dv)
    ]
    a = [
        math.tanh(sum(float(p["Wa"][q][d]) * v[q] for q in range(N + dv)) + float(p["ba"][d]))
        for d in range(dv)
    ]
    out = np.empty((N, dv))
    for k in range(N):
        for d in range(dv):
            out[k][d] = float(memory[k][d]) * (1.0 - w[k] * e[d]) + w[k] * a[d]
    return out


def test_criterion_02_memory_update_oracle():
    tracer = KnowledgeTracer(20, 4, key_dim=5, value_dim=6, rng=make_rng(11))
    rng = make_rng(12)
    worst = 0.0
    for _ in range(1000):
        i = int(rng.integers(tracer.num_samples))
        err = int(rng.integers(2))
        expected = _loop_write_oracle(tracer, tracer.value_memory, i, err)
        tracer.write(i, err)
        worst = max(worst, float(np.max(np.abs(tracer.value_memory - expected))))
        assert worst <= 1e-10
    _report("criterion 2", f"1000 randomized writes, max abs dev {worst:.2e} <= 1e-10")


# 3 ------------------------------------------------------------------------


def test_criterion_03_reward_unit_table():
    assert performance_delta_reward(0.80, 0.75, 0.01) == pytest.approx(0.05, abs=1e-12)
    assert performance_delta_reward(0.755, 0.75, 0.01) == 0.0
    assert performance_delta_reward(0.70, 0.75, 0.01) == pytest.approx(-0.05, abs=1e-12)
    rng = make_rng(13)
    for _ in range(100):
        p = float(rng.uniform(0, 1))
        d = float(rng.uniform(0, 0.1))
        assert performance_delta_reward(p, p, d) == 0.0
    _report("criterion 3", "3 table cases exact; reward(p,p,d)=0 for 100 random (p,d)")


# 4 ------------------------------------------------------------------------


def test_criterion_04_simplex_and_sampler_statistics():
    nets = AgentNets(state_dim=6, action_dim=3, rng=make_rng(14), hidden=(16,))
    noise = OuNoise(dim=3)
    rng = make_rng(15)
    for _ in range(10_000):
        state = rng.standard_normal(6)
        action = select_action(nets, state, noise, rng, explore=True)
        assert abs(action.sum() - 1.0) <= 1e-6
        assert np.all(action >= 0.0)

    per_class = 200
    labels = np.repeat(np.arange(3), per_class)
    features = rng.standard_normal((labels.size, 2))
    dataset = LabeledDataset(features, labels, 3)
    action = np.array([0.5, 0.3, 0.2])
    counts = np.zeros(3)
    draws, batch = 10_000, 20
    for _ in range(draws):
        batch_ids = weighted_sample(action, dataset, batch, rng)
        counts += np.bincount(dataset.labels[batch_ids.indices], minlength=3)
    freqs = counts / (draws * batch)
    dev = float(np.max(np.abs(freqs - action)))
    assert dev <= 0.02
    _report("criterion 4", f"10000 actions on simplex; sampler freq dev {dev:.4f} <= 0.02")


# 5 ------------------------------------------------------------------------


def test_criterion_05_ou_behavior():
    noise = OuNoise(dim=1, theta=0.15, sigma=0.0, beta=0.0, dt=1.0)
    noise.state[:] = 1.0
    assert noise.step()[0] == pytest.approx(0.85, abs=1e-12)

    beta = 0.4
    noise = OuNoise(dim=1, theta=0.15, sigma=0.2, beta=beta, dt=1.0)
    rng = make_rng(16)
    total = 0.0
    for _ in range(100_000):
        total += float(noise.step(rng)[0])
    mean = total / 100_000
    assert abs(mean - beta) <= 0.05
    _report("criterion 5", f"decay 1.0 -> 0.85 exact; 100k-step mean {mean:.4f} within 0.05 of {beta}")


# 6 ------------------------------------------------------------------------


def test_criterion_06_target_network_algebra():
    nets = AgentNets(state_dim=5, action_dim=2, rng=make_rng(17), hidden=(8,), tau=0.03)
    # push online weights away from the targets first
    for p in nets.actor.params.values():
        p += 0.5
    for p in nets.critic.params.values():
        p -= 0.25
    theta = {("actor", k): v.copy() for k, v in nets.actor.params.items()}
    theta.update({("critic", k): v.copy() for k, v in nets.critic.params.items()})
    theta0 = {("actor", k): v.copy() for k, v in nets.target_actor.params.items()}
    theta0.update({("critic", k): v.copy() for k, v in nets.target_critic.params.items()})
    k = 100
    for _ in range(k):
        soft_update_targets(nets)
    shrink = (1.0 - nets.tau) ** k
    worst = 0.0
    for net_name, target in (("actor", nets.target_actor), ("critic", nets.target_critic)):
        for name, value in target.params.items():
            expected = shrink * theta0[(net_name, name)] + (1.0 - shrink) * theta[(net_name, name)]
            worst = max(worst, float(np.max(np.abs(value - expected))))
    assert worst <= 1e-9
    _report("criterion 6", f"100 soft updates match closed form, max dev {worst:.2e} <= 1e-9")


# 7 ------------------------------------------------------------------------


def test_criterion_07_kt_learning():
    start = time.time()
    ratios = []
    for seed in (1, 2, 3, 4, 5):
        rng = make_rng(seed, 7)
        tracer = KnowledgeTracer(30, 4, key_dim=8, value_dim=8, rng=make_rng(seed, 7, 1))
        batch = rng.choice(30, size=10, replace=False)
        losses = rng.uniform(0, 1, size=10)
        errors = rng.integers(0, 2, size=10)
        opt = Adam(lr=1e-2)
        initial = tracer.chain_rmse(batch, losses, errors)
        for _ in range(200):
            tracer.train_step(batch, losses, errors, opt)
        final = tracer.chain_rmse(batch, losses, errors)
        ratios.append(final / initial)
        assert final <= 0.5 * initial, f"seed {seed}: {final:.4f} vs initial {initial:.4f}"
    elapsed = time.time() - start
    assert elapsed < 30.0
    _report("criterion 7", f"RMSE ratios {['%.3f' % r for r in ratios]} all <= 0.5 in {elapsed:.1f}s")


# 8 ------------------------------------------------------------------------


def _ordering_config(teacher: str) -> ExperimentConfig:
    return ExperimentConfig(teacher=teacher, seeds=(1, 2, 3, 4, 5), episodes=50, steps=20)


def _mean_phase2_accuracy(config: ExperimentConfig) -> tuple[float, list]:
    per_seed = []
    for seed in config.seeds:
        logs = run_seed(config, seed)
        per_seed.append(np.mean([phase2_summary(log)["test_accuracy"] for log in logs]))
    return float(np.mean(per_seed)), per_seed


def test_criterion_08_end_to_end_ordering():
    start = time.time()
    means = {}
    for teacher in ("kadt", "kadt_kt", "kadt_basic", "random"):
        means[teacher], _ = _mean_phase2_accuracy(_ordering_config(teacher))
    elapsed = time.time() - start
    summary = "  ".join(f"{t}={means[t]:.4f}" for t in ("kadt", "kadt_kt", "kadt_basic", "random"))
    assert means["kadt"] >= means["random"] + 0.02, summary
    assert means["kadt"] >= means["kadt_kt"] >= means["kadt_basic"], summary
    assert elapsed <= 15 * 60
    _report("criterion 8", f"{summary}  ({elapsed:.0f}s)")


# 9 ------------------------------------------------------------------------


def _swap_run(seed: int, phase1_kind: str, phase2_kind: str) -> tuple[str, str, MetricsLog]:
    from teachtrace.agent import LoopSettings, run_frozen_policy, run_training
    from teachtrace.baselines import StackSettings, make_stack
    from teachtrace.harness import generate_synthetic, split_dataset
    from teachtrace.students import make_student

    data = generate_synthetic(SyntheticSpec(samples_per_class=(120, 40)), make_rng(seed, 0, 20))
    splits = split_dataset(data, make_rng(seed, 0, 21))
    stack = make_stack("kadt", splits.train, StackSettings(), seed, batch_size=8)
    loop = LoopSettings(episodes=3, steps=4, batch_size=8)
    log = MetricsLog(seed=seed, teacher="kadt")
    student = make_student(phase1_kind, splits.train.feature_dim, 2, make_rng(seed, 1, 30))
    run_training(loop, stack, splits, student, seed, log)
    before = stack.checksum()
    student = make_student(phase2_kind, splits.train.feature_dim, 2, make_rng(seed, 2, 30))
    run_frozen_policy(loop, stack, splits, student, seed, log)
    return before, stack.checksum(), log


def test_criterion_09_two_phase_integrity():
    for seed, pair in ((21, ("logistic", "mlp")), (22, ("mlp", "logistic"))):
        before, after, log = _swap_run(seed, *pair)
        assert before == after, f"teacher parameters moved during phase 2 ({pair})"
        phase2 = log.phase_episodes(2)
        assert len(phase2) == 3
        assert all(e.test_accuracy is not None for e in phase2)
    _report("criterion 9", "both student swaps complete; teacher checksums unchanged across phase 2")


# 10 -----------------------------------------------------------------------


def test_criterion_10_cli_determinism(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    base = [
        sys.executable, "-m", "teachtrace.cli", "train", "--seed", "7",
        "--teacher", "kadt", "--episodes", "2", "--steps", "3", "--out",
    ]
    for out in (out_a, out_b):
        proc = subprocess.run(base + [str(out)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
    assert filecmp.cmp(out_a / "metrics_7.csv", out_b / "metrics_7.csv", shallow=False)
    assert filecmp.cmp(out_a / "summary.json", out_b / "summary.json", shallow=False)
    _report("criterion 10", "train --seed 7 twice: metrics_7.csv and summary.json byte-identical")
