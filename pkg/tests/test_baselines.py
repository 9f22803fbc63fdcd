"""Random teaching, self-paced filtering, sparse rewards, ablation wiring."""

import numpy as np
import pytest

from teachtrace.agent import LoopSettings, run_frozen_policy
from teachtrace.baselines import (
    SparseReward,
    SplSchedule,
    StackSettings,
    ablation_variant,
    make_stack,
    random_teach,
    sparse_reward,
    spl_filter,
)
from teachtrace.logs import MetricsLog
from teachtrace.numerics import make_rng
from teachtrace.students import DatasetSplits, LabeledDataset, MiniBatch, make_student


def _dataset(n=60, seed=0):
    rng = make_rng(seed)
    labels = np.arange(n) % 2
    feats = rng.standard_normal((n, 2)) + 2.0 * labels[:, None]
    return LabeledDataset(feats, labels, 2)


def test_random_teach_uniform_without_replacement():
    ds = _dataset()
    batch = random_teach(ds, 20, make_rng(1))
    assert len(batch) == 20
    assert len(set(batch.indices.tolist())) == 20
    with pytest.raises(ValueError):
        random_teach(ds, 0, make_rng(1))
    with pytest.raises(ValueError):
        random_teach(ds, 61, make_rng(1))


def test_random_teach_covers_everything_over_draws():
    ds = _dataset(n=30)
    seen = set()
    rng = make_rng(2)
    for _ in range(50):
        seen.update(random_teach(ds, 10, rng).indices.tolist())
    assert seen == set(range(30))


def test_spl_schedule_strictly_increases():
    sched = SplSchedule(0.5, growth=1.1)
    values = []
    for _ in range(5):
        values.append(sched.threshold)
        sched.advance()
    assert all(b > a for a, b in zip(values, values[1:]))
    assert sched.epoch == 5
    with pytest.raises(ValueError):
        SplSchedule(0.5, growth=1.0)
    with pytest.raises(ValueError):
        SplSchedule(0.0)


def test_spl_filter_returns_easy_samples():
    ds = _dataset(seed=3)
    student = make_student("logistic", 2, 2, make_rng(4))
    losses, _ = student.batch_eval(ds, MiniBatch(np.arange(len(ds))))
    sched = SplSchedule(float(np.median(losses)))
    batch, fell_back = spl_filter(student, ds, sched, 8, make_rng(5))
    assert not fell_back
    assert np.all(losses[batch.indices] <= sched.threshold)


def test_spl_filter_fallback_takes_easiest():
    ds = _dataset(seed=6)
    student = make_student("logistic", 2, 2, make_rng(7))
    losses, _ = student.batch_eval(ds, MiniBatch(np.arange(len(ds))))
    sched = SplSchedule(1e-9)  # empty pool
    batch, fell_back = spl_filter(student, ds, sched, 5, make_rng(8))
    assert fell_back
    easiest = set(np.argsort(losses, kind="stable")[:5].tolist())
    assert set(batch.indices.tolist()) == easiest


def test_sparse_reward_threshold():
    assert sparse_reward(0.8, 0.7) == 1.0
    assert sparse_reward(0.7, 0.7) == 0.0  # strict inequality
    assert sparse_reward(0.2, 0.7) == 0.0
    with pytest.raises(ValueError):
        sparse_reward(1.5, 0.7)


def test_sparse_reward_policy_tracks_best_episode():
    policy = SparseReward()
    assert policy(0.4, 0.0) == 1.0  # anything beats the initial threshold
    policy.note_episode(0.6)
    assert policy(0.55, 0.0) == 0.0
    assert policy(0.65, 0.0) == 1.0
    policy.note_episode(0.5)  # never decreases
    assert policy.threshold == 0.6


def test_make_stack_component_matrix():
    ds = _dataset()
    settings = StackSettings(num_concepts=3, key_dim=4, value_dim=4, attention_width=4, hidden=(8,))
    full = make_stack("kadt", ds, settings, seed=0)
    assert full.tracer is not None and full.attention is not None and full.use_ledger
    kt = make_stack("kadt_kt", ds, settings, seed=0)
    assert kt.tracer is not None and kt.attention is None and not kt.use_ledger
    basic = make_stack("kadt_basic", ds, settings, seed=0)
    assert basic.tracer is None and basic.nets.state_dim == 3
    l2t = make_stack("l2t", ds, settings, seed=0)
    assert isinstance(l2t.reward_policy, SparseReward)
    spl = make_stack("spl", ds, settings, seed=0)
    assert spl.nets is None and spl.spl is not None and spl.draw_batch is not None
    rnd = make_stack("random", ds, settings, seed=0)
    assert rnd.nets is None and rnd.draw_batch is not None
    with pytest.raises(ValueError):
        make_stack("bandit", ds, settings, seed=0)


def test_ablation_variant_mapping():
    ds = _dataset()
    settings = StackSettings(num_concepts=3, key_dim=4, value_dim=4, attention_width=4, hidden=(8,))
    assert ablation_variant("full", ds, settings, 0).kind == "kadt"
    assert ablation_variant("kt", ds, settings, 0).kind == "kadt_kt"
    assert ablation_variant("basic", ds, settings, 0).kind == "kadt_basic"
    with pytest.raises(ValueError):
        ablation_variant("none", ds, settings, 0)


def _splits(seed=0):
    ds = _dataset(n=80, seed=seed)
    rng = make_rng(seed, 50)
    train, valid, reward, test = [], [], [], []
    for c, members in ds.by_class.items():
        members = rng.permutation(members)
        test += members[:8].tolist()
        valid += members[8:16].tolist()
        reward += members[8:12].tolist()
        train += members[16:].tolist()
    return DatasetSplits(
        train=ds.subset(train), valid=ds.subset(valid),
        reward_slice=ds.subset(reward), test=ds.subset(test),
    )


@pytest.mark.parametrize("kind", ["random", "spl"])
def test_untrained_teachers_run_frozen_phase(kind):
    splits = _splits()
    settings = StackSettings(num_concepts=3, key_dim=4, value_dim=4, hidden=(8,), spl_threshold=1.0)
    stack = make_stack(kind, splits.train, settings, seed=1, batch_size=8)
    loop = LoopSettings(episodes=2, steps=3, batch_size=8, replay_batch=4)
    student = make_student("logistic", 2, 2, make_rng(1, 9))
    log = MetricsLog(seed=1, teacher=kind)
    run_frozen_policy(loop, stack, splits, student, seed=1, log=log)
    assert len(log.steps) == 6
    assert len(log.phase_episodes(2)) == 2
    # realized class proportions are logged in place of a policy action
    for rec in log.steps:
        assert sum(rec.action) == pytest.approx(1.0, abs=1e-9)
    if kind == "spl":
        assert stack.spl.epoch == 2  # threshold advanced once per episode
