"""Experiment harness: config, datasets, splits, runs, and reports.

A run is fully determined by (config, seed).  Every random draw flows
through counter-based streams derived from the seed, and all emitted files
(metrics_<seed>.csv, heatmap_<seed>.csv, curves.csv, summary.json) are
byte-identical across re-runs of the same configuration.
"""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - version specific
    import tomli as tomllib

from .agent import LoopSettings, run_frozen_policy, run_training
from .baselines import TEACHER_KINDS, TRAINED_TEACHERS, StackSettings, make_stack
from .logs import MetricsLog
from .numerics import make_rng
from .students import DatasetSplits, LabeledDataset, make_student

STUDENT_KINDS = ("logistic", "mlp")


class DatasetFormatError(ValueError):
    """CSV loading failure with a machine-readable ``code``."""

    def __init__(self, code: str, message: str) -> None:
        super().__init__(message)
        self.code = code


# ------------------------------------------------------------ synthetic data


@dataclass
class SyntheticSpec:
    """Mixture-of-clusters generator: one cluster per (class, concept) pair.

    ``affinity[y]`` gives the concept mix of class y (rows are normalized).
    ``samples_per_class`` sets the imbalance profile.  Cluster centers are
    drawn once from the generation stream unless given explicitly.
    """

    classes: int = 2
    concepts: int = 4
    samples_per_class: tuple[int, ...] = (1600, 400)
    feature_dim: int = 2
    spreads: tuple[float, ...] = (0.5, 0.5, 0.5, 0.5)
    affinity: tuple[tuple[float, ...], ...] | None = None
    # per-dimension half-width and shift for the cluster-center draw; scalars
    # broadcast over dimensions
    center_scale: float | tuple[float, ...] = 3.0
    center_offset: float | tuple[float, ...] = 0.0
    centers: tuple | None = None  # optional explicit (classes, concepts, dim)

    def __post_init__(self) -> None:
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if self.concepts < 1:
            raise ValueError("need at least one concept")
        if self.feature_dim < 2:
            raise ValueError("feature_dim must be at least 2")
        if len(self.samples_per_class) != self.classes:
            raise ValueError("samples_per_class must list one count per class")
        if any(n < 1 for n in self.samples_per_class):
            raise ValueError("every class needs at least one sample")
        if len(self.spreads) != self.concepts:
            raise ValueError("spreads must list one value per concept")
        if any(s < 0 for s in self.spreads):
            raise ValueError("spreads must be nonnegative")
        if self.affinity is not None:
            if len(self.affinity) != self.classes or any(len(row) != self.concepts for row in self.affinity):
                raise ValueError("affinity must be classes x concepts")
            for row in self.affinity:
                if any(p < 0 for p in row) or sum(row) <= 0:
                    raise ValueError("affinity rows must be nonnegative with positive sum")
        for name in ("center_scale", "center_offset"):
            value = getattr(self, name)
            if isinstance(value, tuple) and len(value) != self.feature_dim:
                raise ValueError(f"{name} must be scalar or one value per feature dimension")
        scale = self.center_scale if isinstance(self.center_scale, tuple) else (self.center_scale,)
        if any(s < 0 for s in scale):
            raise ValueError("center_scale must be nonnegative")

    def affinity_matrix(self) -> np.ndarray:
        if self.affinity is None:
            mat = np.full((self.classes, self.concepts), 1.0 / self.concepts)
        else:
            mat = np.asarray(self.affinity, dtype=float)
            mat = mat / mat.sum(axis=1, keepdims=True)
        return mat


def imbalance_preset() -> SyntheticSpec:
    """Default two-class task: 80/20 imbalance with the minority concentrated
    on a concept the majority never draws.

    The majority spreads over three clusters in an upper-left band; the
    minority's single concept sits in the lower-right corner at a modest
    margin and a feature magnitude comparable to the majority clusters, so
    over-sampling it does not let its gradients overwhelm the rest.  At the
    short training budgets used here, its accuracy is a race on minority
    sample count, which is what separates sampling strategies.  All cluster
    centers lie in the positive quadrant: pairwise cosine similarities of
    raw features stay positive, which matters because the sampling-weight
    estimates clip negative cosines to zero and would otherwise starve
    whole clusters.  The minority cluster is tighter than the rest; its
    within-cluster cosines stay near one, so the sampling-weight estimates
    spread attention mass across the whole cluster and repeated draws of
    the same few points stay informative.
    """
    return SyntheticSpec(
        feature_dim=2,
        affinity=((0.34, 0.33, 0.33, 0.0), (0.0, 0.0, 0.0, 1.0)),
        centers=(
            ((1.0, 3.6), (2.2, 1.4), (3.2, 3.0), (2.0, 2.6)),
            ((1.2, 3.2), (2.0, 1.8), (3.0, 2.6), (3.8, 0.6)),
        ),
        spreads=(0.5, 0.5, 0.5, 0.32),
    )


def generate_synthetic(spec: SyntheticSpec, rng: np.random.Generator) -> LabeledDataset:
    """Draw a dataset; every sample keeps its generating concept tag."""
    affinity = spec.affinity_matrix()
    if spec.centers is not None:
        centers = np.asarray(spec.centers, dtype=float)
        if centers.shape != (spec.classes, spec.concepts, spec.feature_dim):
            raise ValueError("explicit centers must be classes x concepts x feature_dim")
    else:
        scale = np.broadcast_to(np.asarray(spec.center_scale, dtype=float), (spec.feature_dim,))
        offset = np.broadcast_to(np.asarray(spec.center_offset, dtype=float), (spec.feature_dim,))
        centers = offset + scale * rng.uniform(-1.0, 1.0, (spec.classes, spec.concepts, spec.feature_dim))
    spreads = np.asarray(spec.spreads, dtype=float)

    feats, labels, tags = [], [], []
    for y in range(spec.classes):
        n_y = spec.samples_per_class[y]
        drawn = rng.choice(spec.concepts, size=n_y, p=affinity[y])
        noise = rng.standard_normal((n_y, spec.feature_dim))
        feats.append(centers[y, drawn] + spreads[drawn][:, None] * noise)
        labels.append(np.full(n_y, y))
        tags.append(drawn)
    features = np.concatenate(feats)
    labels = np.concatenate(labels)
    tags = np.concatenate(tags)
    order = rng.permutation(len(labels))
    return LabeledDataset(features[order], labels[order], spec.classes, concepts=tags[order])


# ------------------------------------------------------------------- csv io


def load_csv(path: str | Path) -> LabeledDataset:
    """Read features plus a final integer ``label`` column."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise DatasetFormatError("empty_file", f"{path} holds no rows")
    header = [h.strip() for h in rows[0]]
    if not header or header[-1] != "label":
        raise DatasetFormatError("missing_label", f"{path} must end with a 'label' column")
    if len(rows) == 1:
        raise DatasetFormatError("empty_file", f"{path} holds a header but no samples")
    n_cols = len(header)
    feats = np.empty((len(rows) - 1, n_cols - 1))
    labels = np.empty(len(rows) - 1, dtype=int)
    for r, row in enumerate(rows[1:], start=0):
        if len(row) != n_cols:
            raise DatasetFormatError("ragged_row", f"{path} row {r + 2} has {len(row)} fields, expected {n_cols}")
        try:
            labels[r] = int(row[-1])
        except ValueError:
            raise DatasetFormatError(
                "non_integer_label", f"{path} row {r + 2}: label {row[-1]!r} is not an integer"
            ) from None
        if labels[r] < 0:
            raise DatasetFormatError("negative_label", f"{path} row {r + 2}: label {labels[r]} is negative")
        for c, cell in enumerate(row[:-1]):
            try:
                feats[r, c] = float(cell)
            except ValueError:
                raise DatasetFormatError(
                    "non_numeric_feature", f"{path} row {r + 2}: feature {cell!r} is not numeric"
                ) from None
    return LabeledDataset(feats, labels, int(labels.max()) + 1)


def save_csv(dataset: LabeledDataset, path: str | Path) -> None:
    """Full-precision CSV with a trailing label column; round-trips load_csv."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(dataset.feature_dim)] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


# ----------------------------------------------------------------- splitting


def split_dataset(
    dataset: LabeledDataset,
    rng: np.random.Generator,
    test_fraction: float = 0.3,
    valid_fraction: float = 0.2,
    reward_fraction: float = 0.05,
    fold: int = 0,
    folds: int = 1,
) -> DatasetSplits:
    """Class-stratified test split, then train/valid, then the reward slice.

    ``valid_fraction`` applies to the non-test remainder; ``reward_fraction``
    sizes the reward slice against the whole validation set, and the slice is
    stratified with equal per-class counts so that progress on a rare class
    moves the reward as much as progress on a common one.  With ``folds`` > 1
    the validation block rotates through the remainder and ``valid_fraction``
    is ignored.
    """
    if not 0 < test_fraction < 1 or not 0 < valid_fraction < 1 or not 0 < reward_fraction < 1:
        raise ValueError("split fractions must lie strictly between 0 and 1")
    if folds < 1 or not 0 <= fold < folds:
        raise ValueError("fold index must lie in [0, folds)")
    train_idx, valid_idx, test_idx = [], [], []
    valid_per_class = []
    for c in range(dataset.num_classes):
        members = dataset.by_class[c]
        if members.size < 4:
            raise ValueError(f"class {c} has {members.size} samples; need at least 4 to stratify")
        members = rng.permutation(members)
        n_test = int(np.clip(round(test_fraction * members.size), 1, members.size - 3))
        test_idx += members[:n_test].tolist()
        rest = members[n_test:]
        if folds == 1:
            n_valid = int(np.clip(round(valid_fraction * rest.size), 1, rest.size - 1))
            valid_c = rest[:n_valid]
            train_c = rest[n_valid:]
        else:
            if rest.size < folds:
                raise ValueError(f"class {c} is too small for {folds}-fold validation")
            blocks = np.array_split(rest, folds)
            valid_c = blocks[fold]
            train_c = np.concatenate([b for i, b in enumerate(blocks) if i != fold])
        valid_per_class.append(valid_c)
        valid_idx += valid_c.tolist()
        train_idx += train_c.tolist()
    n_valid_total = sum(v.size for v in valid_per_class)
    per_class = max(1, round(reward_fraction * n_valid_total / dataset.num_classes))
    reward_idx = []
    for valid_c in valid_per_class:
        reward_idx += valid_c[: min(per_class, valid_c.size)].tolist()
    return DatasetSplits(
        train=dataset.subset(sorted(train_idx)),
        valid=dataset.subset(sorted(valid_idx)),
        reward_slice=dataset.subset(sorted(reward_idx)),
        test=dataset.subset(sorted(test_idx)),
    )


# -------------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    """Everything that defines an experiment.  Defaults are the small-scale
    synthetic preset; the paper-scale preset only changes episodes/steps."""

    task: str = "synthetic-imbalance"
    teacher: str = "kadt"
    student_phase1: str = "logistic"
    student_phase2: str = "logistic"
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    episodes: int = 50
    steps: int = 20
    batch_size: int = 16
    out_dir: str = "results"
    # dataset
    dataset_kind: str = "synthetic"
    csv_path: str | None = None
    synthetic: SyntheticSpec = field(default_factory=imbalance_preset)
    # splits
    test_fraction: float = 0.3
    valid_fraction: float = 0.2
    reward_fraction: float = 0.05
    folds: int = 1
    # teacher-side knobs
    kt_concepts: int | None = None  # defaults to the synthetic concept count
    key_dim: int = 50
    value_dim: int = 50
    kt_lr: float = 1e-2
    attention_width: int = 32
    hidden: tuple[int, ...] = (64, 64)
    gamma: float = 0.99
    tau: float = 0.001
    replay_capacity: int = 10_000
    replay_batch: int = 64
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    ou_beta: float = 0.0
    ou_dt: float = 1.0
    reward_deadband: float = 0.01
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    attention_lr: float = 1e-3
    logit_bound: float = 0.5
    critic_updates: int = 1
    # update the policy every second interaction: at the short episode
    # budgets used here the critic needs the head start, or late-phase value
    # drift can drag a settled policy off its plateau
    actor_delay: int = 2
    # student
    student_hidden: int = 32
    student_lr: float = 0.045
    # self-paced baseline
    spl_threshold: float = 0.5
    spl_growth: float = 1.1

    def __post_init__(self) -> None:
        if self.teacher not in TEACHER_KINDS:
            raise ValueError(f"unknown teacher {self.teacher!r}; expected one of {TEACHER_KINDS}")
        for kind in (self.student_phase1, self.student_phase2):
            if kind not in STUDENT_KINDS:
                raise ValueError(f"unknown student kind {kind!r}; expected one of {STUDENT_KINDS}")
        if self.dataset_kind not in ("synthetic", "csv"):
            raise ValueError("dataset kind must be 'synthetic' or 'csv'")
        if self.dataset_kind == "csv" and not self.csv_path:
            raise ValueError("csv datasets need csv_path")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if min(self.episodes, self.steps, self.batch_size) < 1:
            raise ValueError("episodes, steps and batch_size must be positive")

    @property
    def concept_slots(self) -> int:
        if self.kt_concepts is not None:
            return self.kt_concepts
        return self.synthetic.concepts if self.dataset_kind == "synthetic" else 4

    def stack_settings(self) -> StackSettings:
        return StackSettings(
            num_concepts=self.concept_slots,
            key_dim=self.key_dim,
            value_dim=self.value_dim,
            attention_width=self.attention_width,
            hidden=self.hidden,
            gamma=self.gamma,
            tau=self.tau,
            reward_deadband=self.reward_deadband,
            actor_lr=self.actor_lr,
            critic_lr=self.critic_lr,
            attention_lr=self.attention_lr,
            logit_bound=self.logit_bound,
            kt_lr=self.kt_lr,
            spl_threshold=self.spl_threshold,
            spl_growth=self.spl_growth,
        )

    def loop_settings(self) -> LoopSettings:
        return LoopSettings(
            episodes=self.episodes,
            steps=self.steps,
            batch_size=self.batch_size,
            replay_batch=self.replay_batch,
            replay_capacity=self.replay_capacity,
            ou_theta=self.ou_theta,
            ou_sigma=self.ou_sigma,
            ou_beta=self.ou_beta,
            ou_dt=self.ou_dt,
            critic_updates=self.critic_updates,
            actor_delay=self.actor_delay,
        )


_TOP_LEVEL_KEYS = {
    "task", "teacher", "student_phase1", "student_phase2", "seeds",
    "episodes", "steps", "batch_size", "out_dir",
}
_SECTION_KEYS = {
    "dataset": {
        "kind", "csv_path", "classes", "concepts", "samples_per_class",
        "feature_dim", "spreads", "affinity", "center_scale", "center_offset",
        "centers",
    },
    "splits": {"test_fraction", "valid_fraction", "reward_fraction", "folds"},
    "agent": {
        "gamma", "tau", "replay_capacity", "replay_batch", "ou_theta", "ou_sigma",
        "ou_beta", "ou_dt", "reward_deadband", "actor_lr", "critic_lr",
        "attention_lr", "hidden", "logit_bound", "critic_updates", "actor_delay",
    },
    "kt": {"concepts", "key_dim", "value_dim", "lr", "attention_width"},
    "student": {"hidden", "lr"},
    "spl": {"threshold", "growth"},
}


def _tupleize(value):
    if isinstance(value, list):
        return tuple(_tupleize(v) for v in value)
    return value


def config_from_mapping(data: dict) -> ExperimentConfig:
    """Build a config from parsed TOML, rejecting unknown keys."""
    unknown = set(data) - _TOP_LEVEL_KEYS - set(_SECTION_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for section, allowed in _SECTION_KEYS.items():
        present = data.get(section, {})
        if not isinstance(present, dict):
            raise ValueError(f"config section [{section}] must be a table")
        bad = set(present) - allowed
        if bad:
            raise ValueError(f"unknown keys in [{section}]: {sorted(bad)}")

    kwargs: dict = {k: _tupleize(v) for k, v in data.items() if k in _TOP_LEVEL_KEYS}

    ds = data.get("dataset", {})
    if ds:
        if "kind" in ds:
            kwargs["dataset_kind"] = ds["kind"]
        if "csv_path" in ds:
            kwargs["csv_path"] = ds["csv_path"]
        spec_kwargs = {}
        for toml_key, attr in (
            ("classes", "classes"), ("concepts", "concepts"),
            ("samples_per_class", "samples_per_class"), ("feature_dim", "feature_dim"),
            ("spreads", "spreads"), ("affinity", "affinity"),
            ("center_scale", "center_scale"), ("center_offset", "center_offset"),
            ("centers", "centers"),
        ):
            if toml_key in ds:
                spec_kwargs[attr] = _tupleize(ds[toml_key])
        if spec_kwargs:
            kwargs["synthetic"] = replace(SyntheticSpec(), **spec_kwargs)

    for section, mapping in (
        ("splits", {"test_fraction": "test_fraction", "valid_fraction": "valid_fraction",
                    "reward_fraction": "reward_fraction", "folds": "folds"}),
        ("agent", {"gamma": "gamma", "tau": "tau", "replay_capacity": "replay_capacity",
                   "replay_batch": "replay_batch", "ou_theta": "ou_theta", "ou_sigma": "ou_sigma",
                   "ou_beta": "ou_beta", "ou_dt": "ou_dt", "reward_deadband": "reward_deadband",
                   "actor_lr": "actor_lr", "critic_lr": "critic_lr", "attention_lr": "attention_lr",
                   "hidden": "hidden", "logit_bound": "logit_bound",
                   "critic_updates": "critic_updates", "actor_delay": "actor_delay"}),
        ("kt", {"concepts": "kt_concepts", "key_dim": "key_dim", "value_dim": "value_dim",
                "lr": "kt_lr", "attention_width": "attention_width"}),
        ("student", {"hidden": "student_hidden", "lr": "student_lr"}),
        ("spl", {"threshold": "spl_threshold", "growth": "spl_growth"}),
    ):
        for toml_key, attr in mapping.items():
            if toml_key in data.get(section, {}):
                kwargs[attr] = _tupleize(data[section][toml_key])
    return ExperimentConfig(**kwargs)


def load_config(path: str | Path) -> ExperimentConfig:
    with Path(path).open("rb") as fh:
        return config_from_mapping(tomllib.load(fh))


def apply_preset(config: ExperimentConfig, preset: str) -> ExperimentConfig:
    """Named episode/step budgets: 'desk' (default) or 'paper'."""
    if preset == "desk":
        return replace(config, episodes=50, steps=20)
    if preset == "paper":
        return replace(config, episodes=350, steps=50)
    raise ValueError(f"unknown preset {preset!r}; expected 'desk' or 'paper'")


# --------------------------------------------------------------- experiment


def build_dataset(config: ExperimentConfig, seed: int) -> LabeledDataset:
    if config.dataset_kind == "csv":
        return load_csv(config.csv_path)
    return generate_synthetic(config.synthetic, make_rng(seed, 0, 20))


def run_seed(config: ExperimentConfig, seed: int) -> list[MetricsLog]:
    """Both phases for one seed; one log per validation fold."""
    dataset = build_dataset(config, seed)
    logs = []
    for fold in range(config.folds):
        splits = split_dataset(
            dataset,
            make_rng(seed, 0, 21),
            test_fraction=config.test_fraction,
            valid_fraction=config.valid_fraction,
            reward_fraction=config.reward_fraction,
            fold=fold,
            folds=config.folds,
        )
        stack = make_stack(config.teacher, splits.train, config.stack_settings(), seed, config.batch_size)
        loop = config.loop_settings()
        log = MetricsLog(seed=seed, teacher=config.teacher, fold=fold)
        num_classes = splits.train.num_classes
        if config.teacher in TRAINED_TEACHERS:
            student = make_student(
                config.student_phase1, splits.train.feature_dim, num_classes,
                make_rng(seed, 1, 30), hidden=config.student_hidden, lr=config.student_lr,
            )
            run_training(loop, stack, splits, student, seed, log)
        student = make_student(
            config.student_phase2, splits.train.feature_dim, num_classes,
            make_rng(seed, 2, 30), hidden=config.student_hidden, lr=config.student_lr,
        )
        run_frozen_policy(loop, stack, splits, student, seed, log)
        logs.append(log)
    return logs


def phase2_summary(log: MetricsLog) -> dict:
    """Per-run statistic: averages over the frozen phase's episodes."""
    episodes = log.phase_episodes(2)
    accs = [e.test_accuracy for e in episodes if e.test_accuracy is not None]
    aucs = [e.test_auc for e in episodes if e.test_auc is not None]
    return {
        "test_accuracy": float(np.mean(accs)) if accs else None,
        "test_auc": float(np.mean(aucs)) if aucs else None,
        "final_valid_accuracy": episodes[-1].valid_accuracy if episodes else None,
    }


# ------------------------------------------------------------------ reports


_METRIC_COLUMNS = [
    "teacher", "record", "seed", "fold", "phase", "episode", "step", "action",
    "reward", "performance", "train_loss", "kt_rmse",
    "valid_accuracy", "valid_auc", "test_accuracy", "test_auc", "note",
]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(path: Path, logs: Sequence[MetricsLog]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_METRIC_COLUMNS)
        for log in logs:
            for r in log.steps:
                writer.writerow([
                    log.teacher, "step", log.seed, log.fold, r.phase, r.episode, r.step,
                    "|".join(repr(a) for a in r.action),
                    _fmt(r.reward), _fmt(r.performance), _fmt(r.train_loss), _fmt(r.kt_rmse),
                    "", "", "", "", r.note,
                ])
            for e in log.episodes:
                writer.writerow([
                    log.teacher, "episode", log.seed, log.fold, e.phase, e.episode, "",
                    "", "", "", "", "",
                    _fmt(e.valid_accuracy), _fmt(e.valid_auc), _fmt(e.test_accuracy), _fmt(e.test_auc), "",
                ])


def read_metrics_csv(path: Path) -> list[dict]:
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def load_metrics_csv(path: str | Path) -> list[MetricsLog]:
    """Inverse of write_metrics_csv: rebuild one log per (seed, fold)."""
    from .logs import EpisodeRecord, StepRecord

    def opt_float(cell: str) -> float | None:
        return float(cell) if cell != "" else None

    logs: dict[tuple[int, int], MetricsLog] = {}
    for row in read_metrics_csv(Path(path)):
        key = (int(row["seed"]), int(row["fold"]))
        if key not in logs:
            logs[key] = MetricsLog(seed=key[0], teacher=row["teacher"], fold=key[1])
        log = logs[key]
        if row["record"] == "step":
            action = tuple(float(a) for a in row["action"].split("|")) if row["action"] else ()
            log.steps.append(StepRecord(
                phase=int(row["phase"]), episode=int(row["episode"]), step=int(row["step"]),
                action=action, reward=float(row["reward"]), performance=float(row["performance"]),
                train_loss=float(row["train_loss"]), kt_rmse=opt_float(row["kt_rmse"]),
                note=row["note"],
            ))
        else:
            log.episodes.append(EpisodeRecord(
                phase=int(row["phase"]), episode=int(row["episode"]),
                valid_accuracy=float(row["valid_accuracy"]), valid_auc=opt_float(row["valid_auc"]),
                test_accuracy=opt_float(row["test_accuracy"]), test_auc=opt_float(row["test_auc"]),
                concept_accuracy=None,
            ))
    return [logs[k] for k in sorted(logs)]


def write_heatmap_csv(path: Path, log: MetricsLog) -> bool:
    """Concept-by-episode accuracy for the frozen phase; skipped without tags."""
    episodes = [e for e in log.phase_episodes(2) if e.concept_accuracy is not None]
    if not episodes:
        return False
    n_concepts = len(episodes[0].concept_accuracy)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["concept"] + [f"episode_{e.episode}" for e in episodes])
        for concept in range(n_concepts):
            writer.writerow([concept] + [repr(e.concept_accuracy[concept]) for e in episodes])
    return True


def write_curves_csv(path: Path, all_logs: Sequence[MetricsLog]) -> None:
    """Across-seed mean per episode, one block per (teacher, phase)."""
    keys = sorted({(log.teacher, e.phase, e.episode) for log in all_logs for e in log.episodes})
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["teacher", "phase", "episode", "valid_accuracy_mean", "test_accuracy_mean", "runs"])
        for teacher, phase, episode in keys:
            vals = [
                e
                for log in all_logs
                if log.teacher == teacher
                for e in log.episodes
                if e.phase == phase and e.episode == episode
            ]
            vacc = float(np.mean([e.valid_accuracy for e in vals]))
            taccs = [e.test_accuracy for e in vals if e.test_accuracy is not None]
            writer.writerow([
                teacher, phase, episode, repr(vacc),
                repr(float(np.mean(taccs))) if taccs else "", len(vals),
            ])


def _mean_std(values: Sequence[float]) -> dict:
    arr = np.asarray(values, dtype=float)
    return {"mean": float(arr.mean()), "std": float(arr.std()), "n": int(arr.size)}


def summarize(all_logs: Sequence[MetricsLog]) -> dict:
    """Aggregate phase-2 outcomes per teacher, with per-seed values."""
    teachers: dict[str, dict] = {}
    for teacher in sorted({log.teacher for log in all_logs}):
        t_logs = [log for log in all_logs if log.teacher == teacher]
        per_seed_acc: dict[str, list[float]] = {}
        per_seed_auc: dict[str, list[float]] = {}
        for log in t_logs:
            stats = phase2_summary(log)
            if stats["test_accuracy"] is not None:
                per_seed_acc.setdefault(str(log.seed), []).append(stats["test_accuracy"])
            if stats["test_auc"] is not None:
                per_seed_auc.setdefault(str(log.seed), []).append(stats["test_auc"])
        acc_by_seed = {s: float(np.mean(v)) for s, v in sorted(per_seed_acc.items())}
        auc_by_seed = {s: float(np.mean(v)) for s, v in sorted(per_seed_auc.items())}
        teachers[teacher] = {
            "phase2_test_accuracy": {**_mean_std(list(acc_by_seed.values())), "per_seed": acc_by_seed},
            "phase2_test_auc": (
                {**_mean_std(list(auc_by_seed.values())), "per_seed": auc_by_seed} if auc_by_seed else None
            ),
        }
    return {"teachers": teachers}


def emit_reports(out_dir: str | Path, all_logs: Sequence[MetricsLog]) -> Path:
    """Write per-seed metrics/heatmap files plus curves.csv and summary.json.

    Everything here is recomputable from the metrics files alone, so the
    report command can rebuild identical aggregates later.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_seed: dict[int, list[MetricsLog]] = {}
    for log in all_logs:
        by_seed.setdefault(log.seed, []).append(log)
    for seed, logs in sorted(by_seed.items()):
        write_metrics_csv(out / f"metrics_{seed}.csv", logs)
        write_heatmap_csv(out / f"heatmap_{seed}.csv", logs[0])
    write_curves_csv(out / "curves.csv", all_logs)
    summary = summarize(all_logs)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return out


def run_experiment(config: ExperimentConfig) -> Path:
    """All seeds for one teacher; returns the artifact directory."""
    all_logs: list[MetricsLog] = []
    for seed in config.seeds:
        all_logs.extend(run_seed(config, seed))
    return emit_reports(config.out_dir, all_logs)
