"""Append-only run records shared by the teaching loops and the harness."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence


@dataclass(frozen=True)
class StepRecord:
    phase: int
    episode: int
    step: int
    action: tuple[float, ...]
    reward: float
    performance: float  # accuracy on the reward slice after this step
    train_loss: float
    kt_rmse: float | None
    note: str = ""


@dataclass(frozen=True)
class EpisodeRecord:
    phase: int
    episode: int
    valid_accuracy: float
    valid_auc: float | None
    test_accuracy: float | None
    test_auc: float | None
    concept_accuracy: tuple[float, ...] | None


@dataclass
class MetricsLog:
    """Step and episode records for one seeded run, in arrival order."""

    seed: int
    teacher: str
    fold: int = 0
    steps: list[StepRecord] = field(default_factory=list)
    episodes: list[EpisodeRecord] = field(default_factory=list)

    def _check_order(self, phase: int, episode: int, step: int | None) -> None:
        if self.steps:
            last = self.steps[-1]
            key = (phase, episode, step if step is not None else float("inf"))
            last_key = (last.phase, last.episode, last.step)
            if key <= last_key:
                raise ValueError(f"records must arrive in order; got {key} after {last_key}")

    def log_step(self, record: StepRecord) -> None:
        self._check_order(record.phase, record.episode, record.step)
        self.steps.append(record)

    def log_episode(self, record: EpisodeRecord) -> None:
        if self.episodes:
            last = self.episodes[-1]
            if (record.phase, record.episode) <= (last.phase, last.episode):
                raise ValueError("episode records must arrive in order")
        self.episodes.append(record)

    def phase_episodes(self, phase: int) -> Sequence[EpisodeRecord]:
        return [e for e in self.episodes if e.phase == phase]
