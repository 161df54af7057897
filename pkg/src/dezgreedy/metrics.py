"""Per-episode records, exploration measures and convergence statistics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .errors import ConfigError
from .gridworlds import EVENTS

WINDOW_LAST = 200
UNIQUE_WINDOW = 100
SMOOTHING_NOTE = ("episodes_to_90 = first episode whose trailing mean reward over the last "
                  "min(e+1, 200) episodes reaches 0.9 * final; final = mean of last 200 episodes")


@dataclass
class EpisodeRecord:
    run_id: str
    seed: int
    episode: int
    reward: float
    steps: int
    new_states: int  # states never seen before in this run
    farthest: int  # max Manhattan distance from the spawn cell
    epsilon: float
    first_event: dict = field(default_factory=dict)  # event -> step index it first fired
    option_counts: list = field(default_factory=list)  # sampled g histogram, index = g
    z_counts: list = field(default_factory=list)  # sampled z histogram, index = z - 1

    def row(self) -> dict:
        r = {f.name: getattr(self, f.name) for f in fields(self)
             if f.name not in ("first_event", "option_counts", "z_counts")}
        r["reward"] = repr(float(self.reward))
        r["epsilon"] = repr(float(self.epsilon))
        for ev in EVENTS:
            r[f"first_{ev}"] = self.first_event.get(ev, -1)
        r["option_counts"] = ";".join(map(str, self.option_counts))
        r["z_counts"] = ";".join(map(str, self.z_counts))
        return r


CSV_HEADER = (["run_id", "seed", "episode", "reward", "steps", "new_states", "farthest", "epsilon"]
              + [f"first_{ev}" for ev in EVENTS] + ["option_counts", "z_counts"])


def write_csv(records: Iterable[EpisodeRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_HEADER, lineterminator="\n")
        writer.writeheader()
        for rec in records:
            writer.writerow(rec.row())


def read_csv(path) -> list[EpisodeRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            first = {ev: int(row[f"first_{ev}"]) for ev in EVENTS if int(row[f"first_{ev}"]) >= 0}
            hist = lambda s: [int(v) for v in s.split(";")] if s else []
            out.append(EpisodeRecord(row["run_id"], int(row["seed"]), int(row["episode"]), float(row["reward"]),
                                     int(row["steps"]), int(row["new_states"]), int(row["farthest"]),
                                     float(row["epsilon"]), first, hist(row["option_counts"]),
                                     hist(row["z_counts"])))
    return out


def farthest_distance(positions: Iterable[Sequence[int]], spawn: Sequence[int]) -> int:
    sx, sy = spawn
    return max((abs(x - sx) + abs(y - sy) for x, y in positions), default=0)


def unique_states(history, window: int = UNIQUE_WINDOW) -> list[int]:
    """New-state counts summed over consecutive windows of episodes.

    ``history`` is a sequence of :class:`EpisodeRecord` or of per-episode
    new-state counts.
    """
    counts = [h.new_states if isinstance(h, EpisodeRecord) else int(h) for h in history]
    return [sum(counts[i:i + window]) for i in range(0, len(counts), window)]


@dataclass(frozen=True)
class ConvergenceStat:
    final: float
    episodes_to_90: int
    available: bool = True
    note: str = SMOOTHING_NOTE


def convergence(records, window: int = WINDOW_LAST) -> ConvergenceStat:
    rewards = np.array([r.reward if isinstance(r, EpisodeRecord) else r for r in records], np.float64)
    if len(rewards) < window:
        return ConvergenceStat(math.nan, -1, available=False)
    final = float(rewards[-window:].mean())
    csum = np.concatenate([[0.0], np.cumsum(rewards)])
    idx = np.arange(len(rewards))
    lo = np.maximum(0, idx + 1 - window)
    trailing = (csum[idx + 1] - csum[lo]) / (idx + 1 - lo)
    # tiny slack so a constant series counts as reaching its own 90%
    hit = np.nonzero(trailing >= 0.9 * final - 1e-12)[0]
    return ConvergenceStat(final, int(hit[0]))


def across_seeds(series: Sequence[Sequence[float]]):
    """Mean and sample standard deviation per index across equal-length runs."""
    lengths = {len(s) for s in series}
    if len(lengths) != 1:
        raise ConfigError(f"runs have different lengths {sorted(lengths)}")
    arr = np.asarray(series, np.float64)
    std = arr.std(axis=0, ddof=1) if len(arr) > 1 else np.zeros(arr.shape[1])
    return arr.mean(axis=0), std


def ci95(values: Sequence[float]) -> tuple[float, float]:
    """Mean and half-width of a Student-t 95% confidence interval."""
    arr = np.asarray(values, np.float64)
    mean = float(arr.mean())
    if len(arr) < 2:
        return mean, 0.0
    half = float(stats.t.ppf(0.975, len(arr) - 1) * arr.std(ddof=1) / math.sqrt(len(arr)))
    return mean, half
