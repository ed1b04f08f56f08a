"""Turn chain traces into empirical distributions, TV curves and energy statistics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ContractViolation
from .exact import StateSpace, tv_distance

DEFAULT_BURN_IN_FRACTION = 0.1


def _indices(trace, space: StateSpace) -> np.ndarray:
    if hasattr(trace, "tokens"):
        return np.asarray(space.index_of(trace.tokens))
    return np.asarray(trace, dtype=np.int64)


class EmpiricalDistribution:
    """Visit counts over an enumerated space. Merging is associative."""

    def __init__(self, size: int, burn_in: int = 0):
        self.counts = np.zeros(size, dtype=np.int64)
        self.total = 0
        self.burn_in = burn_in

    def update(self, indices) -> "EmpiricalDistribution":
        idx = np.asarray(indices, dtype=np.int64)
        self.counts += np.bincount(idx, minlength=len(self.counts))
        self.total += idx.size
        return self

    def merge(self, other: "EmpiricalDistribution") -> "EmpiricalDistribution":
        out = EmpiricalDistribution(len(self.counts), self.burn_in)
        out.counts = self.counts + other.counts
        out.total = self.total + other.total
        return out

    def probabilities(self) -> np.ndarray:
        if self.total == 0:
            raise ContractViolation("empirical distribution has no samples")
        return self.counts / self.total


def empirical_distribution(trace, space: StateSpace, burn_in: int = 0) -> np.ndarray:
    idx = _indices(trace, space)
    if burn_in >= len(idx):
        raise ContractViolation(f"burn-in {burn_in} leaves no samples from a trace of {len(idx)}")
    return EmpiricalDistribution(space.size, burn_in).update(idx[burn_in:]).probabilities()


def tv_curve(trace, space: StateSpace, exact_pi, checkpoints: Sequence[int]) -> list[tuple[int, float]]:
    """TV between the running empirical distribution (from step 1) and ``exact_pi``."""
    idx = _indices(trace, space)
    checkpoints = [int(c) for c in checkpoints]
    if any(b <= a for a, b in zip(checkpoints, checkpoints[1:])):
        raise ContractViolation("checkpoints must be strictly increasing")
    acc = EmpiricalDistribution(space.size)
    out, prev = [], 0
    for c in checkpoints:
        if c < 1 or c > len(idx):
            raise ContractViolation(f"checkpoint {c} outside trace of length {len(idx)}")
        acc.update(idx[prev:c])
        prev = c
        out.append((c, tv_distance(acc.probabilities(), exact_pi)))
    return out


def log_checkpoints(steps: int, per_decade: int = 10, start: int = 100) -> list[int]:
    pts = np.unique(np.round(np.logspace(np.log10(start), np.log10(steps), per_decade * 8)).astype(int))
    pts = pts[(pts >= 1) & (pts <= steps)]
    return sorted(set(pts.tolist()) | {steps})


@dataclass
class EnergyTrace:
    energies: np.ndarray

    @property
    def running_mean(self) -> np.ndarray:
        return np.cumsum(self.energies) / np.arange(1, len(self.energies) + 1)


def batch_means_se(x: np.ndarray, n_batches: int | None = None) -> float:
    """Standard error of the mean for correlated samples via non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 2:
        return float("nan")
    if n_batches is None:
        n_batches = max(2, int(np.sqrt(n)))
    size = n // n_batches
    if size < 1:
        return float(np.std(x, ddof=1) / np.sqrt(n))
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(np.std(means, ddof=1) / np.sqrt(n_batches))


class EnergySummary(NamedTuple):
    mean: float
    variance: float
    standard_error: float


def energy_summary(trace, burn_in: int | None = None) -> EnergySummary:
    """Post-burn-in mean and variance of U, with a batch-means standard error.

    ``burn_in`` defaults to 10% of the trace.
    """
    energies = np.asarray(getattr(trace, "energies", trace), dtype=float)
    if burn_in is None:
        burn_in = int(DEFAULT_BURN_IN_FRACTION * len(energies))
    if burn_in >= len(energies):
        raise ContractViolation("burn-in leaves no samples")
    e = energies[burn_in:]
    var = float(np.var(e, ddof=1)) if len(e) > 1 else 0.0
    return EnergySummary(float(e.mean()), var, batch_means_se(e))


@dataclass
class AcceptanceStats:
    accepted: np.ndarray
    changes: np.ndarray

    @classmethod
    def from_trace(cls, trace) -> "AcceptanceStats":
        return cls(np.asarray(trace.accepted, dtype=bool), np.asarray(trace.changes))

    @property
    def proposals(self) -> int:
        return len(self.accepted)

    @property
    def acceptances(self) -> int:
        return int(self.accepted.sum())

    @property
    def rate(self) -> float:
        return self.acceptances / self.proposals if self.proposals else float("nan")

    def windowed_rate(self, window: int) -> np.ndarray:
        c = np.concatenate([[0], np.cumsum(self.accepted)])
        n = np.arange(1, self.proposals + 1)
        lo = np.maximum(n - window, 0)
        return (c[n] - c[lo]) / (n - lo)

    def self_proposal_fraction(self) -> float:
        return float(np.mean(self.changes == 0)) if self.proposals else float("nan")


def write_tv_csv(path, rows, header_comment: str) -> None:
    """Rows of (kernel, seed, step, tv)."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kernel", "seed", "step", "tv"])
        for kernel, seed, step, tv in rows:
            w.writerow([kernel, seed, step, repr(float(tv))])


def write_energy_summary_csv(path, rows, header_comment: str) -> None:
    """Rows of (kernel, seed, mean_energy, se)."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kernel", "seed", "mean_energy", "se"])
        for kernel, seed, mean, se in rows:
            w.writerow([kernel, seed, repr(float(mean)), repr(float(se))])
