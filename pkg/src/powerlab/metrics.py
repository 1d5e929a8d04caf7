"""Evaluation metrics over recorded trajectories.

Four aggregates: time-averaged sum-rate, Jain fairness, energy efficiency,
and mean queue backlog (the latency proxy), each also broken down per user
where meaningful. All functions are pure; a trajectory is three (T, N)
arrays of rates, transmit powers and post-update queue backlogs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricUndefined

FAIRNESS_ON_AVERAGES = "on_averages"
FAIRNESS_PER_STEP = "per_step_averaged"
FAIRNESS_MODES = (FAIRNESS_ON_AVERAGES, FAIRNESS_PER_STEP)


@dataclass
class TrajectoryRecord:
    rates: np.ndarray
    powers: np.ndarray
    queues: np.ndarray

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=np.float64)
        self.powers = np.asarray(self.powers, dtype=np.float64)
        self.queues = np.asarray(self.queues, dtype=np.float64)
        shape = self.rates.shape
        if len(shape) != 2 or shape[0] < 1:
            raise ValueError(f"need a (T, N) trajectory with T >= 1, got {shape}")
        if self.powers.shape != shape or self.queues.shape != shape:
            raise ValueError("rates, powers and queues must share one (T, N) shape")

    @property
    def n_steps(self) -> int:
        return self.rates.shape[0]

    @property
    def n_users(self) -> int:
        return self.rates.shape[1]


@dataclass
class MetricsReport:
    throughput: float
    fairness: float | None
    energy_efficiency: float | None
    mean_latency: float
    per_user_rate: np.ndarray
    per_user_latency: np.ndarray
    fairness_mode: str

    def to_dict(self) -> dict:
        """JSON-ready summary with stable field names."""
        return {
            "throughput": self.throughput,
            "fairness": self.fairness,
            "energy_efficiency": self.energy_efficiency,
            "mean_latency": self.mean_latency,
            "per_user_rate": [float(x) for x in self.per_user_rate],
            "per_user_latency": [float(x) for x in self.per_user_latency],
            "fairness_mode": self.fairness_mode,
        }


def throughput(traj: TrajectoryRecord) -> float:
    """Time-averaged sum-rate: (1/T) sum_t sum_i R_i(t)."""
    return float(traj.rates.sum(axis=1).mean())


def jain_index(values) -> float:
    """Jain's fairness (sum v)^2 / (N sum v^2), in [1/N, 1].

    Undefined for an all-zero vector; that is reported as missing upstream,
    never coerced to 0.
    """
    v = np.asarray(values, dtype=np.float64)
    if np.any(v < 0):
        raise ValueError(f"jain_index needs non-negative values, got {v}")
    denom = float(np.sum(v * v))
    if denom == 0.0:
        raise MetricUndefined("jain_index undefined for an all-zero vector")
    total = float(np.sum(v))
    return total * total / (v.size * denom)


def energy_efficiency(traj: TrajectoryRecord) -> float:
    """Total bits over total energy across the trajectory."""
    energy = float(traj.powers.sum())
    if energy == 0.0:
        raise MetricUndefined("energy_efficiency undefined with zero total energy")
    return float(traj.rates.sum()) / energy


def mean_latency(traj: TrajectoryRecord) -> tuple[float, np.ndarray]:
    """Grand mean backlog over users and time, plus the per-user means."""
    per_user = traj.queues.mean(axis=0)
    return float(per_user.mean()), per_user


def queue_rate_ratio(traj: TrajectoryRecord) -> np.ndarray:
    """Diagnostic: per-user mean backlog over mean rate (NaN if a user never transmits)."""
    mean_rate = traj.rates.mean(axis=0)
    mean_queue = traj.queues.mean(axis=0)
    return np.divide(
        mean_queue, mean_rate, out=np.full_like(mean_queue, np.nan), where=mean_rate > 0
    )


def per_step_jain(rates: np.ndarray) -> float | None:
    """Mean of per-step Jain over instantaneous rates.

    Steps where every user's rate is zero have no defined fairness and are
    skipped; returns None when no step is defined.
    """
    s1 = rates.sum(axis=1)
    s2 = (rates * rates).sum(axis=1)
    defined = s2 > 0
    if not defined.any():
        return None
    n = rates.shape[1]
    return float(np.mean(s1[defined] ** 2 / (n * s2[defined])))


def build_report(
    traj: TrajectoryRecord, fairness_mode: str = FAIRNESS_PER_STEP
) -> MetricsReport:
    """Assemble all metrics for one trajectory.

    Fairness is either Jain over per-user time-averaged rates, or the time
    average of per-step Jain over instantaneous rates. Undefined aggregates
    (all-zero rates, zero energy) are reported as None.
    """
    if fairness_mode not in FAIRNESS_MODES:
        raise ValueError(f"unknown fairness_mode {fairness_mode!r}")
    per_user_rate = traj.rates.mean(axis=0)
    if fairness_mode == FAIRNESS_ON_AVERAGES:
        try:
            fairness = jain_index(per_user_rate)
        except MetricUndefined:
            fairness = None
    else:
        fairness = per_step_jain(traj.rates)
    try:
        ee = energy_efficiency(traj)
    except MetricUndefined:
        ee = None
    latency, per_user_latency = mean_latency(traj)
    return MetricsReport(
        throughput=throughput(traj),
        fairness=fairness,
        energy_efficiency=ee,
        mean_latency=latency,
        per_user_rate=per_user_rate,
        per_user_latency=per_user_latency,
        fairness_mode=fairness_mode,
    )
