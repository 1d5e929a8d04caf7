"""Stochastic multi-user downlink environment.

State is the vector of instantaneous channel gains, actions pick one
discrete transmit power per user, and the reward trades sum-rate against
total transmit power. Channels are fast-fading: the next state is resampled
i.i.d. regardless of the action taken. Queue backlogs are tracked alongside
as a latency proxy but are not part of the agent-visible state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

ARRIVAL_PROCESSES = ("constant", "bernoulli")


@dataclass(frozen=True)
class EnvParams:
    """Environment configuration. Defaults are the reference setup (N=3)."""

    n_users: int = 3
    power_levels: tuple[float, ...] = (0.0, 1.0, 2.0, 3.0)
    noise_power: float = 1.0
    h_min: float = 0.1
    h_max: float = 1.0
    lambda_penalty: float = 0.1
    gamma: float = 0.99
    arrival_rate: float = 0.8
    arrival_process: str = "constant"

    def __post_init__(self):
        if self.n_users < 1:
            raise ConfigError(f"n_users must be positive, got {self.n_users}")
        levels = self.power_levels
        if len(levels) == 0:
            raise ConfigError("power_levels must be non-empty")
        if levels[0] != 0.0:
            raise ConfigError(f"first power level must be 0, got {levels[0]}")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ConfigError(f"power_levels must be strictly increasing: {levels}")
        if self.noise_power <= 0:
            raise ConfigError(f"noise_power must be positive, got {self.noise_power}")
        if not 0 < self.h_min < self.h_max:
            raise ConfigError(
                f"need 0 < h_min < h_max, got h_min={self.h_min} h_max={self.h_max}"
            )
        if self.lambda_penalty < 0:
            raise ConfigError(f"lambda_penalty must be >= 0, got {self.lambda_penalty}")
        if not 0 <= self.gamma < 1:
            raise ConfigError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.arrival_rate < 0:
            raise ConfigError(f"arrival_rate must be >= 0, got {self.arrival_rate}")
        if self.arrival_process not in ARRIVAL_PROCESSES:
            raise ConfigError(f"unknown arrival_process {self.arrival_process!r}")
        if self.arrival_process == "bernoulli" and self.arrival_rate > 1:
            raise ConfigError("bernoulli arrivals require arrival_rate <= 1")

    @property
    def num_levels(self) -> int:
        return len(self.power_levels)

    @property
    def levels_array(self) -> np.ndarray:
        return np.asarray(self.power_levels, dtype=np.float64)


@dataclass
class ChannelState:
    """Instantaneous channel gains, one per user."""

    gains: np.ndarray

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=np.float64)


@dataclass
class ActionVector:
    """Per-user indices into the discrete power-level set."""

    levels: np.ndarray

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=np.int64)


@dataclass
class QueueState:
    """Per-user queue backlogs in bits."""

    backlogs: np.ndarray

    def __post_init__(self):
        self.backlogs = np.asarray(self.backlogs, dtype=np.float64)

    @classmethod
    def zeros(cls, n_users: int) -> "QueueState":
        return cls(np.zeros(n_users))


@dataclass
class StepOutcome:
    rates: np.ndarray
    reward: float
    next_state: ChannelState
    powers_used: np.ndarray
    next_queues: QueueState


def sample_channel(params: EnvParams, rng: np.random.Generator) -> ChannelState:
    """Draw a fresh channel state, gains i.i.d. uniform on [h_min, h_max]."""
    return ChannelState(rng.uniform(params.h_min, params.h_max, size=params.n_users))


def compute_snr(power, gain, noise_power):
    """Received SNR = power * gain / noise_power. Accepts scalars or arrays."""
    if noise_power <= 0:
        raise ConfigError(f"noise_power must be positive, got {noise_power}")
    return power * gain / noise_power


def compute_rate(snr):
    """Spectral efficiency log2(1 + snr) in bits/s/Hz. Accepts scalars or arrays."""
    if np.any(np.asarray(snr) < 0):
        raise ValueError("snr must be non-negative")
    return np.log2(1.0 + snr)


def compute_reward(rates, powers, lambda_penalty: float) -> float:
    """Sum-rate minus lambda-weighted total transmit power."""
    rates = np.asarray(rates, dtype=np.float64)
    powers = np.asarray(powers, dtype=np.float64)
    if rates.shape != powers.shape:
        raise ValueError(f"shape mismatch: rates {rates.shape} vs powers {powers.shape}")
    return float(np.sum(rates) - lambda_penalty * np.sum(powers))


def update_queues(queues: QueueState, arrivals, rates) -> QueueState:
    """One slot of backlog dynamics: q' = max(q + arrivals - rates, 0)."""
    arrivals = np.asarray(arrivals, dtype=np.float64)
    rates = np.asarray(rates, dtype=np.float64)
    q = queues.backlogs
    if not (q.shape == arrivals.shape == rates.shape):
        raise ValueError("queues, arrivals and rates must have equal length")
    if np.any(arrivals < 0) or np.any(rates < 0):
        raise ValueError("arrivals and rates must be non-negative")
    return QueueState(np.maximum(q + arrivals - rates, 0.0))


def draw_arrivals(params: EnvParams, rng: np.random.Generator) -> np.ndarray:
    """Per-user arrivals for one slot, in bits.

    "constant" delivers arrival_rate deterministically; "bernoulli" delivers
    a unit-size packet with probability arrival_rate (same mean).
    """
    if params.arrival_process == "constant":
        return np.full(params.n_users, params.arrival_rate)
    return (rng.random(params.n_users) < params.arrival_rate).astype(np.float64)


def step(
    state: ChannelState,
    action: ActionVector,
    queues: QueueState,
    params: EnvParams,
    rng: np.random.Generator,
) -> StepOutcome:
    """Advance the environment one slot.

    Rates and reward come from the current gains and the chosen powers; the
    next channel state is resampled independently of both. Queues absorb
    this slot's arrivals minus the achieved rates.
    """
    if state.gains.shape != (params.n_users,):
        raise ValueError(f"state has {state.gains.shape[0]} gains, expected {params.n_users}")
    if action.levels.shape != (params.n_users,):
        raise ValueError(f"action has {action.levels.shape[0]} entries, expected {params.n_users}")
    if np.any(action.levels < 0) or np.any(action.levels >= params.num_levels):
        raise ValueError(f"action indices out of range [0, {params.num_levels}): {action.levels}")

    powers = params.levels_array[action.levels]
    rates = compute_rate(compute_snr(powers, state.gains, params.noise_power))
    reward = compute_reward(rates, powers, params.lambda_penalty)
    next_state = sample_channel(params, rng)
    arrivals = draw_arrivals(params, rng)
    next_queues = update_queues(queues, arrivals, rates)
    return StepOutcome(rates, reward, next_state, powers, next_queues)


def queue_trajectory(initial: np.ndarray, arrivals: np.ndarray, rates: np.ndarray) -> np.ndarray:
    """Backlogs after each of T slots, as one vectorized computation.

    Closed form of the iterated update_queues recursion (reflected random
    walk): q_t = max(q_0 + C_t, C_t - min_{k<=t} C_k) with C the cumulative
    sum of arrivals - rates. Row t equals the backlog after slot t.
    """
    x = np.asarray(arrivals, dtype=np.float64) - np.asarray(rates, dtype=np.float64)
    c = np.cumsum(x, axis=0)
    running_min = np.minimum.accumulate(c, axis=0)
    return np.maximum(np.asarray(initial, dtype=np.float64) + c, c - running_min)
