"""Baseline power-allocation strategies.

Three classical baselines (fixed, random, water-filling) plus a brute-force
myopic oracle. The oracle is exact for this environment: the reward is
separable per user and the channel transition ignores the action, so the
one-step greedy choice is also the long-run optimal policy.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .env import ActionVector, ChannelState, EnvParams
from .errors import ConfigError, SolverError

FIXED_POWER_W = 2.0


class PolicyKind(Enum):
    FIXED = "fixed"
    RANDOM = "random"
    WATER_FILLING = "waterfilling"
    MYOPIC_ORACLE = "oracle"
    LEARNED_GREEDY = "dqn"

    @classmethod
    def from_name(cls, name: str) -> "PolicyKind":
        for kind in cls:
            if kind.value == name:
                return kind
        raise ConfigError(
            f"unknown policy {name!r}; expected one of {[k.value for k in cls]}"
        )


@dataclass(frozen=True)
class WaterFillConfig:
    """Water-filling solver settings. total_power is the sum-power budget."""

    total_power: float = 6.0
    tolerance: float = 1e-9
    max_iterations: int = 200

    def __post_init__(self):
        if self.total_power <= 0:
            raise ConfigError(f"total_power must be positive, got {self.total_power}")
        if self.tolerance <= 0:
            raise ConfigError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be >= 1, got {self.max_iterations}")

    @classmethod
    def for_env(cls, params: EnvParams, **kwargs) -> "WaterFillConfig":
        """Default budget of 2 W per user, matching the fixed baseline's total."""
        return cls(total_power=2.0 * params.n_users, **kwargs)


def _nearest_level(target_power: float, levels: np.ndarray) -> int:
    # ties break toward the lower level
    return int(np.argmin(np.abs(levels - target_power)))


def fixed_policy(state: ChannelState, params: EnvParams) -> ActionVector:
    """Every user at the level closest to 2 W, regardless of the state."""
    idx = _nearest_level(FIXED_POWER_W, params.levels_array)
    return ActionVector(np.full(params.n_users, idx, dtype=np.int64))


def random_policy(
    state: ChannelState, params: EnvParams, rng: np.random.Generator
) -> ActionVector:
    """Each user's level drawn uniformly, independent of the state."""
    return ActionVector(rng.integers(0, params.num_levels, size=params.n_users))


def waterfill_allocate(
    state: ChannelState, noise_power: float, config: WaterFillConfig
) -> np.ndarray:
    """Continuous water-filling powers p_i = max(mu - noise/h_i, 0).

    The water level mu is located by bisection until the allocated total is
    within config.tolerance of the budget.
    """
    gains = state.gains
    if np.any(gains <= 0):
        raise ValueError(f"all gains must be positive for water-filling: {gains}")
    lo = noise_power / gains.max()
    hi = noise_power / gains.min() + config.total_power
    residual = np.inf
    for _ in range(config.max_iterations):
        mu = 0.5 * (lo + hi)
        powers = np.maximum(mu - noise_power / gains, 0.0)
        residual = powers.sum() - config.total_power
        if abs(residual) <= config.tolerance:
            return powers
        if residual < 0:
            lo = mu
        else:
            hi = mu
    raise SolverError(
        f"water-filling bisection did not converge in {config.max_iterations} "
        f"iterations; final budget residual {residual:.3e}"
    )


def waterfill_allocate_batch(
    gains: np.ndarray, noise_power: float, config: WaterFillConfig
) -> np.ndarray:
    """Water-filling for many states at once; rows of `gains` are states.

    Runs the same bisection as waterfill_allocate on every row, freezing rows
    as they converge so each row reproduces the scalar solver bit for bit.
    """
    gains = np.asarray(gains, dtype=np.float64)
    if np.any(gains <= 0):
        raise ValueError("all gains must be positive for water-filling")
    n_rows = gains.shape[0]
    lo = noise_power / gains.max(axis=1)
    hi = noise_power / gains.min(axis=1) + config.total_power
    mu = np.full(n_rows, np.nan)
    open_rows = np.arange(n_rows)
    for _ in range(config.max_iterations):
        mid = 0.5 * (lo + hi)
        alloc = np.maximum(mid[:, None] - noise_power / gains[open_rows], 0.0)
        residual = alloc.sum(axis=1) - config.total_power
        done = np.abs(residual) <= config.tolerance
        mu[open_rows[done]] = mid[done]
        keep = ~done
        if not keep.any():
            break
        open_rows = open_rows[keep]
        mid, residual = mid[keep], residual[keep]
        lo, hi = lo[keep], hi[keep]
        low_side = residual < 0
        lo = np.where(low_side, mid, lo)
        hi = np.where(low_side, hi, mid)
    else:
        raise SolverError(
            f"water-filling bisection left {open_rows.size} states unconverged "
            f"after {config.max_iterations} iterations"
        )
    return np.maximum(mu[:, None] - noise_power / gains, 0.0)


def waterfill_policy(
    state: ChannelState, params: EnvParams, config: WaterFillConfig
) -> tuple[ActionVector, np.ndarray]:
    """Water-filling as a policy: continuous powers plus a discrete shadow.

    The continuous allocation is the one used for rate evaluation (this
    baseline is the continuous-power upper bound); the ActionVector is the
    nearest discrete level at or below each power, for diagnostics only.
    """
    powers = waterfill_allocate(state, params.noise_power, config)
    levels = params.levels_array
    # floor to the highest level not exceeding the continuous power
    idx = np.searchsorted(levels, powers, side="right") - 1
    return ActionVector(idx), powers


def myopic_oracle(state: ChannelState, params: EnvParams) -> ActionVector:
    """Per-user argmax of rate minus power penalty over the discrete levels.

    Ties break toward the lower level.
    """
    idx = myopic_oracle_batch(state.gains[None, :], params)[0]
    return ActionVector(idx)


def myopic_oracle_batch(gains: np.ndarray, params: EnvParams) -> np.ndarray:
    """Vectorized myopic oracle; rows of `gains` are states, returns level indices."""
    gains = np.asarray(gains, dtype=np.float64)
    levels = params.levels_array
    value = (
        np.log2(1.0 + gains[..., None] * levels / params.noise_power)
        - params.lambda_penalty * levels
    )
    # np.argmax returns the first maximum: lower level wins ties
    return np.argmax(value, axis=-1)
