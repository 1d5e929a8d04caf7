"""Deep Q-Network agent: joint-action encoding, epsilon-greedy selection,
uniform experience replay, one-step TD targets against a hard-synced target
network, and the sequential training loop.

The environment is continuing, so TD targets carry no terminal masking;
episodes exist only for logging and per-episode epsilon decay.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .env import ActionVector, ChannelState, EnvParams, QueueState, sample_channel, step
from .errors import BufferNotReady, ConfigError, TrainingError
from .metrics import FAIRNESS_PER_STEP, TrajectoryRecord, build_report
from .neural import (
    AdamState,
    MlpNetwork,
    adam_step,
    backward,
    copy_parameters,
    default_layer_dims,
    forward,
    init_network,
    mse_loss,
)
from .rng import rng_streams


def encode_action(action: ActionVector, num_levels: int) -> int:
    """Flatten per-user levels to one joint index; user 0 is least significant."""
    idx = 0
    for level in reversed(action.levels):
        if not 0 <= level < num_levels:
            raise ValueError(f"level {level} out of range [0, {num_levels})")
        idx = idx * num_levels + int(level)
    return idx


def decode_action(index: int, num_levels: int, n_users: int) -> ActionVector:
    """Inverse of encode_action."""
    if not 0 <= index < num_levels**n_users:
        raise ValueError(f"action index {index} out of range [0, {num_levels**n_users})")
    levels = np.empty(n_users, dtype=np.int64)
    for i in range(n_users):
        levels[i] = index % num_levels
        index //= num_levels
    return ActionVector(levels)


def decode_action_batch(indices: np.ndarray, num_levels: int, n_users: int) -> np.ndarray:
    """decode_action for an array of indices; returns (len, n_users) levels."""
    indices = np.asarray(indices, dtype=np.int64)
    return np.stack(
        [(indices // num_levels**i) % num_levels for i in range(n_users)], axis=-1
    )


@dataclass
class Transition:
    state: ChannelState
    action_index: int
    reward: float
    next_state: ChannelState


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity: int = 10_000, n_users: int = 3):
        if capacity < 1:
            raise ConfigError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._states = np.zeros((capacity, n_users))
        self._actions = np.zeros(capacity, dtype=np.int64)
        self._rewards = np.zeros(capacity)
        self._next_states = np.zeros((capacity, n_users))
        self._size = 0
        self.write_cursor = 0

    def __len__(self) -> int:
        return self._size

    def push(self, transition: Transition) -> None:
        """Append; once full the oldest entry is overwritten."""
        cursor = self.write_cursor
        self._states[cursor] = transition.state.gains
        self._actions[cursor] = transition.action_index
        self._rewards[cursor] = transition.reward
        self._next_states[cursor] = transition.next_state.gains
        self.write_cursor = (cursor + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        """batch_size transitions drawn uniformly with replacement."""
        if batch_size > self._size:
            raise BufferNotReady(
                f"buffer holds {self._size} transitions, need {batch_size}"
            )
        idx = rng.integers(0, self._size, size=batch_size)
        return [
            Transition(
                ChannelState(self._states[i].copy()),
                int(self._actions[i]),
                float(self._rewards[i]),
                ChannelState(self._next_states[i].copy()),
            )
            for i in idx
        ]


@dataclass(frozen=True)
class EpsilonSchedule:
    """Exploration-rate schedule.

    "linear" interpolates start -> end over horizon_steps environment steps;
    "exponential" is start * decay_rate**episode, floored at end.
    """

    kind: str = "linear"
    start: float = 1.0
    end: float = 0.05
    horizon_steps: int = 20_000
    decay_rate: float = 0.95

    def __post_init__(self):
        if self.kind not in ("linear", "exponential"):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if not 0 <= self.end <= self.start:
            raise ConfigError(f"need start >= end >= 0, got {self.start}, {self.end}")
        if self.horizon_steps < 1:
            raise ConfigError(f"horizon_steps must be positive, got {self.horizon_steps}")
        if not 0 < self.decay_rate < 1:
            raise ConfigError(f"decay_rate must be in (0, 1), got {self.decay_rate}")

    def value(self, step_index: int, episode_index: int) -> float:
        if self.kind == "linear":
            frac = min(step_index / self.horizon_steps, 1.0)
            return self.start + (self.end - self.start) * frac
        return max(self.end, self.start * self.decay_rate**episode_index)


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 100_000
    episode_length: int = 200
    batch_size: int = 32
    target_sync_period: int = 100
    learning_rate: float = 1e-3
    warmup_steps: int = 0
    replay_capacity: int = 10_000
    seed: int = 0
    schedule: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    grad_clip_norm: float | None = None
    checkpoint_interval: int | None = None  # episodes; None saves only at the end

    def __post_init__(self):
        if self.batch_size > self.replay_capacity:
            raise ConfigError(
                f"batch_size {self.batch_size} exceeds replay_capacity {self.replay_capacity}"
            )
        for name in ("total_steps", "episode_length", "batch_size", "target_sync_period"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.warmup_steps < 0:
            raise ConfigError(f"warmup_steps must be >= 0, got {self.warmup_steps}")


class DqnAgent:
    """Online and target Q-networks plus optimizer state for one training run."""

    def __init__(
        self,
        config: TrainConfig,
        env_params: EnvParams,
        rng: np.random.Generator,
        hidden_dims: tuple[int, ...] = (64, 128),
    ):
        self.config = config
        self.n_users = env_params.n_users
        self.num_levels = env_params.num_levels
        self.num_actions = env_params.num_levels**env_params.n_users
        self.gamma = env_params.gamma
        dims = default_layer_dims(env_params.n_users, env_params.num_levels)
        if hidden_dims != (64, 128):
            dims = [env_params.n_users, *hidden_dims, self.num_actions]
        self.online = init_network(dims, rng)
        self.target = copy_parameters(self.online)
        self.optimizer = AdamState.for_network(self.online)
        self.step_counter = 0


def select_action(
    agent: DqnAgent, state: ChannelState, epsilon: float, rng: np.random.Generator
) -> int:
    """Epsilon-greedy joint-action index; greedy ties break to the lowest index.

    The uniform draw and the candidate random action are consumed from the
    stream unconditionally, so runs that differ only in their epsilon
    schedule stay aligned on every other random stream.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    u = rng.random()
    candidate = int(rng.integers(0, agent.num_actions))
    if u < epsilon:
        return candidate
    q = forward(agent.online, state.gains)
    return int(np.argmax(q))


def greedy_action_batch(agent: DqnAgent, gains: np.ndarray) -> np.ndarray:
    """Greedy joint-action indices for many states at once."""
    q = forward(agent.online, np.asarray(gains, dtype=np.float64))
    return np.argmax(q, axis=1)


def td_targets(
    batch: list[Transition], target_net: MlpNetwork, gamma: float
) -> np.ndarray:
    """One-step targets y = r + gamma * max_a' Q_target(s', a'); no terminal mask."""
    if not 0 <= gamma < 1:
        raise ValueError(f"gamma must be in [0, 1), got {gamma}")
    next_states = np.stack([t.next_state.gains for t in batch])
    rewards = np.array([t.reward for t in batch])
    q_next = forward(target_net, next_states)
    return rewards + gamma * q_next.max(axis=1)


def learn_step(
    agent: DqnAgent, buffer: ReplayBuffer, rng: np.random.Generator
) -> float:
    """One gradient update on a uniformly sampled batch; returns the batch loss.

    Only the taken action's output enters the loss; every other output
    receives exactly zero gradient.
    """
    cfg = agent.config
    batch = buffer.sample(cfg.batch_size, rng)
    states = np.stack([t.state.gains for t in batch])
    actions = np.array([t.action_index for t in batch])
    targets = td_targets(batch, agent.target, agent.gamma)

    q_all = forward(agent.online, states)
    rows = np.arange(len(batch))
    q_taken = q_all[rows, actions]
    loss = mse_loss(q_taken, targets)
    if not np.isfinite(loss):
        raise TrainingError(
            f"non-finite loss at optimizer step {agent.optimizer.step_count}: {loss}"
        )
    grad_out = np.zeros_like(q_all)
    grad_out[rows, actions] = 2.0 * (q_taken - targets) / len(batch)
    grads = backward(agent.online, states, grad_out)
    if cfg.grad_clip_norm is not None:
        norm = grads.global_norm()
        if norm > cfg.grad_clip_norm:
            grads.scale(cfg.grad_clip_norm / norm)
    adam_step(agent.online, grads, agent.optimizer, cfg.learning_rate)
    return loss


def sync_target(agent: DqnAgent) -> None:
    """Hard update: copy the online parameters into the target network."""
    agent.target = copy_parameters(agent.online)


@dataclass
class TrainingLog:
    """Per-episode training history; one row per episode."""

    COLUMNS = (
        "episode",
        "cumulative_reward",
        "mean_loss",
        "epsilon",
        "sum_rate",
        "fairness",
        "energy_efficiency",
        "mean_latency",
    )

    episode: list[int] = field(default_factory=list)
    cumulative_reward: list[float] = field(default_factory=list)
    mean_loss: list[float] = field(default_factory=list)
    epsilon: list[float] = field(default_factory=list)
    sum_rate: list[float] = field(default_factory=list)
    fairness: list[float | None] = field(default_factory=list)
    energy_efficiency: list[float | None] = field(default_factory=list)
    mean_latency: list[float] = field(default_factory=list)

    def n_episodes(self) -> int:
        return len(self.episode)

    def rows(self):
        for i in range(len(self.episode)):
            yield [getattr(self, col)[i] for col in self.COLUMNS]

    def write_csv(self, path) -> None:
        # repr() keeps full float precision so identical runs give identical bytes
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for row in self.rows():
                writer.writerow(["" if v is None else repr(v) for v in row])

    @classmethod
    def read_csv(cls, path) -> "TrainingLog":
        log = cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != cls.COLUMNS:
                raise ValueError(f"unexpected training-log header in {path}: {header}")
            for row in reader:
                log.episode.append(int(row[0]))
                for col, value in zip(cls.COLUMNS[1:], row[1:]):
                    getattr(log, col).append(None if value == "" else float(value))
        return log


def train(
    agent: DqnAgent,
    params: EnvParams,
    fairness_mode: str = FAIRNESS_PER_STEP,
    on_episode_end=None,
) -> TrainingLog:
    """Run the full training loop; deterministic given agent.config.seed.

    Each step: epsilon from the schedule, epsilon-greedy action, one
    environment transition into the replay buffer, one learning update once
    past warmup, and a periodic hard target sync. Episode boundaries are
    bookkeeping only; the environment never resets.

    `on_episode_end(episode_index, agent, log)` is invoked after each
    episode's row is appended, e.g. to save checkpoints.
    """
    cfg = agent.config
    streams = rng_streams(cfg.seed)
    channel_rng = streams["channel"]
    explore_rng = streams["exploration"]
    replay_rng = streams["replay"]

    buffer = ReplayBuffer(cfg.replay_capacity, params.n_users)
    log = TrainingLog()
    state = sample_channel(params, channel_rng)
    queues = QueueState.zeros(params.n_users)

    ep_reward = 0.0
    ep_losses: list[float] = []
    ep_rates, ep_powers, ep_queues = [], [], []
    epsilon = cfg.schedule.value(0, 0)

    for step_index in range(cfg.total_steps):
        episode_index = step_index // cfg.episode_length
        epsilon = cfg.schedule.value(step_index, episode_index)
        action_index = select_action(agent, state, epsilon, explore_rng)
        action = decode_action(action_index, params.num_levels, params.n_users)
        outcome = step(state, action, queues, params, channel_rng)
        buffer.push(Transition(state, action_index, outcome.reward, outcome.next_state))

        if len(buffer) >= cfg.batch_size and step_index >= cfg.warmup_steps:
            ep_losses.append(learn_step(agent, buffer, replay_rng))

        agent.step_counter += 1
        if agent.step_counter % cfg.target_sync_period == 0:
            sync_target(agent)

        ep_reward += outcome.reward
        ep_rates.append(outcome.rates)
        ep_powers.append(outcome.powers_used)
        ep_queues.append(outcome.next_queues.backlogs)
        state = outcome.next_state
        queues = outcome.next_queues

        if (step_index + 1) % cfg.episode_length == 0:
            traj = TrajectoryRecord(
                np.array(ep_rates), np.array(ep_powers), np.array(ep_queues)
            )
            report = build_report(traj, fairness_mode)
            if not np.isfinite(ep_reward):
                raise TrainingError(f"non-finite reward in episode {episode_index}")
            log.episode.append(episode_index)
            log.cumulative_reward.append(ep_reward)
            log.mean_loss.append(float(np.mean(ep_losses)) if ep_losses else None)
            log.epsilon.append(epsilon)
            log.sum_rate.append(report.throughput)
            log.fairness.append(report.fairness)
            log.energy_efficiency.append(report.energy_efficiency)
            log.mean_latency.append(report.mean_latency)
            if on_episode_end is not None:
                on_episode_end(episode_index, agent, log)
            ep_reward = 0.0
            ep_losses = []
            ep_rates, ep_powers, ep_queues = [], [], []

    return log


def evaluate_greedy(
    agent: DqnAgent,
    episodes: int,
    params: EnvParams,
    rng: np.random.Generator,
    fairness_mode: str = FAIRNESS_PER_STEP,
):
    """Run the greedy policy (epsilon=0, no learning) and report metrics.

    Evaluation never mutates the agent; queues start empty.
    """
    n_steps = episodes * agent.config.episode_length
    state = sample_channel(params, rng)
    queues = QueueState.zeros(params.n_users)
    rates = np.empty((n_steps, params.n_users))
    powers = np.empty((n_steps, params.n_users))
    backlogs = np.empty((n_steps, params.n_users))
    for i in range(n_steps):
        action_index = select_action(agent, state, 0.0, rng)
        action = decode_action(action_index, params.num_levels, params.n_users)
        outcome = step(state, action, queues, params, rng)
        rates[i] = outcome.rates
        powers[i] = outcome.powers_used
        backlogs[i] = outcome.next_queues.backlogs
        state = outcome.next_state
        queues = outcome.next_queues
    traj = TrajectoryRecord(rates, powers, backlogs)
    return build_report(traj, fairness_mode)
