"""Config-driven experiment runner.

Produces the baseline comparison table, DQN training runs, the
epsilon-decay ablation, and the water-filling budget calibration, all as
CSV/JSON files under one output directory. Every run is a pure function of
(config, seed): identical inputs give byte-identical artifacts.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dqn import (
    DqnAgent,
    EpsilonSchedule,
    TrainConfig,
    TrainingLog,
    decode_action_batch,
    evaluate_greedy,
    greedy_action_batch,
    train,
)
from .env import EnvParams, queue_trajectory
from .errors import ConfigError
from .metrics import (
    FAIRNESS_MODES,
    FAIRNESS_PER_STEP,
    MetricsReport,
    TrajectoryRecord,
    build_report,
    queue_rate_ratio,
)
from .neural import load_checkpoint, save_checkpoint
from .policies import (
    FIXED_POWER_W,
    PolicyKind,
    WaterFillConfig,
    myopic_oracle_batch,
    waterfill_allocate_batch,
)
from .rng import rng_streams

TABLE_COLUMNS = ("method", "throughput", "fairness", "energy_efficiency", "mean_latency")
DEFAULT_WF_TARGET_SUM_RATE = 3.859


@dataclass
class ExperimentConfig:
    env: EnvParams = field(default_factory=EnvParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    waterfill: WaterFillConfig | None = None
    policies: list[PolicyKind] = field(
        default_factory=lambda: [
            PolicyKind.FIXED,
            PolicyKind.RANDOM,
            PolicyKind.WATER_FILLING,
            PolicyKind.MYOPIC_ORACLE,
        ]
    )
    evaluation_steps: int = 1_000_000
    greedy_eval_steps: int = 10_000
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    output_directory: Path = Path("results")
    fairness_mode: str = FAIRNESS_PER_STEP

    def __post_init__(self):
        if self.waterfill is None:
            self.waterfill = WaterFillConfig.for_env(self.env)
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.fairness_mode not in FAIRNESS_MODES:
            raise ConfigError(f"unknown fairness_mode {self.fairness_mode!r}")
        if self.evaluation_steps < 1 or self.greedy_eval_steps < 1:
            raise ConfigError("evaluation horizons must be positive")
        self.output_directory = Path(self.output_directory)

    # ---- JSON wiring -------------------------------------------------

    SECTIONS = ("env", "train", "waterfill", "experiment")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - set(cls.SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        env = _build_strict(EnvParams, data.get("env", {}), "env")

        train_data = dict(data.get("train", {}))
        schedule_data = train_data.pop("schedule", {})
        schedule = _build_strict(EpsilonSchedule, schedule_data, "train.schedule")
        train_cfg = _build_strict(
            TrainConfig, {**train_data, "schedule": schedule}, "train"
        )

        wf_data = data.get("waterfill", None)
        waterfill = (
            _build_strict(WaterFillConfig, wf_data, "waterfill")
            if wf_data is not None
            else None
        )

        exp = dict(data.get("experiment", {}))
        if "policies" in exp:
            exp["policies"] = [PolicyKind.from_name(p) for p in exp["policies"]]
        if "output_directory" in exp:
            exp["output_directory"] = Path(exp["output_directory"])
        allowed = {
            "policies",
            "evaluation_steps",
            "greedy_eval_steps",
            "seeds",
            "output_directory",
            "fairness_mode",
        }
        unknown = set(exp) - allowed
        if unknown:
            raise ConfigError(f"unknown keys in experiment section: {sorted(unknown)}")
        return cls(env=env, train=train_cfg, waterfill=waterfill, **exp)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            data = json.load(fh)
        # a run manifest embeds the config under "config"
        if "config" in data and set(data) <= {"config", "package_version", "seed"}:
            data = data["config"]
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        env = dataclasses.asdict(self.env)
        env["power_levels"] = list(env["power_levels"])
        train_cfg = dataclasses.asdict(self.train)
        return {
            "env": env,
            "train": train_cfg,
            "waterfill": dataclasses.asdict(self.waterfill),
            "experiment": {
                "policies": [p.value for p in self.policies],
                "evaluation_steps": self.evaluation_steps,
                "greedy_eval_steps": self.greedy_eval_steps,
                "seeds": list(self.seeds),
                "output_directory": str(self.output_directory),
                "fairness_mode": self.fairness_mode,
            },
        }


def _build_strict(cls, data: dict, section: str):
    """Construct a dataclass from a dict, rejecting unknown keys."""
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {section} section: {sorted(unknown)}")
    if cls is EnvParams and "power_levels" in data:
        data = {**data, "power_levels": tuple(data["power_levels"])}
    return cls(**data)


@dataclass
class RunArtifacts:
    output_directory: Path
    comparison_table: Path | None = None
    manifest_paths: list[Path] = field(default_factory=list)
    training_logs: list[Path] = field(default_factory=list)
    metrics_jsons: list[Path] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


# ---------------------------------------------------------------------------
# policy rollouts
# ---------------------------------------------------------------------------


def rollout_policy(
    kind: PolicyKind,
    params: EnvParams,
    wf_config: WaterFillConfig,
    n_steps: int,
    seed: int,
    agent: DqnAgent | None = None,
) -> TrajectoryRecord:
    """Simulate `n_steps` slots under one policy, vectorized over time.

    Consumes the channel and exploration streams exactly as the step-by-step
    loop would, so looped and vectorized runs of the same seed see identical
    channel realizations. Requires constant arrivals (the default); the
    bernoulli arrival process interleaves draws and needs the step loop.
    """
    if params.arrival_process != "constant":
        raise ConfigError("vectorized rollout supports constant arrivals only")
    streams = rng_streams(seed)
    # one extra row: the step loop samples an initial state, then one per step
    gains_all = streams["channel"].uniform(
        params.h_min, params.h_max, size=(n_steps + 1, params.n_users)
    )
    gains = gains_all[:n_steps]
    levels = params.levels_array

    if kind is PolicyKind.FIXED:
        idx = int(np.argmin(np.abs(levels - FIXED_POWER_W)))
        powers = np.full_like(gains, levels[idx])
    elif kind is PolicyKind.RANDOM:
        lv = streams["exploration"].integers(
            0, params.num_levels, size=(n_steps, params.n_users)
        )
        powers = levels[lv]
    elif kind is PolicyKind.MYOPIC_ORACLE:
        powers = levels[myopic_oracle_batch(gains, params)]
    elif kind is PolicyKind.WATER_FILLING:
        powers = waterfill_allocate_batch(gains, params.noise_power, wf_config)
    elif kind is PolicyKind.LEARNED_GREEDY:
        if agent is None:
            raise ConfigError("rollout of the learned policy needs a trained agent")
        indices = np.concatenate(
            [greedy_action_batch(agent, chunk) for chunk in np.array_split(gains, max(1, n_steps // 4096))]
        )
        lv = decode_action_batch(indices, params.num_levels, params.n_users)
        powers = levels[lv]
    else:
        raise ConfigError(f"unsupported policy {kind}")

    rates = np.log2(1.0 + powers * gains / params.noise_power)
    arrivals = np.full_like(rates, params.arrival_rate)
    queues = queue_trajectory(np.zeros(params.n_users), arrivals, rates)
    return TrajectoryRecord(rates, powers, queues)


def _mean_or_none(values):
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def _average_reports(reports: list[MetricsReport]) -> dict:
    return {
        "throughput": float(np.mean([r.throughput for r in reports])),
        "fairness": _mean_or_none([r.fairness for r in reports]),
        "energy_efficiency": _mean_or_none([r.energy_efficiency for r in reports]),
        "mean_latency": float(np.mean([r.mean_latency for r in reports])),
        "per_user_rate": np.mean([r.per_user_rate for r in reports], axis=0).tolist(),
        "per_user_latency": np.mean(
            [r.per_user_latency for r in reports], axis=0
        ).tolist(),
    }


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_table(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TABLE_COLUMNS)
        for row in rows:
            writer.writerow(
                [row["method"]]
                + [
                    "" if row[c] is None else repr(float(row[c]))
                    for c in TABLE_COLUMNS[1:]
                ]
            )


def _read_table(path: Path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TABLE_COLUMNS:
            raise ValueError(f"unexpected table header in {path}: {header}")
        for raw in reader:
            row = {"method": raw[0]}
            for col, value in zip(TABLE_COLUMNS[1:], raw[1:]):
                row[col] = None if value == "" else float(value)
            rows.append(row)
    return rows


def write_manifest(config: ExperimentConfig, path: Path, seed: int | None = None) -> Path:
    payload = {"config": config.to_dict(), "package_version": __version__}
    if seed is not None:
        payload["seed"] = seed
    _write_json(path, payload)
    return path


# ---------------------------------------------------------------------------
# experiment entry points
# ---------------------------------------------------------------------------


def run_comparison(config: ExperimentConfig) -> list[dict]:
    """Evaluate every configured static policy and emit the comparison table.

    Each (policy, seed) pair is simulated for evaluation_steps slots; metrics
    are averaged across seeds. The learned policy's row is appended later by
    run_training.
    """
    if config.evaluation_steps < 1_000:
        raise ConfigError("evaluation_steps must be >= 1000 for table runs")
    out = config.output_directory
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    detail: dict[str, dict] = {}
    for kind in config.policies:
        if kind is PolicyKind.LEARNED_GREEDY:
            continue  # appended by run_training
        reports = []
        for seed in config.seeds:
            traj = rollout_policy(
                kind, config.env, config.waterfill, config.evaluation_steps, seed
            )
            reports.append(build_report(traj, config.fairness_mode))
        mean = _average_reports(reports)
        rows.append({"method": kind.value, **{c: mean[c] for c in TABLE_COLUMNS[1:]}})
        detail[kind.value] = {
            "per_seed": {
                str(seed): rep.to_dict() for seed, rep in zip(config.seeds, reports)
            },
            "mean": mean,
        }
    _write_table(out / "comparison.csv", rows)
    _write_json(out / "comparison.json", detail)
    write_manifest(config, out / "manifest.json")
    return rows


def build_agent(config: ExperimentConfig, seed: int) -> DqnAgent:
    """Agent for one seeded run; network init consumes the seed's init stream."""
    train_cfg = dataclasses.replace(config.train, seed=seed)
    return DqnAgent(train_cfg, config.env, rng_streams(seed)["init"])


def run_training(config: ExperimentConfig) -> RunArtifacts:
    """Train one agent per seed, evaluate greedily, update the comparison table."""
    out = config.output_directory
    out.mkdir(parents=True, exist_ok=True)
    artifacts = RunArtifacts(output_directory=out)
    reports = []
    for seed in config.seeds:
        run_dir = out / "runs" / f"dqn_seed{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        agent = build_agent(config, seed)

        interval = config.train.checkpoint_interval
        saved: list[Path] = []

        def checkpoint_cb(episode_index, agent_, log_, _run_dir=run_dir, _saved=saved):
            if interval is not None and (episode_index + 1) % interval == 0:
                path = _run_dir / f"checkpoint_ep{episode_index:05d}.bin"
                save_checkpoint(agent_.online, path)
                _saved.append(path)

        log = train(agent, config.env, config.fairness_mode, checkpoint_cb)
        log_path = run_dir / "training_log.csv"
        log.write_csv(log_path)
        final_ckpt = run_dir / "checkpoint_final.bin"
        save_checkpoint(agent.online, final_ckpt)

        episodes = max(1, config.greedy_eval_steps // config.train.episode_length)
        report = evaluate_greedy(
            agent, episodes, config.env, rng_streams(seed)["eval"], config.fairness_mode
        )
        reports.append(report)
        _write_json(run_dir / "metrics.json", report.to_dict())
        manifest = write_manifest(config, run_dir / "manifest.json", seed=seed)

        artifacts.training_logs.append(log_path)
        artifacts.checkpoints.extend(saved + [final_ckpt])
        artifacts.metrics_jsons.append(run_dir / "metrics.json")
        artifacts.manifest_paths.append(manifest)

    mean = _average_reports(reports)
    dqn_row = {
        "method": PolicyKind.LEARNED_GREEDY.value,
        **{c: mean[c] for c in TABLE_COLUMNS[1:]},
    }
    table_path = out / "comparison.csv"
    rows = _read_table(table_path) if table_path.exists() else []
    rows = [r for r in rows if r["method"] != dqn_row["method"]] + [dqn_row]
    _write_table(table_path, rows)
    _write_json(
        out / "dqn_evaluation.json",
        {
            "per_seed": {
                str(seed): rep.to_dict() for seed, rep in zip(config.seeds, reports)
            },
            "mean": mean,
        },
    )
    artifacts.comparison_table = table_path
    return artifacts


def run_ablation(config: ExperimentConfig, decay_rates: list[float]) -> dict:
    """Train one arm per (decay rate, seed) with per-episode exponential decay.

    Emits per-arm training curves plus a summary of final performance (mean
    cumulative reward over the last tenth of episodes), its across-seed
    spread, and the episode at which epsilon first reaches its floor.
    """
    if len(decay_rates) < 2:
        raise ConfigError("ablation needs at least two decay rates")
    if len(config.seeds) < 3:
        raise ConfigError("ablation needs at least three seeds per rate")
    out = config.output_directory / "ablation"
    out.mkdir(parents=True, exist_ok=True)
    base = config.train.schedule
    summary = {}
    for rate in decay_rates:
        finals, variances, floor_eps, mean_eps = [], [], [], []
        for seed in config.seeds:
            schedule = EpsilonSchedule(
                kind="exponential",
                start=base.start,
                end=base.end,
                decay_rate=rate,
            )
            train_cfg = dataclasses.replace(config.train, schedule=schedule, seed=seed)
            arm_config = dataclasses.replace(config, train=train_cfg)
            agent = build_agent(arm_config, seed)
            log = train(agent, config.env, config.fairness_mode)
            log.write_csv(out / f"rate{rate}_seed{seed}.csv")
            rewards = np.asarray(log.cumulative_reward)
            tail = max(1, len(rewards) // 10)
            finals.append(float(rewards[-tail:].mean()))
            variances.append(float(rewards.var()))
            eps = np.asarray(log.epsilon)
            crossed = np.nonzero(eps <= base.end)[0]
            floor_eps.append(int(crossed[0]) if crossed.size else None)
            mean_eps.append(float(eps.mean()))
        summary[repr(float(rate))] = {
            "final_reward_mean": float(np.mean(finals)),
            "final_reward_std": float(np.std(finals)),
            "reward_variance_mean": float(np.mean(variances)),
            "mean_epsilon": float(np.mean(mean_eps)),
            "floor_crossing_episode": (
                None if any(f is None for f in floor_eps) else int(np.mean(floor_eps))
            ),
            "per_seed_final_reward": finals,
        }
    _write_json(out / "summary.json", summary)
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "decay_rate",
                "final_reward_mean",
                "final_reward_std",
                "reward_variance_mean",
                "mean_epsilon",
                "floor_crossing_episode",
            ]
        )
        for rate, row in summary.items():
            writer.writerow(
                [
                    rate,
                    repr(row["final_reward_mean"]),
                    repr(row["final_reward_std"]),
                    repr(row["reward_variance_mean"]),
                    repr(row["mean_epsilon"]),
                    "" if row["floor_crossing_episode"] is None else row["floor_crossing_episode"],
                ]
            )
    return summary


def calibrate_waterfill(
    config: ExperimentConfig,
    budgets: list[float],
    target_sum_rate: float = DEFAULT_WF_TARGET_SUM_RATE,
) -> dict:
    """Monte Carlo sum-rate of continuous water-filling per power budget.

    All budgets share the same channel draws, so the budget-to-rate mapping
    is monotone in the samples, not just in expectation. Reports the budget
    whose mean sum-rate lands closest to target_sum_rate.
    """
    if len(budgets) < 2:
        raise ConfigError("calibration needs at least two budgets")
    out = config.output_directory
    out.mkdir(parents=True, exist_ok=True)
    params = config.env
    gains = rng_streams(config.seeds[0])["channel"].uniform(
        params.h_min, params.h_max, size=(config.evaluation_steps, params.n_users)
    )
    entries = []
    for budget in budgets:
        wf = dataclasses.replace(config.waterfill, total_power=float(budget))
        powers = waterfill_allocate_batch(gains, params.noise_power, wf)
        rates = np.log2(1.0 + powers * gains / params.noise_power)
        entries.append(
            {
                "budget": float(budget),
                "sum_rate": float(rates.sum(axis=1).mean()),
                "energy_efficiency": float(rates.sum() / powers.sum()),
            }
        )
    best = min(entries, key=lambda e: abs(e["sum_rate"] - target_sum_rate))
    result = {
        "target_sum_rate": target_sum_rate,
        "entries": entries,
        "best_budget": best["budget"],
        "best_sum_rate": best["sum_rate"],
    }
    _write_json(out / "calibration.json", result)
    with open(out / "calibration.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["budget", "sum_rate", "energy_efficiency"])
        for e in entries:
            writer.writerow([repr(e["budget"]), repr(e["sum_rate"]), repr(e["energy_efficiency"])])
    return result


def emit_plot_data(output_directory) -> list[Path]:
    """Re-shape run outputs into tidy per-episode and per-user CSVs.

    Writing is idempotent: emitting twice from the same inputs produces
    byte-identical files.
    """
    out = Path(output_directory)
    runs_dir = out / "runs"
    plots = out / "plots"
    if not runs_dir.exists():
        raise FileNotFoundError(f"no training runs under {runs_dir}")
    run_dirs = sorted(runs_dir.iterdir())
    if not run_dirs:
        raise FileNotFoundError(f"no training runs under {runs_dir}")
    plots.mkdir(parents=True, exist_ok=True)

    curves_path = plots / "training_curves.csv"
    with open(curves_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("run",) + TrainingLog.COLUMNS)
        for run_dir in run_dirs:
            log = TrainingLog.read_csv(run_dir / "training_log.csv")
            for row in log.rows():
                writer.writerow(
                    [run_dir.name]
                    + [
                        v if isinstance(v, int) else ("" if v is None else repr(v))
                        for v in row
                    ]
                )

    per_user_path = plots / "per_user.csv"
    sources: list[tuple[str, dict]] = []
    comparison = out / "comparison.json"
    if comparison.exists():
        with open(comparison) as fh:
            for method, block in sorted(json.load(fh).items()):
                sources.append((method, block["mean"]))
    for run_dir in run_dirs:
        with open(run_dir / "metrics.json") as fh:
            sources.append((run_dir.name, json.load(fh)))
    with open(per_user_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "user", "mean_rate", "mean_latency", "latency_rate_ratio"])
        for name, summary in sources:
            rates = summary["per_user_rate"]
            lats = summary["per_user_latency"]
            for user, (rate, lat) in enumerate(zip(rates, lats)):
                ratio = lat / rate if rate > 0 else None
                writer.writerow(
                    [name, user, repr(rate), repr(lat), "" if ratio is None else repr(ratio)]
                )
    return [curves_path, per_user_path]
