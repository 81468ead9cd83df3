"""PPO training of the packing network over vectorized environments."""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import TextIO

import numpy as np
from numpy.typing import NDArray

from packbench.config import TrainConfig, save_config
from packbench.dataset import load_types
from packbench.env import EpisodeConfig, PackingEnv
from packbench.errors import DomainError, NonFiniteLossError, TrainingAborted
from packbench.policy.checkpoint import save_params
from packbench.policy.network import ActMode, ObservationBatch, PolicyParams, act_batch, forward
from packbench.policy.optim import Adam, clip_grad_norm
from packbench.policy.tensor import Tensor, clip, exp, getitem, mean, minimum


logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
CONFIG_FILE = "config.yaml"
FINAL_CHECKPOINT = "final.ckpt"


@dataclass(frozen=True, slots=True)
class EpisodeStats:
    """Summary of one finished training episode."""

    utilization: float
    items: int
    reward: float


@dataclass(frozen=True, slots=True, eq=False)
class Trajectory:
    """Transitions from ``E`` environments over ``T`` steps.

    Per-step arrays have shape ``(T, E)``; ``obs`` holds the ``T * E`` states
    in step-major order. ``last_values`` bootstraps the unfinished tails.
    """

    obs: ObservationBatch
    actions: NDArray[np.int64]
    log_probs: NDArray[np.float64]
    rewards: NDArray[np.float64]
    values: NDArray[np.float64]
    dones: NDArray[np.bool_]
    last_values: NDArray[np.float64]
    episodes: tuple[EpisodeStats, ...] = ()

    def __len__(self) -> int:
        return int(self.actions.size)


def compute_gae(
    rewards: NDArray[np.float64],
    values: NDArray[np.float64],
    dones: NDArray[np.bool_],
    last_values: NDArray[np.float64],
    gamma: float,
    lam: float,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Generalized advantage estimation.

    ``delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t)`` and
    ``A_t = delta_t + gamma * lam * (1 - done_t) * A_{t+1}``.

    Args:
        rewards: ``(T, ...)`` rewards.
        values: ``(T, ...)`` value estimates of the visited states.
        dones: ``(T, ...)`` episode-end flags of each transition.
        last_values: Values of the states following the last step.
        gamma: Discount factor.
        lam: GAE lambda.

    Returns:
        Tuple of raw advantages and returns (``advantages + values``).

    Raises:
        DomainError: If the trajectory is empty or the shapes disagree.
    """
    if rewards.shape[0] == 0:
        raise DomainError("cannot compute advantages of an empty trajectory")
    if not rewards.shape == values.shape == dones.shape or last_values.shape != rewards.shape[1:]:
        raise DomainError("trajectory arrays have inconsistent shapes")

    continues = 1.0 - dones.astype(np.float64)
    advantages = np.zeros_like(rewards, dtype=np.float64)
    next_value = last_values.astype(np.float64)
    running = np.zeros_like(next_value)
    for t in reversed(range(rewards.shape[0])):
        delta = rewards[t] + gamma * next_value * continues[t] - values[t]
        running = delta + gamma * lam * continues[t] * running
        advantages[t] = running
        next_value = values[t]
    return advantages, advantages + values


def normalize_advantages(advantages: NDArray[np.float64]) -> NDArray[np.float64]:
    """Shift and scale to zero mean and unit variance."""
    return (advantages - advantages.mean()) / (advantages.std() + 1e-8)


@dataclass(frozen=True, slots=True, eq=False)
class LossTerms:
    """PPO loss and the diagnostics of one minibatch."""

    loss: Tensor
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_fraction: float

    def diagnostics(self) -> dict[str, float]:
        """Scalar components, e.g. for error reports."""
        return {
            "loss": self.loss.item(),
            "policy_loss": self.policy_loss,
            "value_loss": self.value_loss,
            "entropy": self.entropy,
            "approx_kl": self.approx_kl,
            "clip_fraction": self.clip_fraction,
        }


def ppo_loss(
    params: PolicyParams,
    obs: ObservationBatch,
    actions: NDArray[np.int64],
    old_log_probs: NDArray[np.float64],
    advantages: NDArray[np.float64],
    returns: NDArray[np.float64],
    config: TrainConfig,
) -> LossTerms:
    """Clipped-surrogate PPO loss ``-L_clip + c1 * L_vf - c2 * S`` to be minimized.

    Args:
        params: Current parameters.
        obs: Minibatch states.
        actions: Actions taken.
        old_log_probs: Log-probabilities under the behaviour policy.
        advantages: Advantage estimates, already normalized if desired.
        returns: Value targets.
        config: Supplies ``clip_eps``, ``value_coef`` and ``entropy_coef``.

    Returns:
        Loss tensor and diagnostics.

    Raises:
        NonFiniteLossError: If the loss is NaN or infinite.
    """
    output = forward(obs, params)
    rows = np.arange(len(obs))
    new_log_probs = getitem(output.log_probs, (rows, actions))
    ratio = exp(new_log_probs - old_log_probs)
    eps = config.clip_eps
    surrogate = minimum(ratio * advantages, clip(ratio, 1.0 - eps, 1.0 + eps) * advantages)
    policy_objective = mean(surrogate)

    error = output.value - returns
    value_loss = mean(error * error)
    entropy = mean(output.entropy())

    loss = -policy_objective + config.value_coef * value_loss - config.entropy_coef * entropy

    log_ratio = new_log_probs.data - old_log_probs
    terms = LossTerms(
        loss=loss,
        policy_loss=-policy_objective.item(),
        value_loss=value_loss.item(),
        entropy=entropy.item(),
        approx_kl=float(np.mean(np.expm1(log_ratio) - log_ratio)),
        clip_fraction=float(np.mean(np.abs(ratio.data - 1.0) > eps)),
    )
    if not math.isfinite(loss.item()):
        raise NonFiniteLossError("PPO loss is not finite", terms.diagnostics())
    return terms


def make_envs(config: TrainConfig) -> list[PackingEnv]:
    """Create the training environments, each seeded from the run seed.

    Args:
        config: Training configuration.

    Returns:
        Reset environments.
    """
    types = load_types(config.item_types) if config.item_types is not None else None
    envs = []
    for index in range(config.n_envs):
        episode = EpisodeConfig(
            dims=config.dims,
            ems_capacity=config.ems_cap,
            reward_mode=config.reward_mode,
            seed=config.seed + index,
            types=types,
        )
        env = PackingEnv(episode)
        env.reset()
        envs.append(env)
    return envs


@dataclass(slots=True)
class RolloutCollector:
    """Steps a fixed set of environments with the current policy, resetting finished episodes."""

    envs: Sequence[PackingEnv]
    rng: np.random.Generator
    _returns: NDArray[np.float64] = field(init=False)

    def __post_init__(self) -> None:
        """Start the per-environment reward accumulators at zero."""
        self._returns = np.zeros(len(self.envs))

    def collect(self, params: PolicyParams, steps: int) -> Trajectory:
        """Collect ``steps`` transitions per environment with sampled actions.

        Args:
            params: Behaviour policy parameters.
            steps: Steps per environment.

        Returns:
            Collected trajectory, including the episodes that finished.
        """
        n_envs = len(self.envs)
        observations: list[ObservationBatch] = []
        actions = np.zeros((steps, n_envs), dtype=np.int64)
        log_probs = np.zeros((steps, n_envs))
        rewards = np.zeros((steps, n_envs))
        values = np.zeros((steps, n_envs))
        dones = np.zeros((steps, n_envs), dtype=bool)
        episodes: list[EpisodeStats] = []

        for env in self.envs:
            if env.done or env.state is None:
                env.reset()

        for t in range(steps):
            obs = ObservationBatch.from_states([env.state for env in self.envs if env.state is not None])
            step_actions, step_log_probs, step_values = act_batch(obs, params, ActMode.SAMPLE, self.rng)
            observations.append(obs)
            actions[t], log_probs[t], values[t] = step_actions, step_log_probs, step_values

            for e, env in enumerate(self.envs):
                result = env.step(int(step_actions[e]))
                rewards[t, e] = result.reward
                dones[t, e] = result.done
                self._returns[e] += result.reward
                if result.done:
                    episodes.append(EpisodeStats(env.utilization(), env.packed_count(), float(self._returns[e])))
                    self._returns[e] = 0.0
                    env.reset()

        tail = ObservationBatch.from_states([env.state for env in self.envs if env.state is not None])
        _, _, last_values = act_batch(tail, params, ActMode.GREEDY, self.rng)
        stacked = ObservationBatch(
            ems=np.concatenate([o.ems for o in observations]),
            valid=np.concatenate([o.valid for o in observations]),
            item=np.concatenate([o.item for o in observations]),
            mask=np.concatenate([o.mask for o in observations]),
        )
        return Trajectory(stacked, actions, log_probs, rewards, values, dones, last_values, tuple(episodes))


def collect_rollouts(
    envs: Sequence[PackingEnv],
    params: PolicyParams,
    steps: int,
    rng: np.random.Generator,
) -> Trajectory:
    """One-shot rollout collection; see :class:`RolloutCollector` for streaming use.

    Args:
        envs: Environments, reset or mid-episode.
        params: Behaviour policy parameters.
        steps: Steps per environment.
        rng: Action sampling generator.

    Returns:
        Collected trajectory.
    """
    return RolloutCollector(envs, rng).collect(params, steps)


def linear_lr(lr0: float, progress: float) -> float:
    """Learning rate decayed linearly from ``lr0`` at progress 0 to zero at progress 1."""
    return lr0 * max(0.0, 1.0 - progress)


@dataclass(frozen=True, slots=True)
class UpdateMetrics:
    """One row of the metrics CSV."""

    update: int
    env_steps: int
    episodes: int
    mean_utilization: float | None
    mean_items: float | None
    mean_reward: float | None
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_fraction: float
    grad_norm: float
    lr: float


METRICS_COLUMNS = tuple(f.name for f in fields(UpdateMetrics))


def update_policy(
    params: PolicyParams,
    optimizer: Adam,
    trajectory: Trajectory,
    config: TrainConfig,
    rng: np.random.Generator,
) -> tuple[LossTerms, float]:
    """Run ``ppo_epochs`` passes of minibatch updates over one trajectory.

    Args:
        params: Parameters, updated in place.
        optimizer: Optimizer bound to ``params``.
        trajectory: Collected transitions.
        config: Training configuration.
        rng: Minibatch shuffling generator.

    Returns:
        Tuple of the last minibatch's loss terms and its pre-clip gradient norm.

    Raises:
        NonFiniteLossError: If a loss or gradient norm is not finite.
    """
    advantages, returns = compute_gae(
        trajectory.rewards,
        trajectory.values,
        trajectory.dones,
        trajectory.last_values,
        config.gamma,
        config.gae_lambda,
    )
    flat_adv = advantages.reshape(-1)
    flat_ret = returns.reshape(-1)
    flat_actions = trajectory.actions.reshape(-1)
    flat_log_probs = trajectory.log_probs.reshape(-1)

    size = len(trajectory)
    terms: LossTerms | None = None
    grad_norm = 0.0
    for _ in range(config.ppo_epochs):
        order = rng.permutation(size)
        for start in range(0, size, config.batch_size):
            index = order[start : start + config.batch_size]
            batch_adv = flat_adv[index]
            if config.norm_adv and index.size > 1:
                batch_adv = normalize_advantages(batch_adv)
            params.zero_grad()
            terms = ppo_loss(
                params,
                trajectory.obs.take(index),
                flat_actions[index],
                flat_log_probs[index],
                batch_adv,
                flat_ret[index],
                config,
            )
            terms.loss.backward()
            grad_norm = clip_grad_norm(params, config.max_grad_norm)
            if not math.isfinite(grad_norm):
                raise NonFiniteLossError("gradient norm is not finite", terms.diagnostics())
            optimizer.step()
    params.zero_grad()
    if terms is None:
        raise DomainError("trajectory produced no minibatch")
    return terms, grad_norm


def _mean(values: Sequence[float]) -> float | None:
    return float(np.mean(values)) if values else None


def _write_metrics_row(writer: csv.DictWriter[str], handle: TextIO, metrics: UpdateMetrics) -> None:
    row = {key: ("" if value is None else value) for key, value in asdict(metrics).items()}
    writer.writerow(row)
    handle.flush()


@dataclass(frozen=True, slots=True)
class TrainResult:
    """Artefacts of a finished training run."""

    final_checkpoint: Path
    metrics_path: Path
    updates: int


def train(
    config: TrainConfig,
    on_update: Callable[[UpdateMetrics], None] | None = None,
) -> TrainResult:
    """Train a policy, writing the resolved config, checkpoints and metrics to ``config.out_dir``.

    Args:
        config: Training configuration.
        on_update: Called after every update, e.g. to drive a progress bar.

    Returns:
        Paths of the final checkpoint and the metrics CSV.

    Raises:
        TrainingAborted: If a loss or gradient turns non-finite; carries the last good checkpoint.
    """
    out_dir = config.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(config, out_dir / CONFIG_FILE)

    params = PolicyParams.init(config.policy, seed=config.seed)
    optimizer = Adam(params, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    collector = RolloutCollector(make_envs(config), rng)

    per_update = config.transitions_per_update
    updates = math.ceil(config.total_steps / per_update)
    last_good = out_dir / "checkpoint-0.ckpt"
    save_params(params, last_good)
    logger.info(
        "Training %d updates of %d transitions on a %s bin (%s, %d parameters)",
        updates,
        per_update,
        config.bin,
        config.policy.ablation,
        params.parameter_count(),
    )

    metrics_path = out_dir / METRICS_FILE
    with metrics_path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
        for update in range(1, updates + 1):
            env_steps = (update - 1) * per_update
            optimizer.lr = linear_lr(config.lr, env_steps / config.total_steps)
            trajectory = collector.collect(params, config.steps_per_update)
            try:
                terms, grad_norm = update_policy(params, optimizer, trajectory, config, rng)
            except NonFiniteLossError as e:
                logger.error("Update %d produced a non-finite loss: %s", update, e.diagnostics)
                raise TrainingAborted(f"training aborted at update {update}: {e}", last_good) from e

            metrics = UpdateMetrics(
                update=update,
                env_steps=env_steps + per_update,
                episodes=len(trajectory.episodes),
                mean_utilization=_mean([ep.utilization for ep in trajectory.episodes]),
                mean_items=_mean([ep.items for ep in trajectory.episodes]),
                mean_reward=_mean([ep.reward for ep in trajectory.episodes]),
                policy_loss=terms.policy_loss,
                value_loss=terms.value_loss,
                entropy=terms.entropy,
                approx_kl=terms.approx_kl,
                clip_fraction=terms.clip_fraction,
                grad_norm=grad_norm,
                lr=optimizer.lr,
            )
            _write_metrics_row(writer, handle, metrics)
            logger.info(
                "Update %d/%d: %d steps, Uti %s, policy %.4f, value %.4f, entropy %.3f, lr %.2e",
                update,
                updates,
                metrics.env_steps,
                "-" if metrics.mean_utilization is None else f"{metrics.mean_utilization:.3f}",
                metrics.policy_loss,
                metrics.value_loss,
                metrics.entropy,
                metrics.lr,
            )

            if update % config.checkpoint_every == 0:
                last_good = out_dir / f"checkpoint-{update}.ckpt"
                save_params(params, last_good)
                logger.info("Saved %s", last_good)
            if on_update is not None:
                on_update(metrics)

    final = out_dir / FINAL_CHECKPOINT
    save_params(params, final)
    logger.info("Training finished after %d updates; final checkpoint %s", updates, final)
    return TrainResult(final, metrics_path, updates)
