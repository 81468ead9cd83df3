"""Actor-critic packing network built on :mod:`packbench.policy.tensor`.

Inputs are batched: EMS rows ``(B, N, 6)``, item rows ``(B, 2, 3)``, EMS
validity ``(B, N)`` and the action mask ``(B, 2N)``. A single state is a
batch of one. No parameter depends on ``N`` or on the bin size, so one
checkpoint serves every bin.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import NDArray

from packbench.config import Ablation, PolicyConfig
from packbench.errors import DomainError, NoFeasibleActionError
from packbench.policy.tensor import (
    Tensor,
    concat,
    exp,
    getitem,
    layer_norm,
    leaky_relu,
    log_softmax,
    no_grad,
    orthogonal,
    reshape,
    softmax,
    total,
    transpose,
    where,
)


if TYPE_CHECKING:
    from packbench.env import PackingEnv, PackState


logger = logging.getLogger(__name__)

EMS_FEATURES = 6
ITEM_FEATURES = 3
MASK_FILL = -1e9
HIDDEN_GAIN = math.sqrt(2.0)
ACTOR_GAIN = 0.01
CRITIC_GAIN = 1.0

_ATTENTION_SUBLAYERS = ("ems_self", "item_self", "ems_to_item", "item_to_ems")
_NORMS = (
    "ems_self",
    "ems_mlp",
    "item_self",
    "item_mlp",
    "ems_cross",
    "item_cross",
    "ems_cross_mlp",
    "item_cross_mlp",
)
_MLPS = ("ems_mlp", "item_mlp", "ems_cross_mlp", "item_cross_mlp")


class ActMode(StrEnum):
    """How an action is drawn from the policy distribution."""

    SAMPLE = "sample"
    GREEDY = "greedy"


@dataclass(slots=True)
class PolicyParams:
    """Named parameter tensors plus the config that shaped them."""

    config: PolicyConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def init(cls, config: PolicyConfig, seed: int = 0) -> PolicyParams:
        """Create freshly initialized parameters.

        Weights are orthogonal (gain sqrt(2) for hidden layers, 0.01 for the
        actor projections' output layers, 1 for the critic output); biases and
        layer-norm offsets are zero, layer-norm scales one.

        Args:
            config: Network shape.
            seed: Initialization seed.

        Returns:
            Parameters.
        """
        rng = np.random.default_rng(seed)
        params = cls(config)
        d = config.embed_dim

        params._linear(rng, "ems_encoder.0", EMS_FEATURES, d, HIDDEN_GAIN)
        params._linear(rng, "ems_encoder.1", d, d, HIDDEN_GAIN)
        params._linear(rng, "item_encoder.0", ITEM_FEATURES, d, HIDDEN_GAIN)
        params._linear(rng, "item_encoder.1", d, d, HIDDEN_GAIN)

        if config.ablation is not Ablation.NO_PT:
            for b in range(config.blocks):
                prefix = f"blocks.{b}"
                for sublayer in _ATTENTION_SUBLAYERS:
                    if config.ablation is Ablation.MLP_MIXER:
                        params._mlp(rng, f"{prefix}.{sublayer}.mix", d)
                    else:
                        for proj in ("q", "k", "v", "o"):
                            params._linear(rng, f"{prefix}.{sublayer}.{proj}", d, d, HIDDEN_GAIN)
                for mlp in _MLPS:
                    params._mlp(rng, f"{prefix}.{mlp}", d)
                for norm in _NORMS:
                    params.tensors[f"{prefix}.norm.{norm}.gamma"] = Tensor(np.ones(d), requires_grad=True)
                    params.tensors[f"{prefix}.norm.{norm}.beta"] = Tensor(np.zeros(d), requires_grad=True)

        for head in ("item", "ems"):
            params._linear(rng, f"actor.{head}.0", d, d, HIDDEN_GAIN)
            params._linear(rng, f"actor.{head}.1", d, d, ACTOR_GAIN)
        params._linear(rng, "critic.0", 2 * d, d, HIDDEN_GAIN)
        params._linear(rng, "critic.1", d, 1, CRITIC_GAIN)

        logger.debug("Initialized %d parameters (%s, seed %d)", params.parameter_count(), config.ablation, seed)
        return params

    def _linear(self, rng: np.random.Generator, name: str, fan_in: int, fan_out: int, gain: float) -> None:
        self.tensors[f"{name}.weight"] = Tensor(orthogonal(rng, (fan_in, fan_out), gain), requires_grad=True)
        self.tensors[f"{name}.bias"] = Tensor(np.zeros(fan_out), requires_grad=True)

    def _mlp(self, rng: np.random.Generator, name: str, width: int) -> None:
        self._linear(rng, f"{name}.0", width, width, HIDDEN_GAIN)
        self._linear(rng, f"{name}.1", width, width, HIDDEN_GAIN)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.tensors.values())

    def parameter_count(self) -> int:
        """Total number of scalar parameters."""
        return sum(t.data.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        """Drop every accumulated gradient."""
        for tensor in self.tensors.values():
            tensor.zero_grad()


@dataclass(frozen=True, slots=True, eq=False)
class ObservationBatch:
    """Stacked network inputs for ``B`` states."""

    ems: NDArray[np.float64]
    valid: NDArray[np.bool_]
    item: NDArray[np.float64]
    mask: NDArray[np.bool_]

    @classmethod
    def from_states(cls, states: Sequence[PackState]) -> ObservationBatch:
        """Stack environment states.

        Args:
            states: States sharing one EMS capacity.

        Returns:
            Batched observation.

        Raises:
            DomainError: If the list is empty or capacities differ.
        """
        if not states:
            raise DomainError("cannot batch an empty list of states")
        capacities = {s.bin.capacity for s in states}
        if len(capacities) != 1:
            raise DomainError(f"states have different EMS capacities: {sorted(capacities)}")
        return cls(
            ems=np.stack([s.bin.rows for s in states]),
            valid=np.stack([s.bin.valid for s in states]),
            item=np.stack([s.item for s in states]),
            mask=np.stack([s.mask.flat() for s in states]),
        )

    def __len__(self) -> int:
        return int(self.ems.shape[0])

    def take(self, index: NDArray[np.intp]) -> ObservationBatch:
        """Select a sub-batch.

        Args:
            index: Row indices.

        Returns:
            Sub-batch.
        """
        return ObservationBatch(self.ems[index], self.valid[index], self.item[index], self.mask[index])


@dataclass(frozen=True, slots=True, eq=False)
class PolicyOutput:
    """Masked logits, log-probabilities and state values for a batch.

    Masked entries carry :data:`MASK_FILL` as logit, so their probability
    underflows to exactly zero.
    """

    logits: Tensor
    log_probs: Tensor
    value: Tensor

    @property
    def probs(self) -> NDArray[np.float64]:
        """Action probabilities, ``(B, 2N)``."""
        return np.exp(self.log_probs.data)

    def entropy(self) -> Tensor:
        """Per-state entropy of the action distribution, ``(B,)``."""
        return -total(exp(self.log_probs) * self.log_probs, axis=-1)


def linear(x: Tensor, params: PolicyParams, name: str) -> Tensor:
    """Affine map ``x @ W + b`` applied to the last axis."""
    return x @ params[f"{name}.weight"] + params[f"{name}.bias"]


def mlp(x: Tensor, params: PolicyParams, name: str) -> Tensor:
    """Two linear layers with a LeakyReLU between them."""
    hidden = leaky_relu(linear(x, params, f"{name}.0"), params.config.leaky_slope)
    return linear(hidden, params, f"{name}.1")


def encode(batch: ObservationBatch, params: PolicyParams) -> tuple[Tensor, Tensor]:
    """Embed EMS rows and item rows with separate row-wise MLPs.

    Args:
        batch: Network inputs.
        params: Parameters.

    Returns:
        Tuple of ``(B, N, d)`` EMS embeddings and ``(B, 2, d)`` item embeddings.

    Raises:
        DomainError: If the input shapes are not ``(B, N, 6)`` and ``(B, 2, 3)``.
    """
    if batch.ems.ndim != 3 or batch.ems.shape[-1] != EMS_FEATURES:
        raise DomainError(f"EMS input must be (B, N, {EMS_FEATURES}), got {batch.ems.shape}")
    if batch.item.shape[1:] != (2, ITEM_FEATURES) or batch.item.shape[0] != batch.ems.shape[0]:
        raise DomainError(f"item input must be (B, 2, {ITEM_FEATURES}), got {batch.item.shape}")
    return mlp(Tensor(batch.ems), params, "ems_encoder"), mlp(Tensor(batch.item), params, "item_encoder")


def attention(query: Tensor, key: Tensor, value: Tensor, key_valid: NDArray[np.bool_], heads: int = 1) -> Tensor:
    """Scaled dot-product attention with invalid keys excluded from the softmax.

    Args:
        query: ``(B, a, d)``.
        key: ``(B, b, d)``.
        value: ``(B, b, d)``.
        key_valid: ``(B, b)`` booleans.
        heads: Number of heads splitting ``d``.

    Returns:
        ``(B, a, d)`` attended values.

    Raises:
        DomainError: If a batch row has no valid key or ``d`` is not divisible by ``heads``.
    """
    width = query.shape[-1]
    if width % heads:
        raise DomainError(f"width {width} is not divisible by {heads} heads")
    if not np.all(key_valid.any(axis=-1)):
        raise DomainError("attention needs at least one valid key per batch row")

    head_dim = width // heads
    keep = key_valid[:, None, :]
    outputs = []
    for h in range(heads):
        cols = slice(h * head_dim, (h + 1) * head_dim)
        q = getitem(query, (Ellipsis, cols)) if heads > 1 else query
        k = getitem(key, (Ellipsis, cols)) if heads > 1 else key
        v = getitem(value, (Ellipsis, cols)) if heads > 1 else value
        scores = (q @ transpose(k)) * (1.0 / math.sqrt(head_dim))
        weights = softmax(where(keep, scores, MASK_FILL), axis=-1)
        outputs.append(weights @ v)
    return outputs[0] if heads == 1 else concat(outputs, axis=-1)


def attention_layer(
    query_rows: Tensor,
    key_rows: Tensor,
    key_valid: NDArray[np.bool_],
    params: PolicyParams,
    name: str,
) -> Tensor:
    """Projected attention sublayer, or its row-wise MLP stand-in for the mixer ablation."""
    if params.config.ablation is Ablation.MLP_MIXER:
        return mlp(query_rows, params, f"{name}.mix")
    attended = attention(
        linear(query_rows, params, f"{name}.q"),
        linear(key_rows, params, f"{name}.k"),
        linear(key_rows, params, f"{name}.v"),
        key_valid,
        params.config.heads,
    )
    return linear(attended, params, f"{name}.o")


def _add_norm(x: Tensor, update: Tensor, params: PolicyParams, name: str) -> Tensor:
    return layer_norm(x + update, params[f"{name}.gamma"], params[f"{name}.beta"], params.config.ln_eps)


def packing_transformer(
    ems: Tensor,
    item: Tensor,
    valid: NDArray[np.bool_],
    params: PolicyParams,
) -> tuple[Tensor, Tensor]:
    """Mix EMS and item embeddings through the stacked blocks.

    Each block runs EMS self-attention then item self-attention, each followed
    by an MLP, then cross-attention in both directions from the same inputs,
    each followed by an MLP. Every sublayer is wrapped as
    ``LayerNorm(x + sublayer(x))``. Padded EMS rows are never used as keys.

    Args:
        ems: ``(B, N, d)`` EMS embeddings.
        item: ``(B, 2, d)`` item embeddings.
        valid: ``(B, N)`` EMS validity.
        params: Parameters.

    Returns:
        Tuple of EMS features and item features, same shapes as the inputs.
    """
    if params.config.ablation is Ablation.NO_PT:
        return ems, item

    item_valid = np.ones(item.shape[:2], dtype=bool)
    for b in range(params.config.blocks):
        prefix = f"blocks.{b}"
        norm = f"{prefix}.norm"

        ems = _add_norm(ems, attention_layer(ems, ems, valid, params, f"{prefix}.ems_self"), params, f"{norm}.ems_self")
        ems = _add_norm(ems, mlp(ems, params, f"{prefix}.ems_mlp"), params, f"{norm}.ems_mlp")
        item = _add_norm(
            item, attention_layer(item, item, item_valid, params, f"{prefix}.item_self"), params, f"{norm}.item_self"
        )
        item = _add_norm(item, mlp(item, params, f"{prefix}.item_mlp"), params, f"{norm}.item_mlp")

        ems_cross = _add_norm(
            ems, attention_layer(ems, item, item_valid, params, f"{prefix}.ems_to_item"), params, f"{norm}.ems_cross"
        )
        item_cross = _add_norm(
            item, attention_layer(item, ems, valid, params, f"{prefix}.item_to_ems"), params, f"{norm}.item_cross"
        )
        ems = _add_norm(ems_cross, mlp(ems_cross, params, f"{prefix}.ems_cross_mlp"), params, f"{norm}.ems_cross_mlp")
        item = _add_norm(
            item_cross, mlp(item_cross, params, f"{prefix}.item_cross_mlp"), params, f"{norm}.item_cross_mlp"
        )
    return ems, item


def actor(ems: Tensor, item: Tensor, mask: NDArray[np.bool_], params: PolicyParams) -> Tensor:
    """Score every (orientation, EMS) pair and mask infeasible ones.

    Args:
        ems: ``(B, N, d)`` EMS features.
        item: ``(B, 2, d)`` item features.
        mask: ``(B, 2N)`` flat action mask.
        params: Parameters.

    Returns:
        ``(B, 2N)`` logits in row-major (orientation, EMS) order; masked entries
        equal :data:`MASK_FILL`.
    """
    item_proj = mlp(item, params, "actor.item")
    ems_proj = mlp(ems, params, "actor.ems")
    scores = item_proj @ transpose(ems_proj)
    flat = reshape(scores, (scores.shape[0], -1))
    return where(mask, flat, MASK_FILL)


def critic(ems: Tensor, item: Tensor, valid: NDArray[np.bool_], params: PolicyParams) -> Tensor:
    """Estimate the state value from pooled features.

    Args:
        ems: ``(B, N, d)`` EMS features.
        item: ``(B, 2, d)`` item features.
        valid: ``(B, N)`` EMS validity; padding is left out of the pool.
        params: Parameters.

    Returns:
        ``(B,)`` values.
    """
    weights = valid.astype(np.float64)[:, :, None]
    counts = np.maximum(weights.sum(axis=1), 1.0)
    ems_pool = total(ems * weights, axis=1) / counts
    item_pool = total(item, axis=1) * (1.0 / item.shape[1])
    pooled = concat([ems_pool, item_pool], axis=-1)
    value = mlp(pooled, params, "critic")
    return reshape(value, (value.shape[0],))


def forward(batch: ObservationBatch, params: PolicyParams) -> PolicyOutput:
    """Run the full actor-critic network.

    Args:
        batch: Network inputs.
        params: Parameters.

    Returns:
        Logits, log-probabilities and values.
    """
    ems, item = encode(batch, params)
    ems, item = packing_transformer(ems, item, batch.valid, params)
    logits = actor(ems, item, batch.mask, params)
    return PolicyOutput(logits, log_softmax(logits, axis=-1), critic(ems, item, batch.valid, params))


def act_batch(
    batch: ObservationBatch,
    params: PolicyParams,
    mode: ActMode,
    rng: np.random.Generator,
) -> tuple[NDArray[np.int64], NDArray[np.float64], NDArray[np.float64]]:
    """Choose one action per state without recording a graph.

    Sampling draws only among mask-valid indices; greedy takes the first
    maximal logit.

    Args:
        batch: Network inputs.
        params: Parameters.
        mode: Sample or greedy.
        rng: Random generator for sampling.

    Returns:
        Tuple of actions, their log-probabilities and the state values.

    Raises:
        NoFeasibleActionError: If a state has an all-false mask.
    """
    if not np.all(batch.mask.any(axis=-1)):
        raise NoFeasibleActionError("a state in the batch has no feasible action")

    with no_grad():
        output = forward(batch, params)

    log_probs = output.log_probs.data
    actions = np.empty(len(batch), dtype=np.int64)
    for i in range(len(batch)):
        if mode is ActMode.GREEDY:
            actions[i] = int(np.argmax(output.logits.data[i]))
        else:
            candidates = np.flatnonzero(batch.mask[i])
            p = np.exp(log_probs[i, candidates])
            actions[i] = int(rng.choice(candidates, p=p / p.sum()))
    chosen = log_probs[np.arange(len(batch)), actions]
    return actions, chosen, output.value.data.copy()


def act(
    state: PackState,
    params: PolicyParams,
    mode: ActMode,
    rng: np.random.Generator,
) -> tuple[int, float, float]:
    """Choose an action for one state.

    Args:
        state: Environment state.
        params: Parameters.
        mode: Sample or greedy.
        rng: Random generator for sampling.

    Returns:
        Tuple of action, its log-probability and the state value.
    """  # noqa: DOC502
    actions, log_probs, values = act_batch(ObservationBatch.from_states([state]), params, mode, rng)
    return int(actions[0]), float(log_probs[0]), float(values[0])


class NeuralPolicy:
    """Trained network exposed through the :class:`~packbench.heuristics.Policy` interface."""

    def __init__(
        self,
        params: PolicyParams,
        name: str = "neural",
        mode: ActMode = ActMode.GREEDY,
        seed: int | None = None,
    ) -> None:
        """Wrap parameters for evaluation.

        Args:
            params: Network parameters.
            name: Policy name in reports.
            mode: Greedy for evaluation, sample for stochastic rollouts.
            seed: Sampling seed.
        """
        self.params = params
        self.name = name
        self.mode = mode
        self._rng = np.random.default_rng(seed)

    def begin_episode(self, seed: int | None) -> None:
        """Reseed sampling for a new episode.

        Args:
            seed: Episode seed.
        """
        if seed is not None:
            self._rng = np.random.default_rng(seed)

    def act(self, env: PackingEnv) -> int:
        """Choose an action for the environment's current state.

        Args:
            env: Environment with an active episode.

        Returns:
            Mask-valid action.

        Raises:
            NoFeasibleActionError: If the episode has no current state.
        """
        if env.state is None:
            raise NoFeasibleActionError("environment has no active episode")
        action, _, _ = act(env.state, self.params, self.mode, self._rng)
        return action
