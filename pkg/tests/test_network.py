import math

import numpy as np
import pytest
from pydantic import ValidationError

from packbench.bin import Heightmap, ItemDims, check_feasible
from packbench.config import Ablation, PolicyConfig
from packbench.env import EpisodeConfig, PackingEnv
from packbench.errors import DomainError, NoFeasibleActionError
from packbench.policy.network import (
    MASK_FILL,
    ActMode,
    NeuralPolicy,
    ObservationBatch,
    PolicyParams,
    act,
    act_batch,
    attention,
    encode,
    forward,
)
from packbench.policy.tensor import Tensor, no_grad, total


def random_batch(size: int = 2, capacity: int = 12, real: int = 7, seed: int = 0) -> ObservationBatch:
    """Random observations: the first ``real`` EMS rows are valid, the rest are zero padding."""
    rng = np.random.default_rng(seed)
    ems = np.zeros((size, capacity, 6))
    ems[:, :real, :3] = rng.uniform(0.0, 0.5, (size, real, 3))
    ems[:, :real, 3:] = ems[:, :real, :3] + rng.uniform(0.1, 0.5, (size, real, 3))
    valid = np.zeros((size, capacity), dtype=bool)
    valid[:, :real] = True
    grid = np.zeros((size, 2, capacity), dtype=bool)
    grid[:, :, :real] = rng.random((size, 2, real)) < 0.6
    grid[:, 0, 0] = True
    item = rng.uniform(0.1, 0.5, (size, 1, 3)).repeat(2, axis=1)
    item[:, 1, :2] = item[:, 0, 1::-1]
    return ObservationBatch(ems, valid, item, grid.reshape(size, -1))


def run(batch, params):
    with no_grad():
        return forward(batch, params)


def test_output_shapes(tiny_params):
    output = run(random_batch(size=3), tiny_params)

    assert output.logits.shape == (3, 24)
    assert output.log_probs.shape == (3, 24)
    assert output.value.shape == (3,)


def test_probabilities_respect_the_mask(tiny_params):
    batch = random_batch()

    output = run(batch, tiny_params)

    assert np.allclose(output.probs.sum(axis=-1), 1.0)
    assert np.all(output.probs[~batch.mask] == 0.0)
    assert np.all(output.logits.data[~batch.mask] == MASK_FILL)
    assert np.all(np.isfinite(output.entropy().data))


def test_forward_on_environment_states(tiny_params, make_state, block_scene, bin10):
    states = [make_state(Heightmap.empty(bin10), ItemDims(2, 3, 4)), make_state(block_scene, ItemDims(1, 1, 1))]

    output = run(ObservationBatch.from_states(states), tiny_params)

    assert output.logits.shape == (2, 160)
    assert np.flatnonzero(output.probs[0]).tolist() == [0, 80]


def test_batching_rejects_mixed_capacities(make_state, bin10):
    hm = Heightmap.empty(bin10)
    states = [make_state(hm, ItemDims(1, 1, 1), 80), make_state(hm, ItemDims(1, 1, 1), 40)]

    with pytest.raises(DomainError):
        ObservationBatch.from_states(states)
    with pytest.raises(DomainError):
        ObservationBatch.from_states([])


def test_permuting_ems_rows_permutes_logits(tiny_params):
    batch = random_batch(size=1, capacity=10, real=7)
    perm = np.random.default_rng(3).permutation(10)
    grid = batch.mask.reshape(1, 2, 10)
    permuted = ObservationBatch(batch.ems[:, perm], batch.valid[:, perm], batch.item, grid[:, :, perm].reshape(1, -1))

    base = run(batch, tiny_params)
    moved = run(permuted, tiny_params)

    expected = base.logits.data.reshape(1, 2, 10)[:, :, perm].reshape(1, -1)
    assert np.allclose(moved.logits.data, expected, atol=1e-9)
    assert np.allclose(moved.value.data, base.value.data, atol=1e-9)


def test_padded_rows_do_not_influence_outputs(tiny_params):
    batch = random_batch(size=2, capacity=12, real=5)
    noisy = batch.ems.copy()
    noisy[:, 5:] = np.random.default_rng(9).uniform(0.0, 1.0, noisy[:, 5:].shape)

    base = run(batch, tiny_params)
    changed = run(ObservationBatch(noisy, batch.valid, batch.item, batch.mask), tiny_params)

    assert np.allclose(changed.logits.data, base.logits.data, atol=1e-9)
    assert np.allclose(changed.value.data, base.value.data, atol=1e-9)


def test_same_scene_at_another_scale_gives_identical_outputs(tiny_params, make_state, two_item_scene):
    item = ItemDims(2, 3, 1)
    small = make_state(two_item_scene, item)
    large = make_state(two_item_scene.scaled(3), item.scaled(3))

    first = run(ObservationBatch.from_states([small]), tiny_params)
    second = run(ObservationBatch.from_states([large]), tiny_params)

    assert np.array_equal(first.logits.data, second.logits.data)
    assert np.array_equal(first.value.data, second.value.data)


@pytest.mark.parametrize("capacity", [4, 16, 80])
def test_one_parameter_set_serves_every_capacity(tiny_params, capacity):
    output = run(random_batch(capacity=capacity, real=min(capacity, 7)), tiny_params)

    assert output.logits.shape == (2, 2 * capacity)


def test_zero_rows_encode_to_zero(tiny_params):
    batch = random_batch(capacity=12, real=5)

    with no_grad():
        ems, _ = encode(batch, tiny_params)

    assert not ems.data[:, 5:].any()
    assert ems.data[:, :5].any()


def test_encode_rejects_bad_shapes(tiny_params):
    batch = random_batch()

    with pytest.raises(DomainError):
        encode(ObservationBatch(batch.ems[..., :5], batch.valid, batch.item, batch.mask), tiny_params)
    with pytest.raises(DomainError):
        encode(ObservationBatch(batch.ems, batch.valid, batch.item[:, :1], batch.mask), tiny_params)


def test_attention_with_one_valid_key_returns_its_value():
    rng = np.random.default_rng(1)
    q, k, v = (Tensor(rng.standard_normal((1, 3, 4))) for _ in range(3))

    out = attention(q, k, v, np.array([[False, True, False]]))

    assert np.allclose(out.data[0], np.tile(v.data[0, 1], (3, 1)))


def test_attention_needs_a_valid_key():
    x = Tensor(np.ones((2, 3, 4)))

    with pytest.raises(DomainError):
        attention(x, x, x, np.array([[True, False, False], [False, False, False]]))


def test_multi_head_network_runs():
    params = PolicyParams.init(PolicyConfig(embed_dim=8, blocks=1, heads=2), seed=0)

    output = run(random_batch(), params)

    assert np.allclose(output.probs.sum(axis=-1), 1.0)


def test_heads_must_divide_the_width():
    with pytest.raises(ValidationError):
        PolicyConfig(embed_dim=8, heads=3)


def test_ablations_change_the_feature_extractor(tiny_policy):
    full = PolicyParams.init(tiny_policy)
    no_pt = PolicyParams.init(tiny_policy.model_copy(update={"ablation": Ablation.NO_PT}))
    mixer = PolicyParams.init(tiny_policy.model_copy(update={"ablation": Ablation.MLP_MIXER}))

    assert not any(name.startswith("blocks.") for name in no_pt.tensors)
    assert no_pt.parameter_count() < full.parameter_count()
    assert any(".mix." in name for name in mixer.tensors)
    assert not any(name.endswith(".q.weight") for name in mixer.tensors)
    for params in (no_pt, mixer):
        assert np.allclose(run(random_batch(), params).probs.sum(axis=-1), 1.0)


def test_initialization_gains(tiny_params):
    actor_out = tiny_params["actor.item.1.weight"].data
    hidden = tiny_params["ems_encoder.1.weight"].data

    assert np.allclose(actor_out.T @ actor_out, 1e-4 * np.eye(8))
    assert np.allclose(hidden.T @ hidden, 2.0 * np.eye(8))
    assert not any(tiny_params[name].data.any() for name in tiny_params.tensors if name.endswith(".bias"))


def test_initialization_is_seeded(tiny_policy):
    first, again, other = (PolicyParams.init(tiny_policy, seed=s) for s in (4, 4, 5))

    assert all(np.array_equal(first[n].data, again[n].data) for n in first.tensors)
    assert not np.array_equal(first["critic.0.weight"].data, other["critic.0.weight"].data)


def test_zero_actor_gives_uniform_distribution(tiny_params):
    tiny_params["actor.item.1.weight"].data = np.zeros((8, 8))
    batch = random_batch(size=1)
    k = int(batch.mask.sum())

    output = run(batch, tiny_params)

    assert np.allclose(output.probs[batch.mask], 1.0 / k)
    assert output.entropy().data[0] == pytest.approx(math.log(k))


def test_greedy_takes_the_largest_logit(tiny_params):
    batch = random_batch(size=4)

    actions, log_probs, values = act_batch(batch, tiny_params, ActMode.GREEDY, np.random.default_rng(0))
    output = run(batch, tiny_params)

    assert actions.tolist() == np.argmax(output.logits.data, axis=-1).tolist()
    assert np.allclose(log_probs, output.log_probs.data[np.arange(4), actions])
    assert np.allclose(values, output.value.data)


def test_samples_are_always_feasible(tiny_params):
    batch = random_batch(size=3)
    rng = np.random.default_rng(0)

    for _ in range(100):
        actions, _, _ = act_batch(batch, tiny_params, ActMode.SAMPLE, rng)
        assert batch.mask[np.arange(3), actions].all()


def test_all_false_mask_raises(tiny_params):
    batch = random_batch(size=2)
    closed = batch.mask.copy()
    closed[1] = False

    with pytest.raises(NoFeasibleActionError):
        act_batch(ObservationBatch(batch.ems, batch.valid, batch.item, closed), tiny_params, ActMode.SAMPLE, None)


def test_value_bias_gradient_counts_the_batch(tiny_params):
    output = forward(random_batch(size=5), tiny_params)

    total(output.value).backward()

    assert np.allclose(tiny_params["critic.1.bias"].grad, [5.0])


@pytest.mark.parametrize(
    ("name", "index"),
    [
        ("critic.0.weight", (3, 2)),
        ("ems_encoder.0.weight", (2, 3)),
        ("blocks.0.ems_self.q.weight", (0, 1)),
        ("blocks.0.item_to_ems.v.weight", (4, 4)),
        ("blocks.0.norm.ems_cross.gamma", (5,)),
        ("actor.ems.0.weight", (1, 6)),
    ],
)
def test_network_gradient_matches_finite_difference(tiny_params, name, index):
    batch = random_batch(size=2)
    actions = np.array([0, int(np.flatnonzero(batch.mask[1])[-1])])
    rows = np.arange(2)

    def objective() -> Tensor:
        output = forward(batch, tiny_params)
        return total(output.value) + total(output.log_probs[rows, actions])

    objective().backward()
    analytic = tiny_params[name].grad[index]

    eps = 1e-6
    tensor = tiny_params[name]
    original = tensor.data.copy()
    bumped = original.copy()
    bumped[index] += eps
    tensor.data = bumped
    with no_grad():
        up = objective().item()
    bumped[index] -= 2 * eps
    with no_grad():
        down = objective().item()
    tensor.data = original

    assert analytic == pytest.approx((up - down) / (2 * eps), rel=1e-4, abs=1e-7)


def test_act_on_a_single_state(tiny_params, make_state, bin10):
    state = make_state(Heightmap.empty(bin10), ItemDims(2, 3, 4))

    action, log_prob, value = act(state, tiny_params, ActMode.SAMPLE, np.random.default_rng(0))

    assert action in (0, 80)
    assert log_prob <= 0.0
    assert math.isfinite(value)


def test_neural_policy_plays_an_episode(tiny_params, bin10):
    env = PackingEnv(EpisodeConfig(dims=bin10, seed=2))
    env.reset()
    policy = NeuralPolicy(tiny_params, name="tiny")

    while not env.done:
        env.step(policy.act(env))

    assert env.packed_count() > 0
    assert 0.0 < env.utilization() <= 1.0


def test_greedy_policy_ignores_its_seed(tiny_params, bin10):
    def actions(seed):
        env = PackingEnv(EpisodeConfig(dims=bin10, seed=6))
        env.reset()
        policy = NeuralPolicy(tiny_params, seed=seed)
        policy.begin_episode(seed)
        taken = []
        while not env.done:
            taken.append(policy.act(env))
            env.step(taken[-1])
        return taken

    assert actions(1) == actions(2)


def test_neural_policy_needs_an_episode(tiny_params, bin10):
    with pytest.raises(NoFeasibleActionError):
        NeuralPolicy(tiny_params).act(PackingEnv(EpisodeConfig(dims=bin10)))


def test_sampled_actions_are_feasible_placements(tiny_params, make_state, random_scenes, bin10):
    rng = np.random.default_rng(3)
    scenes = random_scenes(20, bin10, seed=5)
    items = [ItemDims(*(int(v) for v in rng.integers(1, 6, size=3))) for _ in scenes]
    states = [make_state(hm, item, 16) for hm, item in zip(scenes, items, strict=True)]
    open_rows = [i for i, state in enumerate(states) if state.mask.any()]
    rows = np.tile(open_rows, 25)
    batch = ObservationBatch.from_states([states[i] for i in open_rows]).take(np.tile(np.arange(len(open_rows)), 25))
    feasible: dict[tuple[int, int], bool] = {}
    sampled = 0

    while sampled < 100_000:
        actions, _, _ = act_batch(batch, tiny_params, ActMode.SAMPLE, rng)
        for row, action in zip(rows.tolist(), actions.tolist(), strict=True):
            if (row, action) not in feasible:
                ems_set = states[row].bin
                assert states[row].mask.flat()[action]
                ems = ems_set.denormalize(action % ems_set.capacity)
                feasible[row, action] = check_feasible(scenes[row], ems, items[row], action // ems_set.capacity)
            assert feasible[row, action], (row, action)
        sampled += len(actions)

    assert open_rows
    assert len(feasible) > len(open_rows)
