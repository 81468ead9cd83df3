import numpy as np
import pytest

from packbench.bin import Ems, Heightmap, ItemDims, Orientation, check_feasible
from packbench.errors import DomainError, MaskedActionError
from packbench.placement import ActionMask, action_to_placement, build_bin_state, normalize_ems


def test_empty_bin_has_one_real_row(bin10):
    ems_set, mask = build_bin_state(Heightmap.empty(bin10), ItemDims(2, 3, 4))

    assert ems_set.capacity == 80
    assert np.array_equal(ems_set.rows[0], [0, 0, 0, 1, 1, 1])
    assert ems_set.valid.sum() == 1
    assert not ems_set.rows[1:].any()
    assert mask.grid.shape == (2, 80)
    assert np.flatnonzero(mask.flat()).tolist() == [0, 80]


def test_rows_are_ranked_by_height_then_position(block_scene):
    ems_set, _ = build_bin_state(block_scene, ItemDims(1, 1, 1))

    assert [ems.flb for ems in ems_set.spaces()] == [(0, 3, 0), (3, 0, 0), (0, 0, 2)]


def test_clipping_keeps_the_lowest_spaces(two_item_scene):
    ems_set, mask = build_bin_state(two_item_scene, ItemDims(1, 1, 1), capacity=2)

    assert ems_set.valid.all()
    assert [ems.flb for ems in ems_set.spaces()] == [(0, 6, 0), (3, 3, 0)]
    assert mask.grid.shape == (2, 2)


def test_rejects_non_positive_capacity(bin10):
    with pytest.raises(DomainError):
        build_bin_state(Heightmap.empty(bin10), ItemDims(1, 1, 1), capacity=0)


def test_normalize_divides_by_bin_size(bin10):
    assert np.allclose(normalize_ems(Ems((3, 0, 2), (10, 5, 10)), bin10), [0.3, 0, 0.2, 1, 0.5, 1])


def test_rows_and_mask_are_scale_invariant(two_item_scene):
    item = ItemDims(2, 3, 1)
    small_set, small_mask = build_bin_state(two_item_scene, item)
    large_set, large_mask = build_bin_state(two_item_scene.scaled(5), item.scaled(5))

    assert np.array_equal(small_set.rows, large_set.rows)
    assert np.array_equal(small_set.valid, large_set.valid)
    assert np.array_equal(small_mask.grid, large_mask.grid)


def test_mask_matches_feasibility_check(random_scenes, bin10):
    item = ItemDims(2, 3, 2)
    for hm in random_scenes(20, bin10, seed=3):
        ems_set, mask = build_bin_state(hm, item)
        for index, ems in enumerate(ems_set.spaces()):
            for orientation in Orientation:
                assert mask.grid[orientation, index] == check_feasible(hm, ems, item, orientation)
        assert not mask.grid[:, ~ems_set.valid].any()


def test_action_zero_and_n_on_empty_bin(bin10):
    item = ItemDims(2, 3, 4)
    ems_set, mask = build_bin_state(Heightmap.empty(bin10), item)

    first = action_to_placement(0, ems_set, item, mask)
    turned = action_to_placement(80, ems_set, item, mask)

    assert (first.x, first.y, first.z, first.orientation) == (0, 0, 0, Orientation.DEG_0)
    assert (turned.x, turned.y, turned.z, turned.orientation) == (0, 0, 0, Orientation.DEG_90)


def test_action_layout_is_orientation_major(block_scene):
    item = ItemDims(1, 1, 1)
    ems_set, mask = build_bin_state(block_scene, item)

    placement = action_to_placement(80 + 2, ems_set, item, mask)

    assert (placement.x, placement.y, placement.z) == (0, 0, 2)
    assert placement.orientation is Orientation.DEG_90


@pytest.mark.parametrize("action", [-1, 160, 5, 85], ids=["negative", "past-end", "padding", "turned-padding"])
def test_invalid_actions_are_rejected(bin10, action):
    item = ItemDims(2, 3, 4)
    ems_set, mask = build_bin_state(Heightmap.empty(bin10), item)

    with pytest.raises(MaskedActionError):
        action_to_placement(action, ems_set, item, mask)
    with pytest.raises(MaskedActionError):
        action_to_placement(action, ems_set, item)


def test_masked_out_action_is_rejected(bin10):
    item = ItemDims(2, 3, 4)
    ems_set, _ = build_bin_state(Heightmap.empty(bin10), item)
    closed = ActionMask(np.zeros((2, 80), dtype=bool))

    with pytest.raises(MaskedActionError):
        action_to_placement(0, ems_set, item, closed)


def test_denormalize_recovers_spaces(two_item_scene):
    ems_set, _ = build_bin_state(two_item_scene, ItemDims(1, 1, 1))

    assert ems_set.denormalize(3) == Ems((3, 0, 2), (10, 10, 10))
    with pytest.raises(DomainError):
        ems_set.denormalize(5)
