import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imanip.controller import world_controller
from imanip.core.errors import ContractError, LabelIndexError, UnknownSkillError
from imanip.model import world
from imanip.model.schemas import Horizon, KeyframeAction, ObjectKind, WorldState
from imanip.model.world import cell_index, index_cell, make_object, render, step
from imanip.plugins import SKILL_PLUGINS

G = 8


def action_to(cell, open_bit=1):
    return KeyframeAction(trans=cell_index(cell, G), rot=(0, 0, 0), open=open_bit, collide=0)


def state_with(objects, effector=(0, 0, 0), gripper_open=1):
    return WorldState(grid_size=G, objects=tuple(objects), effector=effector, gripper_open=gripper_open)


class TestStep:
    def test_teleports_and_counts_time(self):
        after = step(state_with([]), action_to((5, 2, 7)))
        assert after.effector == (5, 2, 7)
        assert after.t == 1

    def test_grasp_carry_release(self):
        block = make_object(0, ObjectKind.BLOCK, "red", (3, 3, 0))
        s = state_with([block], effector=(3, 3, 4))
        s = step(s, action_to((3, 3, 0), open_bit=0))
        assert s.carried_object().id == 0
        s = step(s, action_to((5, 5, 5), open_bit=0))
        assert s.object_by_id(0).cell == (5, 5, 5)
        s = step(s, action_to((5, 5, 5), open_bit=1))
        assert s.carried_object() is None
        assert s.object_by_id(0).cell == (5, 5, 5)

    def test_grasp_takes_lowest_id(self):
        objects = [
            make_object(2, ObjectKind.BLOCK, "red", (1, 1, 1)),
            make_object(1, ObjectKind.HANDLE, "white", (1, 1, 1)),
        ]
        s = step(state_with(objects, effector=(1, 1, 2)), action_to((1, 1, 1), open_bit=0))
        assert s.carried_object().id == 1

    def test_targets_and_buttons_are_not_grasped(self):
        objects = [
            make_object(0, ObjectKind.TARGET, "red", (2, 2, 0)),
            make_object(1, ObjectKind.BUTTON, "red", (2, 2, 0)),
        ]
        s = step(state_with(objects), action_to((2, 2, 0), open_bit=0))
        assert s.carried_object() is None

    def test_sweep_pushes_past_destination(self):
        block = make_object(0, ObjectKind.BLOCK, "red", (3, 4, 1))
        target = make_object(1, ObjectKind.TARGET, "green", (2, 4, 1))
        s = state_with([block, target], effector=(1, 4, 1), gripper_open=0)
        s = step(s, action_to((4, 4, 1), open_bit=0))
        assert s.object_by_id(0).cell == (5, 4, 1)
        assert s.object_by_id(1).cell == (2, 4, 1)

    def test_sweep_clamps_at_the_wall(self):
        button = make_object(0, ObjectKind.BUTTON, "red", (2, 2, 1))
        s = state_with([button], effector=(2, 2, 3), gripper_open=0)
        s = step(s, action_to((2, 2, 0), open_bit=0))
        assert s.object_by_id(0).cell == (2, 2, 0)

    def test_open_gripper_does_not_push(self):
        block = make_object(0, ObjectKind.BLOCK, "red", (3, 4, 1))
        s = step(state_with([block], effector=(1, 4, 1)), action_to((4, 4, 1)))
        assert s.object_by_id(0).cell == (3, 4, 1)

    def test_out_of_range_action(self):
        with pytest.raises(LabelIndexError):
            step(state_with([]), KeyframeAction(trans=G ** 3, rot=(0, 0, 0), open=1, collide=0))

    @settings(max_examples=60, deadline=None)
    @given(
        cells=st.lists(st.tuples(*[st.integers(0, G - 1)] * 3), min_size=1, max_size=4, unique=True),
        moves=st.lists(st.tuples(st.integers(0, G ** 3 - 1), st.integers(0, 1)), min_size=1, max_size=12),
    )
    def test_closure(self, cells, moves):
        objects = [make_object(i, ObjectKind.BLOCK, "gray", c) for i, c in enumerate(cells)]
        s = state_with(objects)
        for trans, open_bit in moves:
            s = step(s, KeyframeAction(trans=trans, rot=(0, 0, 0), open=open_bit, collide=0))
            assert all(0 <= c < G for o in s.objects for c in o.cell)
            assert sum(o.carried for o in s.objects) <= 1


class TestRender:
    def test_empty_world(self):
        obs = render(state_with([]), ())
        assert obs.grid.shape == (G, G, G, world.CHANNELS)
        assert obs.grid[..., :-1].sum() == 0
        assert obs.grid[..., -1].sum() == 1 and obs.grid[0, 0, 0, -1] == 1
        assert obs.proprio.tolist() == [1.0, 0.0, 0.0, 0.0, 0.0]

    def test_object_channels(self):
        block = make_object(0, ObjectKind.BLOCK, "blue", (1, 2, 3))
        obs = render(state_with([block], effector=(4, 4, 4)), world.tokenize("lift the blue block"))
        assert obs.grid[1, 2, 3, 0] == 1 and obs.grid[1, 2, 3, 1 + world.COLOR_INDEX["blue"]] == 1
        assert obs.proprio[1:4].tolist() == [0.5, 0.5, 0.5]
        assert world.detokenize(obs.tokens) == "lift the blue block"

    def test_injective_over_random_states(self):
        rng = np.random.default_rng(0)
        seen = {}
        for _ in range(1000):
            n = int(rng.integers(1, 5))
            flat = rng.choice(G ** 3, size=n, replace=False)
            colors = rng.integers(0, len(world.PALETTE), size=n)
            objects = [
                make_object(i, ObjectKind.BLOCK, world.PALETTE[c], index_cell(f, G))
                for i, (f, c) in enumerate(zip(flat, colors))
            ]
            s = state_with(objects)
            key = render(s, ()).grid.tobytes()
            config = s.configuration()
            assert seen.setdefault(key, config) == config

    def test_cell_index_round_trip(self):
        for index in (0, 1, 63, 64, 511):
            assert cell_index(index_cell(index, G), G) == index


class TestSkills:
    def test_catalog_order_and_horizons(self):
        specs = world_controller.catalog()
        assert [s.name for s in specs] == [
            "slide_block", "press_button", "pick_place", "open_drawer", "stack_two",
            "sweep_to_zone", "lift_block", "close_drawer", "press_two", "place_two",
        ]
        by_name = {s.name: s.horizon for s in specs}
        assert by_name["slide_block"] == Horizon.SHORT
        assert by_name["pick_place"] == Horizon.MEDIUM
        assert by_name["stack_two"] == Horizon.LONG

    def test_unknown_skill_and_variation(self):
        with pytest.raises(UnknownSkillError):
            world_controller.get_plugin("juggle")
        with pytest.raises(UnknownSkillError):
            world_controller.get_plugin(99)
        with pytest.raises(UnknownSkillError):
            world_controller.initial_state("slide_block", "magenta", 0)

    def test_small_grid_rejected(self):
        with pytest.raises(ContractError):
            world_controller.initial_state("slide_block", "red", 0, grid_size=6)

    @pytest.mark.parametrize("plugin", SKILL_PLUGINS, ids=lambda p: p.name)
    def test_expert_succeeds_on_every_variation(self, plugin):
        for variation in plugin.variations:
            for seed in range(3):
                demo = world_controller.sample_episode(plugin.name, variation, seed)
                assert not world_controller.success(plugin.name, variation, demo.initial_state)
                assert world_controller.success(plugin.name, variation, demo.final_state)
                expected = plugin.keyframes
                if plugin.name == "sweep_to_zone":
                    expected = 5 * int(variation.split("_")[1]) + 1
                assert len(demo.samples) == expected
                assert [s.slot for s in demo.samples] == list(range(expected))

    def test_replaying_keyframe_actions_reproduces_success(self, demo_cache):
        for skill in ("slide_block", "pick_place", "open_drawer", "press_two"):
            for demo in demo_cache(skill):
                s = demo.initial_state
                for action in demo.keyframe_actions():
                    s = world_controller.step(s, action)
                assert world_controller.success(skill, demo.variation, s)

    def test_episode_determinism(self):
        a = world_controller.sample_episode("stack_two", "red_first", 11)
        b = world_controller.sample_episode("stack_two", "red_first", 11)
        assert a.trajectory == b.trajectory
        assert all(np.array_equal(x.observation.grid, y.observation.grid) for x, y in zip(a.samples, b.samples))

    def test_keyframe_observation_uses_slot_timestep(self, demo_cache):
        demo = demo_cache("slide_block")[0]
        for sample in demo.samples:
            assert sample.observation.proprio[-1] == pytest.approx(sample.slot / world.T_MAX)

    def test_generate_demos_ids_and_seeds(self, demo_cache):
        demos = demo_cache("press_button", 4, 0)
        assert [d.demo_id for d in demos] == [0, 1, 2, 3]
        assert len({d.seed for d in demos}) == 4
