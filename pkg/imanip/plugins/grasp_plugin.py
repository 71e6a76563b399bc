import numpy as np

from ..model.schemas import Cell, ObjectKind, WorldState
from ..model.world import COLOR_INDEX
from .base_plugin import ExpertScript, SkillPlugin, build_objects

CARRY_HEIGHT = 2
STACK_HEIGHT = 3


def pick_and_place(expert: ExpertScript, source: Cell, destination: Cell, height: int) -> None:
    """Six phases: approach, grasp, lift, transport, lower, release."""
    expert.move_to(source)
    expert.close()
    expert.move_to((source[0], source[1], height))
    expert.move_to((destination[0], destination[1], height))
    expert.move_to(destination)
    expert.open()


def resting_at(state: WorldState, kind: ObjectKind, color: str, cell: Cell) -> bool:
    return any(
        o.cell == cell and not o.carried
        for o in state.objects
        if o.kind == kind and o.color == COLOR_INDEX[color]
    )


class LiftBlockPlugin(SkillPlugin):
    name = "lift_block"
    variations = ("red", "green", "blue")
    template = "lift the {} block"
    keyframes = 3

    def initial_state(self, variation: str, rng: np.random.Generator, grid_size: int) -> WorldState:
        cells = self.distinct_cells(rng, 3, 1, grid_size - 2)
        entries = [(ObjectKind.BLOCK, color, cell) for color, cell in zip(self.variations, cells)]
        return self.start_state(build_objects(entries), rng, grid_size)

    def script(self, expert: ExpertScript, variation: str) -> None:
        x, y, z = self.find(expert.state, ObjectKind.BLOCK, COLOR_INDEX[variation])[0].cell
        expert.move_to((x, y, z))
        expert.close()
        expert.move_to((x, y, STACK_HEIGHT))

    def success(self, variation: str, state: WorldState) -> bool:
        return self.find(state, ObjectKind.BLOCK, COLOR_INDEX[variation])[0].cell[2] >= STACK_HEIGHT


class PickPlacePlugin(SkillPlugin):
    name = "pick_place"
    variations = ("red", "green", "blue", "yellow")
    template = "put the block on the {} target"
    keyframes = 6

    def initial_state(self, variation: str, rng: np.random.Generator, grid_size: int) -> WorldState:
        cells = self.distinct_cells(rng, 1 + len(self.variations), 1, grid_size - 2)
        entries = [(ObjectKind.BLOCK, "gray", cells[0])]
        entries += [(ObjectKind.TARGET, color, cell) for color, cell in zip(self.variations, cells[1:])]
        return self.start_state(build_objects(entries), rng, grid_size)

    def script(self, expert: ExpertScript, variation: str) -> None:
        block = self.find(expert.state, ObjectKind.BLOCK, COLOR_INDEX["gray"])[0].cell
        target = self.find(expert.state, ObjectKind.TARGET, COLOR_INDEX[variation])[0].cell
        pick_and_place(expert, block, target, CARRY_HEIGHT)

    def success(self, variation: str, state: WorldState) -> bool:
        target = self.find(state, ObjectKind.TARGET, COLOR_INDEX[variation])[0].cell
        return resting_at(state, ObjectKind.BLOCK, "gray", target)


class StackTwoPlugin(SkillPlugin):
    name = "stack_two"
    variations = ("red_first", "green_first")
    template = "stack {} then {} on the blue base"
    keyframes = 12

    def order(self, variation: str):
        return ("red", "green") if variation == "red_first" else ("green", "red")

    def instruction(self, variation: str) -> str:
        return self.template.format(*self.order(variation))

    def initial_state(self, variation: str, rng: np.random.Generator, grid_size: int) -> WorldState:
        cells = self.distinct_cells(rng, 3, 1, grid_size - 2)
        entries = [(ObjectKind.BLOCK, color, cell) for color, cell in zip(("blue", "red", "green"), cells)]
        return self.start_state(build_objects(entries), rng, grid_size)

    def script(self, expert: ExpertScript, variation: str) -> None:
        bx, by, _ = self.find(expert.state, ObjectKind.BLOCK, COLOR_INDEX["blue"])[0].cell
        for level, color in enumerate(self.order(variation), start=1):
            source = self.find(expert.state, ObjectKind.BLOCK, COLOR_INDEX[color])[0].cell
            pick_and_place(expert, source, (bx, by, level), STACK_HEIGHT)

    def success(self, variation: str, state: WorldState) -> bool:
        bx, by, bz = self.find(state, ObjectKind.BLOCK, COLOR_INDEX["blue"])[0].cell
        first, second = self.order(variation)
        return (
            bz == 0
            and resting_at(state, ObjectKind.BLOCK, first, (bx, by, 1))
            and resting_at(state, ObjectKind.BLOCK, second, (bx, by, 2))
        )


class PlaceTwoPlugin(SkillPlugin):
    name = "place_two"
    variations = ("yellow", "purple")
    template = "place the blocks on the {} targets"
    keyframes = 12

    def initial_state(self, variation: str, rng: np.random.Generator, grid_size: int) -> WorldState:
        cells = self.distinct_cells(rng, 6, 1, grid_size - 2)
        entries = [(ObjectKind.BLOCK, "red", cells[0]), (ObjectKind.BLOCK, "green", cells[1])]
        entries += [(ObjectKind.TARGET, "yellow", c) for c in cells[2:4]]
        entries += [(ObjectKind.TARGET, "purple", c) for c in cells[4:6]]
        return self.start_state(build_objects(entries), rng, grid_size)

    def _pairs(self, variation: str, state: WorldState):
        targets = sorted(self.find(state, ObjectKind.TARGET, COLOR_INDEX[variation]), key=lambda o: o.id)
        return list(zip(("red", "green"), (t.cell for t in targets)))

    def script(self, expert: ExpertScript, variation: str) -> None:
        for color, target in self._pairs(variation, expert.state):
            source = self.find(expert.state, ObjectKind.BLOCK, COLOR_INDEX[color])[0].cell
            pick_and_place(expert, source, target, CARRY_HEIGHT)

    def success(self, variation: str, state: WorldState) -> bool:
        return all(resting_at(state, ObjectKind.BLOCK, color, cell) for color, cell in self._pairs(variation, state))
