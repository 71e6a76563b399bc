from typing import List

import numpy as np

from ..model.schemas import ObjectKind, WorldState
from ..model.world import COLOR_INDEX
from .base_plugin import ExpertScript, SkillPlugin, build_objects

# push direction per slide target: (axis, sign, heading)
SLIDE_TARGETS = {
    "red": (0, 1, "+x"),
    "green": (0, -1, "-x"),
    "blue": (1, 1, "+y"),
}

BUTTON_COLORS = ("red", "green", "blue", "yellow")


def _offset(cell, axis: int, amount: int):
    moved = list(cell)
    moved[axis] += amount
    return tuple(moved)


def _button_cells(grid_size: int):
    far = grid_size - 3
    return [(2, 2, 1), (2, far, 1), (far, 2, 1), (far, far, 1)]


class SlideBlockPlugin(SkillPlugin):
    name = "slide_block"
    variations = ("red", "green", "blue")
    template = "slide the block to the {} target"
    keyframes = 4

    def initial_state(self, variation: str, rng: np.random.Generator, grid_size: int) -> WorldState:
        bx, by = (int(v) for v in rng.integers(2, grid_size - 2, size=2))
        block = (bx, by, 0)
        entries = [(ObjectKind.BLOCK, "gray", block)]
        for color, (axis, sign, _) in SLIDE_TARGETS.items():
            entries.append((ObjectKind.TARGET, color, _offset(block, axis, 2 * sign)))
        return self.start_state(build_objects(entries), rng, grid_size)

    def script(self, expert: ExpertScript, variation: str) -> None:
        axis, sign, heading = SLIDE_TARGETS[variation]
        block = self._block(expert.state).cell
        expert.move_to(_offset(block, axis, -sign), heading)
        expert.close(heading)
        expert.move_to(_offset(block, axis, sign), heading)
        expert.open(heading)

    def success(self, variation: str, state: WorldState) -> bool:
        target = self.find(state, ObjectKind.TARGET, COLOR_INDEX[variation])[0]
        return self._block(state).cell == target.cell

    def _block(self, state: WorldState):
        return self.find(state, ObjectKind.BLOCK, COLOR_INDEX["gray"])[0]


class PressButtonPlugin(SkillPlugin):
    name = "press_button"
    variations = BUTTON_COLORS
    template = "press the {} button"
    keyframes = 4

    def initial_state(self, variation: str, rng: np.random.Generator, grid_size: int) -> WorldState:
        cells = _button_cells(grid_size)
        order = rng.permutation(len(BUTTON_COLORS))
        entries = [(ObjectKind.BUTTON, BUTTON_COLORS[k], cells[i]) for i, k in enumerate(order)]
        return self.start_state(build_objects(entries), rng, grid_size)

    def script(self, expert: ExpertScript, variation: str) -> None:
        x, y, z = self.find(expert.state, ObjectKind.BUTTON, COLOR_INDEX[variation])[0].cell
        expert.move_to((x, y, z + 1))
        expert.close()
        expert.move_to((x, y, z))
        expert.move_to((x, y, z + 2))

    def success(self, variation: str, state: WorldState) -> bool:
        return self.find(state, ObjectKind.BUTTON, COLOR_INDEX[variation])[0].cell[2] == 0


class PressTwoPlugin(PressButtonPlugin):
    name = "press_two"
    variations = ("red_green", "blue_yellow", "green_blue")
    template = "press the {} and {} buttons"
    keyframes = 8

    def script(self, expert: ExpertScript, variation: str) -> None:
        for color in variation.split("_"):
            x, y, z = self.find(expert.state, ObjectKind.BUTTON, COLOR_INDEX[color])[0].cell
            expert.move_to((x, y, z + 1))
            expert.close()
            expert.move_to((x, y, z))
            expert.open()

    def success(self, variation: str, state: WorldState) -> bool:
        return all(
            self.find(state, ObjectKind.BUTTON, COLOR_INDEX[color])[0].cell[2] == 0
            for color in variation.split("_")
        )


class SweepToZonePlugin(SkillPlugin):
    name = "sweep_to_zone"
    variations = ("yellow_2", "yellow_3", "purple_2", "purple_3")
    template = "sweep {} blocks to the {} zone"
    keyframes = 16

    COUNT_WORDS = {"2": "two", "3": "three"}
    ZONE_SIGN = {"yellow": 1, "purple": -1}

    def instruction(self, variation: str) -> str:
        color, count = variation.split("_")
        return self.template.format(self.COUNT_WORDS[count], color)

    def initial_state(self, variation: str, rng: np.random.Generator, grid_size: int) -> WorldState:
        color, count = variation.split("_")
        mid, sign = grid_size // 2, self.ZONE_SIGN[color]
        xs = sorted(int(x) for x in rng.choice(np.arange(1, grid_size - 1), size=int(count), replace=False))
        entries = [(ObjectKind.BLOCK, "gray", (x, mid, 0)) for x in xs]
        entries += [(ObjectKind.TARGET, color, (x, mid + 2 * sign, 0)) for x in xs]
        return self.start_state(build_objects(entries), rng, grid_size)

    def script(self, expert: ExpertScript, variation: str) -> None:
        color, _ = variation.split("_")
        sign = self.ZONE_SIGN[color]
        heading = "+y" if sign > 0 else "-y"
        mid = expert.state.grid_size // 2
        for block in self._blocks(expert.state):
            x = block.cell[0]
            expert.move_to((x, mid - sign, 0), heading)
            expert.close(heading)
            expert.move_to((x, mid, 0), heading)
            expert.move_to((x, mid + sign, 0), heading)
            expert.open(heading)
        x, y, _ = expert.state.effector
        expert.move_to((x, y, 3), heading)

    def success(self, variation: str, state: WorldState) -> bool:
        color, _ = variation.split("_")
        zone = state.grid_size // 2 + 2 * self.ZONE_SIGN[color]
        return all(b.cell[1] == zone and b.cell[2] == 0 for b in self._blocks(state))

    def _blocks(self, state: WorldState) -> List:
        return sorted(self.find(state, ObjectKind.BLOCK, COLOR_INDEX["gray"]), key=lambda o: o.id)
