import numpy as np

from ..model.schemas import ObjectKind, WorldState
from ..model.world import COLOR_INDEX
from .base_plugin import ExpertScript, SkillPlugin, build_objects

DRAWER_LEVELS = {"bottom": 1, "middle": 3, "top": 5}


class DrawerPlugin(SkillPlugin):
    """Three stacked drawers; one handle is dragged ``travel`` cells along y."""

    variations = ("top", "middle", "bottom")
    keyframes = 5
    travel = 0

    def handle_row(self, grid_size: int) -> int:
        raise NotImplementedError

    def initial_state(self, variation: str, rng: np.random.Generator, grid_size: int) -> WorldState:
        x = int(rng.integers(1, grid_size - 1))
        row = self.handle_row(grid_size)
        entries = [(ObjectKind.HANDLE, "white", (x, row, z)) for z in DRAWER_LEVELS.values()]
        return self.start_state(build_objects(entries), rng, grid_size)

    def handle(self, variation: str, state: WorldState):
        level = DRAWER_LEVELS[variation]
        handles = sorted(self.find(state, ObjectKind.HANDLE, COLOR_INDEX["white"]), key=lambda o: o.id)
        return handles[list(DRAWER_LEVELS.values()).index(level)]

    def script(self, expert: ExpertScript, variation: str) -> None:
        x, y, z = self.handle(variation, expert.state).cell
        heading = "+y" if self.travel > 0 else "-y"
        expert.move_to((x, y, z), heading)
        expert.close(heading)
        expert.move_to((x, y + self.travel, z), heading)
        expert.open(heading)
        expert.move_to((x, y + self.travel, z + 1), heading)


class OpenDrawerPlugin(DrawerPlugin):
    name = "open_drawer"
    template = "open the {} drawer"
    travel = -2

    def handle_row(self, grid_size: int) -> int:
        return grid_size - 3

    def success(self, variation: str, state: WorldState) -> bool:
        return self.handle(variation, state).cell[1] <= state.grid_size - 5


class CloseDrawerPlugin(DrawerPlugin):
    name = "close_drawer"
    template = "close the {} drawer"
    travel = 2

    def handle_row(self, grid_size: int) -> int:
        return 2

    def success(self, variation: str, state: WorldState) -> bool:
        return self.handle(variation, state).cell[1] >= 4
