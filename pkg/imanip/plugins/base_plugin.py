from typing import List, Optional, Tuple

import numpy as np

from ..core.errors import UnknownSkillError
from ..model.schemas import Cell, KeyframeAction, ObjectKind, WorldObject, WorldState
from ..model.world import cell_index, make_object, path_cells, step

YAW_QUARTERS = {"+x": 0, "+y": 1, "-x": 2, "-y": 3}


class ExpertScript:
    """Builds a micro-step trajectory phase by phase.

    A move phase enters one cell per micro-step and ends with a standstill
    step; a gripper phase is a single toggle in place. Each phase therefore
    contributes exactly one keyframe.
    """

    def __init__(self, state: WorldState, rot_bins: int):
        self.state = state
        self.rot_bins = rot_bins
        self.trajectory: List[Tuple[WorldState, Optional[KeyframeAction]]] = [(state, None)]

    def _rot(self, heading: str) -> Tuple[int, int, int]:
        return (0, 0, YAW_QUARTERS[heading] * self.rot_bins // 4)

    def _apply(self, cell: Cell, open_bit: int, heading: str, collide: int) -> None:
        action = KeyframeAction(
            trans=cell_index(cell, self.state.grid_size),
            rot=self._rot(heading),
            open=open_bit,
            collide=collide,
        )
        self.state = step(self.state, action)
        self.trajectory.append((self.state, action))

    def move_to(self, cell: Cell, heading: str = "+x") -> "ExpertScript":
        # free-space motion asks for collision avoidance, contact motion does not
        free = self.state.gripper_open == 1 and self.state.carried_object() is None
        collide = 1 if free else 0
        for entered in path_cells(self.state.effector, cell):
            self._apply(entered, self.state.gripper_open, heading, collide)
        self._apply(tuple(cell), self.state.gripper_open, heading, collide)
        return self

    def close(self, heading: str = "+x") -> "ExpertScript":
        self._apply(self.state.effector, 0, heading, 0)
        return self

    def open(self, heading: str = "+x") -> "ExpertScript":
        self._apply(self.state.effector, 1, heading, 0)
        return self


class SkillPlugin:
    """One manipulation skill: variation space, scripted expert and success oracle."""

    name: str = ""
    variations: Tuple[str, ...] = ()
    template: str = ""
    keyframes: int = 0

    def check_variation(self, variation: str) -> None:
        if variation not in self.variations:
            raise UnknownSkillError(f"skill '{self.name}' has no variation '{variation}'")

    def instruction(self, variation: str) -> str:
        return self.template.format(*variation.split("_"))

    def initial_state(self, variation: str, rng: np.random.Generator, grid_size: int) -> WorldState:
        raise NotImplementedError

    def script(self, expert: ExpertScript, variation: str) -> None:
        raise NotImplementedError

    def success(self, variation: str, state: WorldState) -> bool:
        raise NotImplementedError

    # helpers shared by the concrete plugins
    @staticmethod
    def start_state(objects: List[WorldObject], rng: np.random.Generator, grid_size: int) -> WorldState:
        x, y = (int(v) for v in rng.integers(0, grid_size, size=2))
        return WorldState(grid_size=grid_size, objects=tuple(objects), effector=(x, y, grid_size - 1))

    @staticmethod
    def distinct_cells(rng: np.random.Generator, count: int, low: int, high: int) -> List[Cell]:
        """``count`` distinct floor cells with x and y drawn from [low, high]."""
        span = high - low + 1
        picks = rng.choice(span * span, size=count, replace=False)
        return [(low + int(p) // span, low + int(p) % span, 0) for p in picks]

    @staticmethod
    def find(state: WorldState, kind: ObjectKind, color: int) -> List[WorldObject]:
        return [o for o in state.objects if o.kind == kind and o.color == color]


def build_objects(entries) -> List[WorldObject]:
    """Objects numbered in listing order from (kind, color, cell) entries."""
    return [make_object(i, kind, color, cell) for i, (kind, color, cell) in enumerate(entries)]
