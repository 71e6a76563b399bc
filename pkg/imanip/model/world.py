"""Voxel tabletop dynamics and observation encoding.

A move travels from the current effector cell to the target cell along x,
then y, then z. With a closed, empty gripper every pushable object on that
path ends one cell past the destination along the last travelled axis.
"""
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import DimensionError
from .schemas import Cell, KeyframeAction, ObjectKind, WorldObject, WorldState

PALETTE = ("red", "green", "blue", "yellow", "purple", "orange", "white", "gray")
COLOR_INDEX = {name: i for i, name in enumerate(PALETTE)}

CHANNELS = 1 + len(PALETTE) + 1
PROPRIO_DIM = 5
T_MAX = 25
MAX_TOKENS = 12

PAD, UNK = "<pad>", "<unk>"
_WORDS = (
    "the", "a", "to", "on", "and", "of", "then", "in", "blocks", "block", "target", "targets",
    "button", "buttons", "drawer", "zone", "base", "slide", "press", "put", "open", "close",
    "stack", "sweep", "lift", "place", "top", "middle", "bottom", "two", "three",
) + PALETTE
VOCAB = (PAD, UNK) + _WORDS
TOKEN_ID = {word: i for i, word in enumerate(VOCAB)}


@dataclass(frozen=True)
class VoxelObservation:
    grid: np.ndarray
    proprio: np.ndarray
    tokens: Tuple[int, ...]


def tokenize(text: str) -> Tuple[int, ...]:
    return tuple(TOKEN_ID.get(word, TOKEN_ID[UNK]) for word in text.lower().split())


def detokenize(tokens: Iterable[int]) -> str:
    return " ".join(VOCAB[t] for t in tokens if t != TOKEN_ID[PAD])


def cell_index(cell: Cell, grid_size: int) -> int:
    x, y, z = cell
    return (x * grid_size + y) * grid_size + z


def index_cell(index: int, grid_size: int) -> Cell:
    x, rest = divmod(int(index), grid_size * grid_size)
    y, z = divmod(rest, grid_size)
    return (x, y, z)


def path_cells(start: Cell, end: Cell) -> List[Cell]:
    """Cells entered when travelling from start to end, x first, then y, then z."""
    cells, current = [], list(start)
    for axis in range(3):
        step = 1 if end[axis] > current[axis] else -1
        while current[axis] != end[axis]:
            current[axis] += step
            cells.append(tuple(current))
    return cells


def _last_direction(start: Cell, end: Cell) -> Optional[Tuple[int, int]]:
    for axis in (2, 1, 0):
        if end[axis] != start[axis]:
            return axis, 1 if end[axis] > start[axis] else -1
    return None


def _clamp(value: int, grid_size: int) -> int:
    return min(max(value, 0), grid_size - 1)


def step(state: WorldState, action: KeyframeAction) -> WorldState:
    g = state.grid_size
    action.check_ranges(g)
    start, end = state.effector, index_cell(action.trans, g)
    objects = list(state.objects)
    carrying = state.carried_object() is not None

    if carrying:
        objects = [o.model_copy(update={"cell": end}) if o.carried else o for o in objects]
    elif state.gripper_open == 0 and end != start:
        swept = set(path_cells(start, end))
        axis, sign = _last_direction(start, end)
        landing = list(end)
        landing[axis] = _clamp(landing[axis] + sign, g)
        objects = [
            o.model_copy(update={"cell": tuple(landing)}) if o.kind.pushable and o.cell in swept else o
            for o in objects
        ]

    if state.gripper_open == 1 and action.open == 0:
        here = [o for o in objects if o.cell == end and o.kind.graspable]
        if here:
            grabbed = min(here, key=lambda o: o.id).id
            objects = [o.model_copy(update={"carried": True}) if o.id == grabbed else o for o in objects]
    elif state.gripper_open == 0 and action.open == 1:
        objects = [o.model_copy(update={"carried": False}) if o.carried else o for o in objects]

    return WorldState(
        grid_size=g,
        objects=tuple(objects),
        effector=end,
        gripper_open=action.open,
        t=state.t + 1,
    )


def render(state: WorldState, tokens: Sequence[int], t: Optional[int] = None) -> VoxelObservation:
    """Voxel grid (occupancy, color one-hot, effector marker) plus proprioception."""
    g = state.grid_size
    grid = np.zeros((g, g, g, CHANNELS))
    for obj in state.objects:
        grid[obj.cell + (0,)] = 1.0
        grid[obj.cell + (1 + obj.color,)] = 1.0
    grid[state.effector + (CHANNELS - 1,)] = 1.0
    timestep = state.t if t is None else t
    proprio = np.array(
        [float(state.gripper_open)]
        + [c / g for c in state.effector]
        + [min(timestep, T_MAX) / T_MAX]
    )
    return VoxelObservation(grid=grid, proprio=proprio, tokens=tuple(int(token) for token in tokens))


def check_observation(obs: VoxelObservation, grid_size: int) -> None:
    expected = (grid_size,) * 3 + (CHANNELS,)
    if obs.grid.shape != expected:
        raise DimensionError(f"grid shape {obs.grid.shape}, expected {expected}")
    if obs.proprio.shape != (PROPRIO_DIM,):
        raise DimensionError(f"proprioception shape {obs.proprio.shape}, expected ({PROPRIO_DIM},)")


def make_object(object_id: int, kind: ObjectKind, color: str, cell: Cell) -> WorldObject:
    return WorldObject(id=object_id, kind=kind, color=COLOR_INDEX[color], cell=tuple(int(c) for c in cell))


@dataclass(frozen=True)
class KeyframeSample:
    observation: VoxelObservation
    action: KeyframeAction
    skill: str
    slot: int
    demo_id: int
    seed: int


@dataclass(frozen=True)
class Demonstration:
    skill: str
    variation: str
    seed: int
    demo_id: int
    instruction: str
    trajectory: Tuple[Tuple[WorldState, Optional[KeyframeAction]], ...]
    keyframes: Tuple[int, ...]
    samples: Tuple[KeyframeSample, ...]

    @property
    def initial_state(self) -> WorldState:
        return self.trajectory[0][0]

    @property
    def final_state(self) -> WorldState:
        return self.trajectory[-1][0]

    def keyframe_actions(self) -> List[KeyframeAction]:
        return [sample.action for sample in self.samples]
