import logging
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from ..core.errors import ContractError, UnknownSkillError
from ..core.rng import derive_seed, make_rng
from ..model import world
from ..model.schemas import Horizon, KeyframeAction, SkillSpec, WorldState
from ..model.world import Demonstration, KeyframeSample, VoxelObservation
from ..plugins import SKILL_PLUGINS, ExpertScript, SkillPlugin
from .memory_controller import extract_keyframes

logger = logging.getLogger(__name__)

MIN_GRID = 8
SkillRef = Union[str, int]

_BY_NAME: Dict[str, SkillPlugin] = {p.name: p for p in SKILL_PLUGINS}


def catalog() -> List[SkillSpec]:
    return [
        SkillSpec(
            skill_id=i,
            name=p.name,
            variations=p.variations,
            template=p.template,
            horizon=Horizon.for_keyframes(p.keyframes),
        )
        for i, p in enumerate(SKILL_PLUGINS)
    ]


def skill_names() -> List[str]:
    return [p.name for p in SKILL_PLUGINS]


def get_plugin(skill: SkillRef) -> SkillPlugin:
    if isinstance(skill, int):
        if not 0 <= skill < len(SKILL_PLUGINS):
            raise UnknownSkillError(f"no skill with id {skill}")
        return SKILL_PLUGINS[skill]
    try:
        return _BY_NAME[skill]
    except KeyError:
        raise UnknownSkillError(f"unknown skill '{skill}'") from None


def instruction_tokens(skill: SkillRef, variation: str) -> tuple:
    plugin = get_plugin(skill)
    plugin.check_variation(variation)
    return world.tokenize(plugin.instruction(variation))


def sample_variation(skill: SkillRef, rng: np.random.Generator) -> str:
    plugin = get_plugin(skill)
    return plugin.variations[int(rng.integers(len(plugin.variations)))]


def episode_seed(seed: int, skill: str, index: int) -> int:
    return derive_seed(seed, "episode", skill, index) & 0xFFFFFFFF


def initial_state(skill: SkillRef, variation: str, seed: int, grid_size: int = 8) -> WorldState:
    plugin = get_plugin(skill)
    plugin.check_variation(variation)
    if grid_size < MIN_GRID:
        raise ContractError(f"skill scenes need grid size >= {MIN_GRID}, got {grid_size}")
    return plugin.initial_state(variation, make_rng(seed, "scene", plugin.name, variation), grid_size)


def keyframe_samples(
    trajectory: Sequence, keyframes: Sequence[int], tokens: Sequence[int], skill: str, demo_id: int, seed: int
) -> List[KeyframeSample]:
    """Pair the state reached at the previous keyframe with the action taken at the next one."""
    samples, previous = [], 0
    for slot, index in enumerate(keyframes):
        action = trajectory[index][1]
        if action is None:
            raise ContractError("keyframe at the initial state has no action")
        observation = world.render(trajectory[previous][0], tokens, t=slot)
        samples.append(KeyframeSample(observation, action, skill, slot, demo_id, seed))
        previous = index
    return samples


def assemble_demonstration(
    skill: SkillRef, variation: str, seed: int, demo_id: int, trajectory: Sequence
) -> Demonstration:
    """Keyframes and samples for a recorded (state, action) trajectory."""
    plugin = get_plugin(skill)
    plugin.check_variation(variation)
    trajectory = tuple(trajectory)
    keyframes = extract_keyframes([s for s, _ in trajectory])
    instruction = plugin.instruction(variation)
    tokens = world.tokenize(instruction)
    samples = keyframe_samples(trajectory, keyframes, tokens, plugin.name, demo_id, seed)
    return Demonstration(
        skill=plugin.name,
        variation=variation,
        seed=seed,
        demo_id=demo_id,
        instruction=instruction,
        trajectory=trajectory,
        keyframes=tuple(keyframes),
        samples=tuple(samples),
    )


def sample_episode(
    skill: SkillRef, variation: str, seed: int, grid_size: int = 8, rot_bins: int = 12, demo_id: int = 0
) -> Demonstration:
    plugin = get_plugin(skill)
    state = initial_state(plugin.name, variation, seed, grid_size)
    expert = ExpertScript(state, rot_bins)
    plugin.script(expert, variation)
    if not plugin.success(variation, expert.state):
        logger.error(f"Scripted expert for {plugin.name}/{variation} failed at seed {seed}")
        raise ContractError(f"expert for {plugin.name}/{variation} did not reach success")
    return assemble_demonstration(plugin.name, variation, seed, demo_id, expert.trajectory)


def generate_demos(
    skill: SkillRef, count: int, seed: int, grid_size: int = 8, rot_bins: int = 12
) -> List[Demonstration]:
    """``count`` demonstrations with sampled variations and per-episode seeds."""
    plugin = get_plugin(skill)
    rng = make_rng(seed, "variations", plugin.name)
    demos = []
    for i in range(count):
        variation = sample_variation(plugin.name, rng)
        demos.append(sample_episode(plugin.name, variation, episode_seed(seed, plugin.name, i), grid_size, rot_bins, i))
    logger.info(f"Generated {count} demonstrations for {plugin.name}")
    return demos


def step(state: WorldState, action: KeyframeAction) -> WorldState:
    return world.step(state, action)


def render(state: WorldState, tokens: Sequence[int], t: Optional[int] = None) -> VoxelObservation:
    return world.render(state, tokens, t)


def success(skill: SkillRef, variation: str, state: WorldState) -> bool:
    plugin = get_plugin(skill)
    plugin.check_variation(variation)
    return bool(plugin.success(variation, state))
