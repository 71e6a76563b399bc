from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from ..core.errors import LabelIndexError

Cell = Tuple[int, int, int]

FreezePolicy = Literal["none", "encoder", "epio", "decoder", "encoder+epio"]
Strategy = Literal["farthest-entropy", "random", "episode", "herding", "hard-sample"]
Method = Literal["imanip", "finetune", "tib"]

FREEZE_POLICIES = ("none", "encoder", "epio", "decoder", "encoder+epio")
STRATEGIES = ("farthest-entropy", "random", "episode", "herding", "hard-sample")
METHODS = ("imanip", "finetune", "tib")


# World schemas
class ObjectKind(str, Enum):
    BLOCK = "block"
    TARGET = "target"
    BUTTON = "button"
    HANDLE = "handle"

    @property
    def graspable(self) -> bool:
        return self in (ObjectKind.BLOCK, ObjectKind.HANDLE)

    @property
    def pushable(self) -> bool:
        return self in (ObjectKind.BLOCK, ObjectKind.BUTTON)


class WorldObject(BaseModel):
    id: int
    kind: ObjectKind
    color: int = Field(ge=0, lt=8)
    cell: Cell
    carried: bool = False

    model_config = {"frozen": True}


class WorldState(BaseModel):
    grid_size: int = 8
    objects: Tuple[WorldObject, ...] = ()
    effector: Cell = (0, 0, 0)
    gripper_open: int = 1
    t: int = 0

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def check_closure(self):
        g = self.grid_size
        cells = [self.effector] + [o.cell for o in self.objects]
        if any(not 0 <= c < g for cell in cells for c in cell):
            raise ValueError(f"coordinate outside [0, {g})")
        carried = [o for o in self.objects if o.carried]
        if len(carried) > 1:
            raise ValueError("more than one object carried")
        if carried and carried[0].cell != self.effector:
            raise ValueError("carried object must share the effector cell")
        return self

    def carried_object(self) -> Optional[WorldObject]:
        return next((o for o in self.objects if o.carried), None)

    def object_by_id(self, object_id: int) -> WorldObject:
        return next(o for o in self.objects if o.id == object_id)

    def configuration(self) -> Tuple:
        """Object configuration (what rendering and success predicates may depend on)."""
        return tuple(sorted((o.color, o.cell, o.carried) for o in self.objects))


class KeyframeAction(BaseModel):
    trans: int
    rot: Tuple[int, int, int]
    open: int
    collide: int

    model_config = {"frozen": True}

    def check_ranges(self, grid_size: int, rot_bins: Optional[int] = None) -> "KeyframeAction":
        if not 0 <= self.trans < grid_size ** 3:
            raise LabelIndexError(f"trans {self.trans} outside [0, {grid_size ** 3})")
        if rot_bins is not None and any(not 0 <= r < rot_bins for r in self.rot):
            raise LabelIndexError(f"rotation bins {self.rot} outside [0, {rot_bins})")
        if self.open not in (0, 1) or self.collide not in (0, 1):
            raise LabelIndexError("open/collide must be 0 or 1")
        return self


class Horizon(str, Enum):
    SHORT = "short"
    MEDIUM = "medium"
    LONG = "long"

    @classmethod
    def for_keyframes(cls, count: int) -> "Horizon":
        if count < 5:
            return cls.SHORT
        if count <= 10:
            return cls.MEDIUM
        return cls.LONG


class SkillSpec(BaseModel):
    skill_id: int
    name: str
    variations: Tuple[str, ...]
    template: str
    horizon: Horizon

    model_config = {"frozen": True}


# Memory schemas
class EntropyRecord(BaseModel):
    demo_id: int
    slot: int
    entropy: float = Field(ge=0.0)


# Loss schemas
class LossReport(BaseModel):
    l_act: float
    l_dis: float
    l_total: float
    per_head: Dict[str, float] = {}


# Trainer schemas
class Schedule(BaseModel):
    base_skills: List[str]
    steps: List[List[str]] = []
    iterations_base: int = 3000
    iterations_step: int = 1500
    batch_size: int = Field(default=8, ge=1)
    lr: float = Field(default=0.05, gt=0.0)
    lambda_dis: float = 0.01
    replay_k: int = Field(default=2, ge=0)
    strategy: Strategy = "farthest-entropy"
    freeze: FreezePolicy = "encoder+epio"
    seed: int = 0

    @field_validator("steps")
    @classmethod
    def steps_non_empty(cls, steps):
        if any(not step for step in steps):
            raise ValueError("every incremental step needs at least one skill")
        return steps

    @model_validator(mode="after")
    def skills_disjoint(self):
        every = list(self.base_skills) + [s for step in self.steps for s in step]
        if len(every) != len(set(every)):
            raise ValueError("schedule skill lists must be disjoint")
        return self

    @property
    def notation(self) -> str:
        k = len(self.steps)
        m = len(self.steps[0]) if self.steps else 0
        return f"B{len(self.base_skills)}-{k}N{m}"

    def learned_through(self, step: int) -> List[str]:
        learned = list(self.base_skills)
        for skills in self.steps[:step]:
            learned.extend(skills)
        return learned


class StepReport(BaseModel):
    step: int
    new_skills: List[str]
    per_skill: Dict[str, float]
    old: Optional[float] = None
    new: Optional[float] = None
    all: float = 0.0
    trainable_params: int = 0
    total_params: int = 0
    iterations: int = 0
    iterations_to_converge: int = 0
    l_act: float = 0.0
    l_dis: float = 0.0
    wall_ms: int = 0
    prompt_attribution: Dict[str, List[float]] = {}


# Run configuration
class RunConfig(BaseModel):
    schedule: str = "B2-3N1"
    method: Method = "imanip"
    strategy: Strategy = "farthest-entropy"
    freeze: FreezePolicy = "encoder+epio"
    replay_k: int = Field(default=2, ge=0)
    lambda_dis: float = 0.01
    prompt_len: int = Field(default=16, ge=1)
    d_new: int = Field(default=8, ge=1)
    grid_size: int = Field(default=8, ge=8)
    rot_bins: int = Field(default=12, ge=4)
    d_model: int = Field(default=64, ge=1)
    latents: int = Field(default=32, ge=1)
    layers: int = Field(default=4, ge=0)
    patch_size: int = Field(default=2, ge=1)
    demos_per_skill: int = Field(default=20, ge=1)
    eval_episodes: int = Field(default=25, ge=1)
    max_eval_steps: int = Field(default=25, ge=1)
    lr: float = Field(default=0.05, gt=0.0)
    batch_size: int = Field(default=8, ge=1)
    iterations_base: int = Field(default=3000, ge=0)
    iterations_step: int = Field(default=1500, ge=0)
    entropy_mode: Literal["action_loss", "shannon"] = "action_loss"
    base_prompt: Literal["shared", "per-skill"] = "shared"
    attention_scale: Literal["model", "key"] = "model"
    extension_init: Literal["query-random", "zero"] = "query-random"
    replay_ratio: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    base_gate: Optional[float] = Field(default=0.5, ge=0.0, le=1.0)
    grad_clip: Optional[float] = Field(default=None, gt=0.0)
    record_timing: bool = False
    seeds: List[int] = [0]
    out: Optional[str] = None

    model_config = {"extra": "forbid"}

    @field_validator("lambda_dis")
    @classmethod
    def lambda_non_negative(cls, value):
        if value < 0:
            raise ValueError("lambda_dis must be non-negative")
        return value

    @field_validator("seeds", mode="before")
    @classmethod
    def split_seeds(cls, value):
        if isinstance(value, (int, str)):
            value = [int(v) for v in str(value).split(",") if v.strip()]
        if not value:
            raise ValueError("at least one seed is required")
        return value

    @field_validator("replay_ratio", "base_gate", "grad_clip", "out", mode="before")
    @classmethod
    def none_strings(cls, value):
        if isinstance(value, str) and value.strip().lower() in ("", "none", "off"):
            return None
        return value
