"""Demonstration files.

IMDEMO1 layout (little-endian), after the common magic/version header::

    count u32
    per demonstration:
        skill text | variation text | seed u64 | demo_id u32 | steps u32
        per step:
            grid_size u8 | effector 3 x u8 | gripper_open u8 | t u16
            objects u8, each: id u16 | kind u8 | color u8 | cell 3 x u8 | carried u8
            has_action u8 [| trans u32 | rot 3 x u16 | open u8 | collide u8]
    crc32 u32

Keyframes and samples are not stored; loading replays the trajectory through
the keyframe extractor, which is deterministic.
"""
import json
import logging
from typing import List, Optional, Sequence

from ..controller import world_controller
from ..core.errors import CodecError
from ..model.schemas import KeyframeAction, ObjectKind, WorldObject, WorldState
from ..model.world import Demonstration
from .codec import Reader, Writer

logger = logging.getLogger(__name__)

DEMO_MAGIC = "IMDEMO1"
KINDS = list(ObjectKind)


def write_state(writer: Writer, state: WorldState) -> None:
    writer.u8(state.grid_size)
    for c in state.effector:
        writer.u8(c)
    writer.u8(state.gripper_open)
    writer.u16(state.t)
    writer.u8(len(state.objects))
    for obj in state.objects:
        writer.u16(obj.id)
        writer.u8(KINDS.index(obj.kind))
        writer.u8(obj.color)
        for c in obj.cell:
            writer.u8(c)
        writer.u8(int(obj.carried))


def read_state(reader: Reader) -> WorldState:
    grid_size = reader.u8()
    effector = (reader.u8(), reader.u8(), reader.u8())
    gripper_open, t = reader.u8(), reader.u16()
    objects = []
    for _ in range(reader.u8()):
        object_id, kind = reader.u16(), reader.u8()
        if kind >= len(KINDS):
            raise CodecError(f"unknown object kind {kind}")
        color = reader.u8()
        cell = (reader.u8(), reader.u8(), reader.u8())
        objects.append(WorldObject(id=object_id, kind=KINDS[kind], color=color, cell=cell, carried=bool(reader.u8())))
    try:
        return WorldState(grid_size=grid_size, objects=tuple(objects), effector=effector, gripper_open=gripper_open, t=t)
    except ValueError as e:
        raise CodecError(f"stored state is invalid: {str(e)}") from e


def write_action(writer: Writer, action: KeyframeAction) -> None:
    writer.u32(action.trans)
    for r in action.rot:
        writer.u16(r)
    writer.u8(action.open)
    writer.u8(action.collide)


def read_action(reader: Reader) -> KeyframeAction:
    return KeyframeAction(
        trans=reader.u32(),
        rot=(reader.u16(), reader.u16(), reader.u16()),
        open=reader.u8(),
        collide=reader.u8(),
    )


def encode_demos(demos: Sequence[Demonstration]) -> bytes:
    writer = Writer(DEMO_MAGIC)
    writer.u32(len(demos))
    for demo in demos:
        writer.text(demo.skill)
        writer.text(demo.variation)
        writer.u64(demo.seed)
        writer.u32(demo.demo_id)
        writer.u32(len(demo.trajectory))
        for state, action in demo.trajectory:
            write_state(writer, state)
            writer.u8(action is not None)
            if action is not None:
                write_action(writer, action)
    return writer.finish()


def decode_demos(blob: bytes) -> List[Demonstration]:
    reader = Reader(blob, DEMO_MAGIC)
    demos = []
    for _ in range(reader.u32()):
        skill, variation = reader.text(), reader.text()
        seed, demo_id = reader.u64(), reader.u32()
        trajectory = []
        for _ in range(reader.u32()):
            state = read_state(reader)
            action: Optional[KeyframeAction] = read_action(reader) if reader.u8() else None
            trajectory.append((state, action))
        demos.append(world_controller.assemble_demonstration(skill, variation, seed, demo_id, trajectory))
    reader.done()
    return demos


def demos_to_json(demos: Sequence[Demonstration]) -> str:
    payload = [
        {
            "skill": demo.skill,
            "variation": demo.variation,
            "seed": demo.seed,
            "demo_id": demo.demo_id,
            "instruction": demo.instruction,
            "keyframes": list(demo.keyframes),
            "trajectory": [
                {
                    "state": state.model_dump(mode="json"),
                    "action": action.model_dump(mode="json") if action is not None else None,
                }
                for state, action in demo.trajectory
            ],
        }
        for demo in demos
    ]
    return json.dumps({"format": DEMO_MAGIC, "demonstrations": payload}, indent=2, sort_keys=True) + "\n"


def demos_from_json(text: str) -> List[Demonstration]:
    try:
        payload = json.loads(text)
        return [
            world_controller.assemble_demonstration(
                item["skill"],
                item["variation"],
                item["seed"],
                item["demo_id"],
                [
                    (
                        WorldState.model_validate(step["state"]),
                        KeyframeAction.model_validate(step["action"]) if step["action"] is not None else None,
                    )
                    for step in item["trajectory"]
                ],
            )
            for item in payload["demonstrations"]
        ]
    except (KeyError, TypeError, ValueError) as e:
        raise CodecError(f"invalid demonstration JSON: {str(e)}") from e


def save_demos(path: str, demos: Sequence[Demonstration]) -> str:
    with open(path, "wb") as f:
        f.write(encode_demos(demos))
    logger.info(f"Wrote {len(demos)} demonstrations to {path}")
    return path


def save_demos_json(path: str, demos: Sequence[Demonstration]) -> str:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(demos_to_json(demos))
    return path


def load_demos(path: str) -> List[Demonstration]:
    with open(path, "rb") as f:
        blob = f.read()
    try:
        return decode_demos(blob)
    except CodecError as e:
        logger.error(f"Error reading demonstrations from {path}: {str(e)}")
        raise
