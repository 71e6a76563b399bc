"""Replay-memory payload files (IMMEM1).

Body: quota u32 | entries u32, each
``skill text | slot u16 | demo_id u32 | seed u64 | grid uint8 array |
proprio float64 array | tokens uint16 array | action``.
Grids are one-hot, so they are stored as bytes.
"""
import logging

import numpy as np

from ..controller.memory_controller import ReplayBuffer
from ..core.errors import CodecError
from ..model.world import KeyframeSample, VoxelObservation
from .codec import Reader, Writer
from .demo_store import read_action, write_action

logger = logging.getLogger(__name__)

MEMORY_MAGIC = "IMMEM1"


def encode_memory(buffer: ReplayBuffer) -> bytes:
    writer = Writer(MEMORY_MAGIC)
    writer.u32(buffer.quota)
    entries = [(key, sample) for key, items in buffer.slots.items() for sample in items]
    writer.u32(len(entries))
    for (skill, slot), sample in entries:
        grid = sample.observation.grid
        if not np.isin(grid, (0.0, 1.0)).all():
            raise CodecError(f"observation grid of ({skill}, {slot}) is not binary")
        writer.text(skill)
        writer.u16(slot)
        writer.u32(sample.demo_id)
        writer.u64(sample.seed)
        writer.array(grid, "uint8")
        writer.array(sample.observation.proprio, "float64")
        writer.array(np.asarray(sample.observation.tokens), "uint16")
        write_action(writer, sample.action)
    return writer.finish()


def decode_memory(blob: bytes) -> ReplayBuffer:
    reader = Reader(blob, MEMORY_MAGIC)
    buffer = ReplayBuffer(quota=reader.u32())
    for _ in range(reader.u32()):
        skill, slot = reader.text(), reader.u16()
        demo_id, seed = reader.u32(), reader.u64()
        observation = VoxelObservation(
            grid=reader.array("uint8").astype(np.float64),
            proprio=reader.array("float64"),
            tokens=tuple(int(t) for t in reader.array("uint16")),
        )
        sample = KeyframeSample(observation, read_action(reader), skill, slot, demo_id, seed)
        buffer.slots.setdefault((skill, slot), []).append(sample)
    reader.done()
    return buffer


def save_memory(path: str, buffer: ReplayBuffer) -> str:
    with open(path, "wb") as f:
        f.write(encode_memory(buffer))
    logger.info(f"Wrote {len(buffer)} replay samples to {path}")
    return path


def load_memory(path: str) -> ReplayBuffer:
    with open(path, "rb") as f:
        blob = f.read()
    return decode_memory(blob)
