"""Policy checkpoints (IMCKPT1).

Body layout after the magic/version header::

    config text (PolicyConfig JSON)
    prompts: count u32, names | weight blocks: count u32, names
    skills: count u32, (skill text, prompt text) pairs
    parameters: count u32, each name text | trainable u8 | float64 array
    crc32 u32
"""
import logging

from ..core import gradcore as gc
from ..core.errors import CodecError
from ..model.policy import PolicyConfig, PolicyModel
from .codec import Reader, Writer, read_texts, texts

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "IMCKPT1"


def encode_checkpoint(model: PolicyModel) -> bytes:
    writer = Writer(CHECKPOINT_MAGIC)
    writer.text(model.config.model_dump_json())
    texts(writer, model.prompts)
    texts(writer, model.weight_blocks)
    writer.u32(len(model.skills))
    for skill, prompt in model.skills.items():
        writer.text(skill)
        writer.text(prompt)
    writer.u32(len(model.params))
    for path, tensor in model.params.items():
        writer.text(path)
        writer.u8(model.params.is_trainable(path))
        writer.array(tensor.data, "float64")
    return writer.finish()


def decode_checkpoint(blob: bytes) -> PolicyModel:
    reader = Reader(blob, CHECKPOINT_MAGIC)
    try:
        config = PolicyConfig.model_validate_json(reader.text())
    except ValueError as e:
        raise CodecError(f"invalid checkpoint config header: {str(e)}") from e
    prompts = read_texts(reader)
    weight_blocks = read_texts(reader)
    skills = {}
    for _ in range(reader.u32()):
        skill = reader.text()
        skills[skill] = reader.text()
    params = gc.ParameterSet()
    for _ in range(reader.u32()):
        path = reader.text()
        trainable = bool(reader.u8())
        params.add(path, reader.array("float64"), trainable)
    reader.done()
    return PolicyModel(config, params, prompts, skills, weight_blocks)


def save_checkpoint(path: str, model: PolicyModel) -> str:
    with open(path, "wb") as f:
        f.write(encode_checkpoint(model))
    logger.info(f"Wrote checkpoint with {model.params.count()} parameters to {path}")
    return path


def load_checkpoint(path: str) -> PolicyModel:
    with open(path, "rb") as f:
        blob = f.read()
    try:
        return decode_checkpoint(blob)
    except CodecError as e:
        logger.error(f"Error reading checkpoint {path}: {str(e)}")
        raise
