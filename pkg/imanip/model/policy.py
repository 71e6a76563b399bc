"""Extendable PerceiverIO manipulation policy.

Input tokens, in order: voxel patches, one proprioception token, the
instruction tokens, then every registered prompt block in learning order.
A learned latent set cross-attends to them, passes through the self-attention
stack, and the voxel tokens cross-attend back to the latents for decoding.

Self-attention queries and keys are column concatenations of blocks
``epio.layers.{i}.wq.{b}`` / ``wk.{b}``; block 0 is d wide and each skill
extension appends one d_new wide block. New key blocks start at zero, so an
extension leaves every attention score unchanged.

Translation logits add two terms: a per-voxel readout of the decoded voxel
tokens, and a skip path that correlates the raw voxel grid with a kernel
predicted from the instruction words, the keyframe time and the
proprioception. Expert targets sit at small offsets from some object, so the
skip path carries what one position learns to every other position.
"""
import logging
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from ..core import gradcore as gc
from ..core.errors import ConfigError, ContractError, DimensionError, RegistryError
from ..core.rng import make_rng
from .batch import ActionBatch, ObservationBatch, QValues, head_cross_entropies
from .schemas import KeyframeAction
from .world import CHANNELS, MAX_TOKENS, PROPRIO_DIM, T_MAX, VOCAB

logger = logging.getLogger(__name__)

BASE_PROMPT = "base"
PROMPT_STD = 0.02

FREEZE_PREFIXES = {
    "none": (),
    "encoder": ("encoder.",),
    "epio": ("epio.",),
    "decoder": ("decoder.",),
    "encoder+epio": ("encoder.", "epio."),
}


class PolicyConfig(BaseModel):
    grid_size: int = Field(default=8, ge=1)
    rot_bins: int = Field(default=12, ge=1)
    d_model: int = Field(default=64, ge=1)
    latents: int = Field(default=32, ge=1)
    layers: int = Field(default=4, ge=0)
    patch_size: int = Field(default=2, ge=1)
    prompt_len: int = Field(default=16, ge=1)
    d_new: int = Field(default=8, ge=1)
    max_tokens: int = MAX_TOKENS
    vocab_size: int = len(VOCAB)
    channels: int = CHANNELS
    attention_scale: Literal["model", "key"] = "model"
    extension_init: Literal["query-random", "zero"] = "query-random"
    skip_reach: Tuple[int, int, int] = (2, 2, 3)
    seed: int = 0

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def check_patching(self):
        if self.grid_size % self.patch_size:
            raise ValueError(f"patch size {self.patch_size} does not divide grid size {self.grid_size}")
        if any(r < 0 for r in self.skip_reach):
            raise ValueError(f"skip reach {self.skip_reach} must be non-negative")
        return self

    @property
    def voxel_tokens(self) -> int:
        return (self.grid_size // self.patch_size) ** 3

    @property
    def context_width(self) -> int:
        return self.vocab_size + T_MAX + 1 + PROPRIO_DIM

    @property
    def skip_shape(self) -> Tuple[int, int, int, int]:
        return tuple(2 * r + 1 for r in self.skip_reach) + (self.channels,)

    @property
    def patch_width(self) -> int:
        return self.patch_size ** 3 * self.channels

    def output_shapes(self) -> Dict[str, tuple]:
        return {
            "trans": (self.grid_size ** 3,),
            "rot": (3, self.rot_bins),
            "open": (2,),
            "collide": (2,),
        }


def _dense(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))


def _small(rng: np.random.Generator, *shape) -> np.ndarray:
    return rng.normal(0.0, PROMPT_STD, size=shape)


def _add_norm(params: gc.ParameterSet, prefix: str, d: int) -> None:
    params.add(f"{prefix}.gain", np.ones(d))
    params.add(f"{prefix}.bias", np.zeros(d))


def _add_mlp(params: gc.ParameterSet, prefix: str, rng, d_in: int, hidden: int, d_out: int) -> None:
    params.add(f"{prefix}.w1", _dense(rng, d_in, hidden))
    params.add(f"{prefix}.b1", np.zeros(hidden))
    params.add(f"{prefix}.w2", _dense(rng, hidden, d_out))
    params.add(f"{prefix}.b2", np.zeros(d_out))


def _add_cross_attention(params: gc.ParameterSet, prefix: str, rng, d: int) -> None:
    _add_norm(params, f"{prefix}.ln_q", d)
    _add_norm(params, f"{prefix}.ln_kv", d)
    for name in ("wq", "wk", "wv", "wo"):
        params.add(f"{prefix}.{name}", _dense(rng, d, d))
    _add_norm(params, f"{prefix}.ln_mlp", d)
    _add_mlp(params, f"{prefix}.mlp", rng, d, 2 * d, d)


def _add_self_attention(params: gc.ParameterSet, prefix: str, rng, d: int) -> None:
    _add_norm(params, f"{prefix}.ln", d)
    params.add(f"{prefix}.wq.0", _dense(rng, d, d))
    params.add(f"{prefix}.wk.0", _dense(rng, d, d))
    params.add(f"{prefix}.wv", _dense(rng, d, d))
    params.add(f"{prefix}.wo", _dense(rng, d, d))
    _add_norm(params, f"{prefix}.ln_mlp", d)
    _add_mlp(params, f"{prefix}.mlp", rng, d, 2 * d, d)


class PolicyModel:
    """Parameters plus the skill registry of an extendable policy."""

    def __init__(
        self,
        config: PolicyConfig,
        params: gc.ParameterSet,
        prompts: Sequence[str],
        skills: Dict[str, str],
        weight_blocks: Sequence[str],
    ):
        self.config = config
        self.params = params
        self.prompts = list(prompts)
        self.skills = dict(skills)
        self.weight_blocks = list(weight_blocks)
        self._build_layout()

    @classmethod
    def build(cls, config: PolicyConfig, prompts: Sequence[str] = (BASE_PROMPT,)) -> "PolicyModel":
        rng = make_rng(config.seed, "policy-init")
        d = config.d_model
        params = gc.ParameterSet()

        params.add("encoder.voxel.w1", _dense(rng, config.patch_width, d))
        params.add("encoder.voxel.b1", np.zeros(d))
        params.add("encoder.voxel.w2", _dense(rng, d, d))
        params.add("encoder.voxel.b2", np.zeros(d))
        params.add("encoder.voxel.pos", _small(rng, config.voxel_tokens, d))
        params.add("encoder.proprio.w", _dense(rng, PROPRIO_DIM, d))
        params.add("encoder.proprio.b", np.zeros(d))
        params.add("encoder.lang.embed", _small(rng, config.vocab_size, d))
        params.add("encoder.lang.pos", _small(rng, config.max_tokens, d))

        params.add("epio.latents", _small(rng, config.latents, d))
        _add_cross_attention(params, "epio.cross_in", rng, d)
        for i in range(config.layers):
            _add_self_attention(params, f"epio.layers.{i}", rng, d)
        _add_cross_attention(params, "epio.cross_out", rng, d)

        params.add("decoder.trans.w", _dense(rng, d, config.patch_size ** 3))
        params.add("decoder.trans.b", np.zeros(config.patch_size ** 3))
        _add_mlp(params, "decoder.mlp", rng, 4 * d + config.context_width, d, 3 * config.rot_bins + 4)
        skip_size = int(np.prod(config.skip_shape))
        params.add("decoder.skip.w1", _dense(rng, config.context_width, 2 * d))
        params.add("decoder.skip.b1", np.zeros(2 * d))
        params.add("decoder.skip.w2", np.zeros((2 * d, skip_size)))
        params.add("decoder.skip.b2", np.zeros(skip_size))

        model = cls(config, params, [], {}, [BASE_PROMPT])
        for name in prompts:
            model.add_prompt(name)
        return model

    def _build_layout(self) -> None:
        cfg = self.config
        g, p = cfg.grid_size, cfg.patch_size
        n = g // p
        patch_major = np.arange(g ** 3).reshape(n, p, n, p, n, p).transpose(0, 2, 4, 1, 3, 5).reshape(-1)
        self.cell_order = np.argsort(patch_major)
        centers = (np.indices((n, n, n)).reshape(3, -1).T + 0.5) / n
        self.coords = centers.astype(np.float64)

    # ------------------------------------------------------------ registry

    def add_prompt(self, name: str) -> str:
        path = f"epio.prompts.{name}"
        if name in self.prompts:
            raise RegistryError(f"prompt block '{name}' already registered")
        rng = make_rng(self.config.seed, "prompt", name)
        self.params.add(path, _small(rng, self.config.prompt_len, self.config.d_model))
        self.prompts.append(name)
        return path

    def register_skill(self, skill: str, prompt: str) -> None:
        if skill in self.skills:
            raise RegistryError(f"skill '{skill}' already registered")
        if prompt not in self.prompts:
            raise RegistryError(f"prompt block '{prompt}' does not exist")
        self.skills[skill] = prompt

    def query_width(self) -> int:
        return self.config.d_model + (len(self.weight_blocks) - 1) * self.config.d_new

    def extend_for_skill(self, skill: str, freeze: str = "encoder+epio") -> List[str]:
        """Append a prompt block and one W_Q/W_K block per layer; returns the new paths."""
        if skill in self.skills or skill in self.prompts:
            raise RegistryError(f"skill '{skill}' already registered")
        cfg = self.config
        rng = make_rng(cfg.seed, "extend", skill)
        block = len(self.weight_blocks)
        new_paths = [self.add_prompt(skill)]
        for i in range(cfg.layers):
            prefix = f"epio.layers.{i}"
            if cfg.extension_init == "zero":
                query = np.zeros((cfg.d_model, cfg.d_new))
            else:
                query = _small(rng, cfg.d_model, cfg.d_new)
            self.params.add(f"{prefix}.wq.{block}", query)
            self.params.add(f"{prefix}.wk.{block}", np.zeros((cfg.d_model, cfg.d_new)))
            new_paths += [f"{prefix}.wq.{block}", f"{prefix}.wk.{block}"]
        self.weight_blocks.append(skill)
        self.skills[skill] = skill
        self.apply_freeze(freeze, keep=new_paths)
        logger.info(
            f"Extended policy for {skill}: query width {self.query_width()}, "
            f"{self.params.count(trainable_only=True)} of {self.params.count()} parameters trainable"
        )
        return new_paths

    def apply_freeze(self, policy: str, keep: Sequence[str] = ()) -> List[str]:
        if policy not in FREEZE_PREFIXES:
            raise ConfigError(f"unknown freeze policy '{policy}'")
        self.params.set_trainable(list(self.params), True)
        frozen = []
        for prefix in FREEZE_PREFIXES[policy]:
            frozen += self.params.freeze_prefix(prefix)
        self.params.set_trainable(keep, True)
        return [p for p in frozen if p not in set(keep)]

    def prompt_paths(self) -> List[str]:
        return [f"epio.prompts.{name}" for name in self.prompts]

    def clone(self) -> "PolicyModel":
        return PolicyModel(self.config, self.params.copy(), self.prompts, self.skills, self.weight_blocks)

    # ------------------------------------------------------------ forward

    def check_batch(self, batch: ObservationBatch) -> None:
        cfg = self.config
        expected = (cfg.grid_size,) * 3 + (cfg.channels,)
        if batch.grids.ndim != 5 or batch.grids.shape[1:] != expected:
            raise DimensionError(f"grids {batch.grids.shape} do not match (B,) + {expected}")
        if batch.proprio.shape != (batch.size, PROPRIO_DIM):
            raise DimensionError(f"proprioception {batch.proprio.shape} does not match ({batch.size}, {PROPRIO_DIM})")
        if batch.tokens.shape != (batch.size, cfg.max_tokens):
            raise DimensionError(f"tokens {batch.tokens.shape} do not match ({batch.size}, {cfg.max_tokens})")

    def patchify(self, grids: np.ndarray) -> np.ndarray:
        cfg = self.config
        b, p = grids.shape[0], cfg.patch_size
        n = cfg.grid_size // p
        blocks = grids.reshape(b, n, p, n, p, n, p, cfg.channels).transpose(0, 1, 3, 5, 2, 4, 6, 7)
        return blocks.reshape(b, n ** 3, cfg.patch_width)

    def forward(
        self,
        batch: ObservationBatch,
        tensors: Optional[Dict[str, gc.Tensor]] = None,
        prompts: Optional[Sequence[str]] = None,
    ) -> QValues:
        return forward(self, batch, tensors, prompts)

    def __call__(self, batch: ObservationBatch) -> QValues:
        return forward(self, batch)


def direct_context(cfg: PolicyConfig, batch: ObservationBatch) -> np.ndarray:
    """Bag of instruction words, one-hot keyframe time and raw proprioception."""
    b = batch.size
    words = np.zeros((b, cfg.vocab_size))
    np.add.at(words, (np.repeat(np.arange(b), batch.tokens.shape[1]), batch.tokens.reshape(-1)), 1.0)
    words[:, 0] = 0.0  # padding
    steps = np.clip(np.rint(batch.proprio[:, -1] * T_MAX), 0, T_MAX).astype(np.int64)
    clock = np.zeros((b, T_MAX + 1))
    clock[np.arange(b), steps] = 1.0
    return np.concatenate([words, clock, batch.proprio], axis=1)


def _norm(t, prefix: str, x):
    return gc.layer_norm(x, t[f"{prefix}.gain"], t[f"{prefix}.bias"])


def _mlp(t, prefix: str, x):
    hidden = gc.gelu(gc.linear(x, t[f"{prefix}.w1"], t[f"{prefix}.b1"]))
    return gc.linear(hidden, t[f"{prefix}.w2"], t[f"{prefix}.b2"])


def _attend(q, k, v, factor: float):
    scores = gc.scale(gc.matmul(q, gc.transpose(k)), factor)
    return gc.matmul(gc.softmax(scores, axis=-1), v)


def _cross_block(t, prefix: str, queries, context, factor: float):
    q = gc.matmul(_norm(t, f"{prefix}.ln_q", queries), t[f"{prefix}.wq"])
    kv = _norm(t, f"{prefix}.ln_kv", context)
    k = gc.matmul(kv, t[f"{prefix}.wk"])
    v = gc.matmul(kv, t[f"{prefix}.wv"])
    x = gc.add(queries, gc.matmul(_attend(q, k, v, factor), t[f"{prefix}.wo"]))
    return gc.add(x, _mlp(t, f"{prefix}.mlp", _norm(t, f"{prefix}.ln_mlp", x)))


def _self_block(model: PolicyModel, t, prefix: str, x):
    cfg = model.config
    blocks = range(len(model.weight_blocks))
    h = _norm(t, f"{prefix}.ln", x)
    wq = gc.concat([t[f"{prefix}.wq.{b}"] for b in blocks], axis=1)
    wk = gc.concat([t[f"{prefix}.wk.{b}"] for b in blocks], axis=1)
    q, k, v = gc.matmul(h, wq), gc.matmul(h, wk), gc.matmul(h, t[f"{prefix}.wv"])
    width = cfg.d_model if cfg.attention_scale == "model" else wq.shape[1]
    x = gc.add(x, gc.matmul(_attend(q, k, v, 1.0 / np.sqrt(width)), t[f"{prefix}.wo"]))
    return gc.add(x, _mlp(t, f"{prefix}.mlp", _norm(t, f"{prefix}.ln_mlp", x)))


def forward(
    model: PolicyModel,
    batch: ObservationBatch,
    tensors: Optional[Dict[str, gc.Tensor]] = None,
    prompts: Optional[Sequence[str]] = None,
) -> QValues:
    """Q-values for a batch; ``prompts`` restricts which prompt blocks join the input."""
    cfg = model.config
    model.check_batch(batch)
    t = tensors if tensors is not None else model.params.constants()
    b, d, r = batch.size, cfg.d_model, cfg.rot_bins
    factor = 1.0 / np.sqrt(d)

    voxels = gc.gelu(gc.linear(model.patchify(batch.grids), t["encoder.voxel.w1"], t["encoder.voxel.b1"]))
    voxels = gc.bias_add(gc.linear(voxels, t["encoder.voxel.w2"], t["encoder.voxel.b2"]), t["encoder.voxel.pos"])
    proprio = gc.reshape(gc.linear(batch.proprio, t["encoder.proprio.w"], t["encoder.proprio.b"]), (b, 1, d))
    language = gc.bias_add(gc.take(t["encoder.lang.embed"], batch.tokens, axis=0), t["encoder.lang.pos"])
    names = model.prompts if prompts is None else list(prompts)
    for name in names:
        if name not in model.prompts:
            raise RegistryError(f"prompt block '{name}' is not registered")
    action_prompts = [gc.repeat_batch(t[f"epio.prompts.{name}"], b) for name in names]
    tokens = gc.concat([voxels, proprio, language] + action_prompts, axis=1)

    latents = _cross_block(t, "epio.cross_in", gc.repeat_batch(t["epio.latents"], b), tokens, factor)
    for i in range(cfg.layers):
        latents = _self_block(model, t, f"epio.layers.{i}", latents)
    decoded = _cross_block(t, "epio.cross_out", voxels, latents, factor)

    cells = gc.linear(decoded, t["decoder.trans.w"], t["decoder.trans.b"])
    trans = gc.take(gc.reshape(cells, (b, cfg.grid_size ** 3)), model.cell_order, axis=1)

    pooled = gc.max_reduce(decoded, axis=1)
    spatial = gc.matmul(gc.transpose(gc.softmax(decoded, axis=1)), model.coords)
    features = gc.concat([pooled, gc.reshape(spatial, (b, 3 * d))], axis=1)
    context = gc.constant(direct_context(cfg, batch))
    kernel = gc.reshape(_mlp(t, "decoder.skip", context), (b,) + cfg.skip_shape)
    local = gc.correlate3d(batch.grids, kernel)
    trans = gc.add(trans, gc.reshape(local, (b, cfg.grid_size ** 3)))

    out = _mlp(t, "decoder.mlp", gc.concat([features, context], axis=1))
    rot = gc.reshape(gc.slice_(out, 1, 0, 3 * r), (b, 3, r))
    grip = gc.slice_(out, 1, 3 * r, 3 * r + 2)
    collide = gc.slice_(out, 1, 3 * r + 2, 3 * r + 4)
    return QValues(trans=trans, rot=rot, open=grip, collide=collide, features=features)


def predict_action(q: QValues, index: int = 0) -> KeyframeAction:
    """Per-head argmax; np.argmax returns the lowest index among ties."""
    return KeyframeAction(
        trans=int(np.argmax(q.trans.data[index])),
        rot=tuple(int(v) for v in np.argmax(q.rot.data[index], axis=-1)),
        open=int(np.argmax(q.open.data[index])),
        collide=int(np.argmax(q.collide.data[index])),
    )


def predict_actions(q: QValues) -> List[KeyframeAction]:
    return [predict_action(q, i) for i in range(q.size)]


def prompt_attribution(model: PolicyModel, batch: ObservationBatch, actions: ActionBatch) -> Dict[str, float]:
    """Share of summed |gradient| of the action loss landing on each prompt block."""
    if batch.size == 0 or actions.size == 0:
        raise ContractError("prompt attribution needs a non-empty batch")
    if not model.prompts:
        raise ContractError("no prompt blocks registered")
    with gc.Tape() as tape:
        bound = model.params.bind(tape, everything=True)
        heads = head_cross_entropies(forward(model, batch, bound), actions)
        loss = gc.add(gc.add(heads["trans"], heads["rot"]), gc.add(heads["open"], heads["collide"]))
        grads = gc.backward(loss, tape)
    mass = np.array([np.abs(grads[path]).sum() for path in model.prompt_paths()])
    total = mass.sum()
    weights = mass / total if total > 0 else np.full(len(mass), 1.0 / len(mass))
    return {name: float(w) for name, w in zip(model.prompts, weights)}
