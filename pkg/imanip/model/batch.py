"""Stacked observations, action labels and policy outputs."""
from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np

from ..core import gradcore as gc
from ..core.errors import ContractError, DimensionError
from .schemas import KeyframeAction
from .world import MAX_TOKENS, PAD, TOKEN_ID, KeyframeSample, VoxelObservation


@dataclass(frozen=True)
class ObservationBatch:
    grids: np.ndarray  # (B, G, G, G, C)
    proprio: np.ndarray  # (B, 5)
    tokens: np.ndarray  # (B, L) int

    @property
    def size(self) -> int:
        return self.grids.shape[0]

    @classmethod
    def from_observations(cls, observations: Sequence[VoxelObservation], max_tokens: int = MAX_TOKENS) -> "ObservationBatch":
        if not observations:
            raise ContractError("empty observation batch")
        tokens = np.full((len(observations), max_tokens), TOKEN_ID[PAD], dtype=np.int64)
        for i, obs in enumerate(observations):
            ids = obs.tokens[:max_tokens]
            tokens[i, : len(ids)] = ids
        return cls(
            grids=np.stack([o.grid for o in observations]),
            proprio=np.stack([o.proprio for o in observations]),
            tokens=tokens,
        )

    def subset(self, index) -> "ObservationBatch":
        return ObservationBatch(self.grids[index], self.proprio[index], self.tokens[index])


@dataclass(frozen=True)
class ActionBatch:
    trans: np.ndarray  # (B,)
    rot: np.ndarray  # (B, 3)
    open: np.ndarray  # (B,)
    collide: np.ndarray  # (B,)

    @property
    def size(self) -> int:
        return self.trans.shape[0]

    @classmethod
    def from_actions(cls, actions: Sequence[KeyframeAction]) -> "ActionBatch":
        if not actions:
            raise ContractError("empty action batch")
        return cls(
            trans=np.array([a.trans for a in actions], dtype=np.int64),
            rot=np.array([a.rot for a in actions], dtype=np.int64),
            open=np.array([a.open for a in actions], dtype=np.int64),
            collide=np.array([a.collide for a in actions], dtype=np.int64),
        )


@dataclass
class QValues:
    """Per-head logits for a batch: trans (B, G^3), rot (B, 3, R), open (B, 2), collide (B, 2)."""

    trans: gc.Tensor
    rot: gc.Tensor
    open: gc.Tensor
    collide: gc.Tensor
    features: gc.Tensor  # pooled decoder input (B, 4d)

    @property
    def size(self) -> int:
        return self.trans.shape[0]

    def heads(self) -> Dict[str, gc.Tensor]:
        return {"trans": self.trans, "rot": self.rot, "open": self.open, "collide": self.collide}

    def detached(self) -> "QValues":
        return QValues(*(gc.constant(t) for t in (self.trans, self.rot, self.open, self.collide, self.features)))


def check_pair(q: QValues, actions: ActionBatch) -> None:
    if q.size != actions.size:
        raise DimensionError(f"{q.size} predictions for {actions.size} labels")
    if actions.rot.shape != (actions.size, q.rot.shape[1]):
        raise DimensionError(f"rotation labels {actions.rot.shape} do not match head {q.rot.shape}")


def head_cross_entropies(q: QValues, actions: ActionBatch) -> Dict[str, gc.Tensor]:
    """Batch-mean cross-entropy per head; rotation holds the per-axis sum."""
    check_pair(q, actions)
    return {
        "trans": gc.mean(gc.cross_entropy(q.trans, actions.trans)),
        "rot": gc.scale(gc.sum_(gc.cross_entropy(q.rot, actions.rot)), 1.0 / actions.size),
        "open": gc.mean(gc.cross_entropy(q.open, actions.open)),
        "collide": gc.mean(gc.cross_entropy(q.collide, actions.collide)),
    }


def per_sample_cross_entropy(q: QValues, actions: ActionBatch) -> np.ndarray:
    """Summed head cross-entropy for each sample, shape (B,)."""
    check_pair(q, actions)
    trans = gc.cross_entropy(gc.constant(q.trans), actions.trans).data
    rot = gc.cross_entropy(gc.constant(q.rot), actions.rot).data.sum(axis=1)
    grip = gc.cross_entropy(gc.constant(q.open), actions.open).data
    col = gc.cross_entropy(gc.constant(q.collide), actions.collide).data
    return trans + rot + grip + col


def stack_samples(samples: Sequence[KeyframeSample], max_tokens: int = MAX_TOKENS):
    """(ObservationBatch, ActionBatch) for a list of keyframe samples."""
    if not samples:
        raise ContractError("cannot stack an empty sample list")
    return (
        ObservationBatch.from_observations([s.observation for s in samples], max_tokens),
        ActionBatch.from_actions([s.action for s in samples]),
    )
