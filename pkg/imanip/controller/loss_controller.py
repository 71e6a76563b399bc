import logging
from typing import Optional

from ..core import gradcore as gc
from ..core.errors import ConfigError, DimensionError
from ..model.batch import ActionBatch, QValues, head_cross_entropies
from ..model.schemas import LossReport

logger = logging.getLogger(__name__)


def action_loss(q: QValues, target: ActionBatch) -> gc.Tensor:
    """Summed per-head cross-entropy, averaged over the batch."""
    heads = head_cross_entropies(q, target)
    return gc.add(gc.add(heads["trans"], heads["rot"]), gc.add(heads["open"], heads["collide"]))


def _positive_probability(logits: gc.Tensor) -> gc.Tensor:
    return gc.slice_(gc.softmax(logits, axis=-1), -1, 1, 2)


def distill_loss(q_old: QValues, q_new: QValues) -> gc.Tensor:
    """MSE between trans and per-axis rot distributions plus |dp| on open and collide.

    ``q_old`` is treated as a constant; no gradient reaches the model that produced it.
    """
    for name, old, new in zip(("trans", "rot", "open", "collide"), q_old.heads().values(), q_new.heads().values()):
        if old.shape != new.shape:
            raise DimensionError(f"{name} head shapes differ: {old.shape} vs {new.shape}")
    old = q_old.detached()
    b = q_new.size

    trans_gap = gc.sub(gc.softmax(q_new.trans, axis=-1), gc.softmax(old.trans, axis=-1))
    trans_term = gc.scale(gc.sum_(gc.mul(trans_gap, trans_gap)), 1.0 / (b * q_new.trans.shape[-1]))

    rot_gap = gc.sub(gc.softmax(q_new.rot, axis=-1), gc.softmax(old.rot, axis=-1))
    rot_term = gc.scale(gc.sum_(gc.mul(rot_gap, rot_gap)), 1.0 / (b * q_new.rot.shape[-1]))

    open_term = gc.mean(gc.abs_(gc.sub(_positive_probability(q_new.open), _positive_probability(old.open))))
    collide_term = gc.mean(
        gc.abs_(gc.sub(_positive_probability(q_new.collide), _positive_probability(old.collide)))
    )
    return gc.add(gc.add(trans_term, rot_term), gc.add(open_term, collide_term))


def total_loss(l_act: gc.Tensor, l_dis: Optional[gc.Tensor], lambda_dis: float) -> gc.Tensor:
    if lambda_dis < 0:
        raise ConfigError(f"lambda_dis must be non-negative, got {lambda_dis}")
    if l_dis is None or lambda_dis == 0:
        return l_act
    return gc.add(l_act, gc.scale(l_dis, lambda_dis))


def loss_report(q: QValues, target: ActionBatch, q_old: Optional[QValues], lambda_dis: float) -> LossReport:
    heads = head_cross_entropies(q.detached(), target)
    l_act = sum(h.item() for h in heads.values())
    l_dis = distill_loss(q_old, q.detached()).item() if q_old is not None else 0.0
    return LossReport(
        l_act=l_act,
        l_dis=l_dis,
        l_total=l_act + lambda_dis * l_dis,
        per_head={name: h.item() for name, h in heads.items()},
    )
