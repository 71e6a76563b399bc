import itertools
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..core import gradcore as gc
from ..core.errors import ConfigError, ContractError
from ..model.batch import per_sample_cross_entropy, stack_samples
from ..model.schemas import STRATEGIES, EntropyRecord
from ..model.world import KeyframeSample

logger = logging.getLogger(__name__)

BRUTE_FORCE_BUDGET = 10 ** 6
SCORE_CHUNK = 64
# distances closer than this count as tied and resolve to the lowest index
TIE_TOLERANCE = 1e-12
ENTROPY_MODES = ("action_loss", "shannon")

SlotKey = Tuple[str, int]


@dataclass
class ReplayBuffer:
    """Exemplars per (skill, keyframe slot), at most ``quota`` each."""

    quota: int
    slots: Dict[SlotKey, List[KeyframeSample]] = field(default_factory=dict)

    def add(self, skill: str, slot: int, samples: Sequence[KeyframeSample]) -> None:
        if len(samples) > self.quota:
            raise ContractError(f"slot ({skill}, {slot}) would hold {len(samples)} > quota {self.quota}")
        self.slots[(skill, slot)] = list(samples)

    def samples(self) -> List[KeyframeSample]:
        return [s for key in self.slots for s in self.slots[key]]

    def skills(self) -> List[str]:
        return list(dict.fromkeys(skill for skill, _ in self.slots))

    def for_skill(self, skill: str) -> Dict[int, List[KeyframeSample]]:
        return {slot: items for (name, slot), items in self.slots.items() if name == skill}

    def provenance(self) -> List[dict]:
        return [
            {"skill": skill, "slot": slot, "demo_id": s.demo_id, "seed": s.seed}
            for (skill, slot), items in self.slots.items()
            for s in items
        ]

    def __len__(self) -> int:
        return sum(len(items) for items in self.slots.values())


# ---------------------------------------------------------------- keyframes


def extract_keyframes(trajectory: Sequence) -> List[int]:
    """Indices where the gripper bit toggles or the effector stands still; the last step always counts."""
    if not trajectory:
        raise ContractError("cannot extract keyframes from an empty trajectory")
    keyframes = []
    for i in range(1, len(trajectory)):
        before, now = trajectory[i - 1], trajectory[i]
        toggled = now.gripper_open != before.gripper_open
        # standstill threshold is zero cells in the discrete world
        still = now.effector == before.effector
        if toggled or still:
            keyframes.append(i)
    last = len(trajectory) - 1
    if not keyframes or keyframes[-1] != last:
        keyframes.append(last)
    return keyframes


def group_by_slot(samples: Sequence[KeyframeSample]) -> Dict[int, List[KeyframeSample]]:
    grouped = defaultdict(list)
    for sample in samples:
        grouped[sample.slot].append(sample)
    return dict(sorted(grouped.items()))


# ---------------------------------------------------------------- scoring


def _predict_chunks(model, samples: Sequence[KeyframeSample]):
    for start in range(0, len(samples), SCORE_CHUNK):
        chunk = samples[start : start + SCORE_CHUNK]
        observations, actions = stack_samples(chunk, model.config.max_tokens)
        yield model.forward(observations), actions


def _shannon(logits: np.ndarray) -> np.ndarray:
    log_p = gc.log_softmax(gc.constant(logits), axis=-1).data
    return -(np.exp(log_p) * log_p).sum(axis=-1)


def score_entropy(model, samples: Sequence[KeyframeSample], mode: str = "action_loss") -> List[EntropyRecord]:
    """Per-sample action-prediction entropy under a fixed model."""
    if mode not in ENTROPY_MODES:
        raise ConfigError(f"unknown entropy mode '{mode}'")
    values = []
    for q, actions in _predict_chunks(model, samples):
        if mode == "action_loss":
            values.extend(per_sample_cross_entropy(q, actions))
        else:
            total = (
                _shannon(q.trans.data)
                + _shannon(q.rot.data).sum(axis=-1)
                + _shannon(q.open.data)
                + _shannon(q.collide.data)
            )
            values.extend(total)
    return [
        EntropyRecord(demo_id=s.demo_id, slot=s.slot, entropy=max(0.0, float(e)))
        for s, e in zip(samples, values)
    ]


def sample_features(model, samples: Sequence[KeyframeSample]) -> np.ndarray:
    """Pooled decoder-input features, one row per sample."""
    return np.concatenate([q.features.data for q, _ in _predict_chunks(model, samples)], axis=0)


# ---------------------------------------------------------------- selection


def distance_array(entropies: Sequence[float]) -> np.ndarray:
    e = np.asarray(entropies, dtype=np.float64)
    return np.abs(e[:, None] - e[None, :])


def _check_quota(n: int, k: int) -> None:
    if k < 1:
        raise ContractError(f"selection size must be at least 1, got {k}")
    if k > n:
        raise ContractError(f"cannot select {k} of {n} samples")


def farthest_entropy_sample(entropies: Sequence[float], k: int) -> List[int]:
    """Greedy max-sum dispersion over |e_i - e_j|; indices in selection order, ties to the lowest index."""
    n = len(entropies)
    _check_quota(n, k)
    if k == n:
        return list(range(n))
    distances = distance_array(entropies)
    totals = distances.sum(axis=1)
    selected = [int(np.flatnonzero(totals >= totals.max() - TIE_TOLERANCE)[0])]
    gain = distances[selected[0]].copy()
    for _ in range(k - 1):
        candidates = gain.copy()
        candidates[selected] = -np.inf
        pick = int(np.flatnonzero(candidates >= candidates.max() - TIE_TOLERANCE)[0])
        selected.append(pick)
        gain += distances[pick]
    return selected


def dispersion(entropies: Sequence[float], subset: Sequence[int]) -> float:
    """Sum of A[i][j] over ordered pairs in the subset (each pair counted twice)."""
    distances = distance_array(entropies)
    idx = np.asarray(subset, dtype=np.int64)
    return float(distances[np.ix_(idx, idx)].sum())


def brute_force_dispersion(entropies: Sequence[float], k: int) -> Tuple[Tuple[int, ...], float]:
    n = len(entropies)
    _check_quota(n, k)
    if math.comb(n, k) > BRUTE_FORCE_BUDGET:
        raise ContractError(f"C({n}, {k}) exceeds the brute-force budget of {BRUTE_FORCE_BUDGET}")
    distances = distance_array(entropies)
    best, best_value = None, -np.inf
    for subset in itertools.combinations(range(n), k):
        idx = np.asarray(subset)
        value = float(distances[np.ix_(idx, idx)].sum())
        if value > best_value:
            best, best_value = subset, value
    return best, best_value


def herding_select(features: np.ndarray, k: int) -> List[int]:
    """Greedy mean matching: each pick brings the running exemplar mean closest to the class mean."""
    n = features.shape[0]
    _check_quota(n, k)
    target = features.mean(axis=0)
    selected: List[int] = []
    running = np.zeros_like(target)
    for step in range(1, k + 1):
        candidates = (running[None, :] + features) / step
        distances = np.linalg.norm(candidates - target[None, :], axis=1)
        distances[selected] = np.inf
        pick = int(np.flatnonzero(distances <= distances.min() + TIE_TOLERANCE)[0])
        selected.append(pick)
        running += features[pick]
    return selected


def hard_select(entropies: Sequence[float], k: int) -> List[int]:
    _check_quota(len(entropies), k)
    return [int(i) for i in np.argsort(-np.asarray(entropies, dtype=np.float64), kind="stable")[:k]]


# ---------------------------------------------------------------- buffer


def _select_slot(model, samples, k, strategy, rng, entropy_mode) -> List[KeyframeSample]:
    if strategy == "random":
        picks = sorted(int(i) for i in rng.choice(len(samples), size=k, replace=False))
    elif strategy == "herding":
        picks = herding_select(sample_features(model, samples), k)
    else:
        entropies = [r.entropy for r in score_entropy(model, samples, entropy_mode)]
        if strategy == "farthest-entropy":
            picks = farthest_entropy_sample(entropies, k)
        else:
            picks = hard_select(entropies, k)
    return [samples[i] for i in picks]


def build_memory(
    demos_by_skill: Mapping[str, Sequence],
    model,
    k: int,
    strategy: str,
    rng: np.random.Generator,
    buffer: Optional[ReplayBuffer] = None,
    entropy_mode: str = "action_loss",
) -> ReplayBuffer:
    """Add exemplars for each listed skill to ``buffer`` (a new one when omitted)."""
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown replay strategy '{strategy}'")
    if k < 0:
        raise ConfigError(f"replay quota must be non-negative, got {k}")
    buffer = buffer if buffer is not None else ReplayBuffer(quota=k)
    try:
        for skill, demos in demos_by_skill.items():
            if k == 0:
                continue
            if strategy == "episode":
                chosen = sorted(int(i) for i in rng.choice(len(demos), size=min(k, len(demos)), replace=False))
                picked = [s for i in chosen for s in demos[i].samples]
                for slot, items in group_by_slot(picked).items():
                    buffer.add(skill, slot, items)
                continue
            for slot, items in group_by_slot([s for d in demos for s in d.samples]).items():
                quota = min(k, len(items))
                if quota < k:
                    logger.warning(f"Slot {slot} of {skill} has {len(items)} samples, fewer than quota {k}")
                buffer.add(skill, slot, _select_slot(model, items, quota, strategy, rng, entropy_mode))
        logger.info(f"Replay memory holds {len(buffer)} samples over {len(buffer.skills())} skills ({strategy})")
        return buffer
    except Exception as e:
        logger.error(f"Error in build_memory: {str(e)}")
        raise


def sample_batch(
    buffer: Optional[ReplayBuffer],
    new_samples: Sequence[KeyframeSample],
    batch_size: int,
    rng: np.random.Generator,
    replay_ratio: Optional[float] = None,
) -> List[KeyframeSample]:
    """Uniform draw with replacement over memory plus new-skill samples.

    With ``replay_ratio`` each draw comes from memory with that probability instead.
    """
    if batch_size < 1:
        raise ContractError(f"batch size must be at least 1, got {batch_size}")
    memory = buffer.samples() if buffer is not None else []
    pool = memory + list(new_samples)
    if not pool:
        raise ContractError("both memory and new-skill data are empty")
    if replay_ratio is None or not memory or not new_samples:
        return [pool[int(i)] for i in rng.integers(0, len(pool), size=batch_size)]
    from_memory = rng.random(batch_size) < replay_ratio
    batch = []
    for use_memory in from_memory:
        source = memory if use_memory else new_samples
        batch.append(source[int(rng.integers(0, len(source)))])
    return batch
