import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..core import gradcore as gc
from ..core.errors import ConfigError, ContractError, LearnabilityGateError
from ..core.rng import derive_seed, make_rng
from ..model.batch import ObservationBatch, stack_samples
from ..model.policy import BASE_PROMPT, PolicyConfig, PolicyModel, predict_actions, prompt_attribution
from ..model.schemas import RunConfig, Schedule, StepReport, WorldState
from ..model.world import MAX_TOKENS, Demonstration, KeyframeSample
from . import world_controller
from .loss_controller import action_loss, distill_loss, total_loss
from .memory_controller import ReplayBuffer, build_memory, sample_batch

logger = logging.getLogger(__name__)

CONVERGENCE_WINDOW = 50
CONVERGENCE_MARGIN = 1.10
ATTRIBUTION_SAMPLES = 16

DemoSet = Dict[str, List[Demonstration]]


@dataclass(frozen=True)
class MethodPlan:
    method: str
    extend: bool
    freeze: str
    replay_k: int
    strategy: str
    lambda_dis: float


def method_plan(method: str, schedule: Schedule) -> MethodPlan:
    if method == "imanip":
        return MethodPlan(method, True, schedule.freeze, schedule.replay_k, schedule.strategy, schedule.lambda_dis)
    if method == "finetune":
        return MethodPlan(method, False, "none", 0, schedule.strategy, 0.0)
    if method == "tib":
        return MethodPlan(method, False, "none", schedule.replay_k, "herding", schedule.lambda_dis)
    raise ConfigError(f"unknown method '{method}'")


def policy_config(config: RunConfig, seed: int) -> PolicyConfig:
    return PolicyConfig(
        grid_size=config.grid_size,
        rot_bins=config.rot_bins,
        d_model=config.d_model,
        latents=config.latents,
        layers=config.layers,
        patch_size=config.patch_size,
        prompt_len=config.prompt_len,
        d_new=config.d_new,
        attention_scale=config.attention_scale,
        extension_init=config.extension_init,
        seed=seed,
    )


def generate_data(schedule: Schedule, config: RunConfig, skills: Optional[Sequence[str]] = None) -> DemoSet:
    """Demonstrations for ``skills`` (default: every scheduled skill); depends on the seed only, never on the method."""
    if skills is None:
        skills = schedule.learned_through(len(schedule.steps))
    return {
        skill: world_controller.generate_demos(
            skill, config.demos_per_skill, schedule.seed, config.grid_size, config.rot_bins
        )
        for skill in skills
    }


def samples_of(demos: DemoSet, skills: Sequence[str]) -> List[KeyframeSample]:
    return [s for skill in skills for demo in demos[skill] for s in demo.samples]


# ---------------------------------------------------------------- optimization


@dataclass
class PhaseStats:
    l_act: List[float] = field(default_factory=list)
    l_dis: List[float] = field(default_factory=list)
    wall_ms: int = 0

    def final(self, trace: List[float]) -> float:
        if not trace:
            return 0.0
        return float(np.mean(trace[-CONVERGENCE_WINDOW:]))


def iterations_to_converge(trace: Sequence[float]) -> int:
    """First iteration whose trailing-window mean is within 110% of the last window mean."""
    if not len(trace):
        return 0
    window = min(CONVERGENCE_WINDOW, len(trace))
    running = np.convolve(np.asarray(trace, dtype=np.float64), np.ones(window) / window, mode="valid")
    hits = np.nonzero(running <= CONVERGENCE_MARGIN * running[-1])[0]
    return int(hits[0]) + window


def sgd_step(params: gc.ParameterSet, grads: Dict[str, np.ndarray], lr: float, grad_clip: Optional[float]) -> None:
    factor = lr
    if grad_clip is not None:
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
        if norm > grad_clip:
            factor = lr * grad_clip / norm
    for path, grad in grads.items():
        params.update(path, params[path].data - factor * grad)


def train_phase(
    model: PolicyModel,
    new_samples: Sequence[KeyframeSample],
    memory: Optional[ReplayBuffer],
    old_model: Optional[PolicyModel],
    iterations: int,
    schedule: Schedule,
    lambda_dis: float,
    rng: np.random.Generator,
    replay_ratio: Optional[float] = None,
    grad_clip: Optional[float] = None,
    record_timing: bool = False,
) -> PhaseStats:
    """Plain gradient descent on L_act (+ lambda * L_dis against ``old_model``)."""
    stats = PhaseStats()
    started = time.perf_counter()
    for _ in range(iterations):
        batch = sample_batch(memory, new_samples, schedule.batch_size, rng, replay_ratio)
        observations, actions = stack_samples(batch, model.config.max_tokens)
        q_old = old_model.forward(observations) if old_model is not None and lambda_dis > 0 else None
        with gc.Tape() as tape:
            q = model.forward(observations, model.params.bind(tape))
            l_act = action_loss(q, actions)
            l_dis = distill_loss(q_old, q) if q_old is not None else None
            loss = total_loss(l_act, l_dis, lambda_dis)
            grads = gc.backward(loss, tape)
        sgd_step(model.params, grads, schedule.lr, grad_clip)
        stats.l_act.append(l_act.item())
        stats.l_dis.append(l_dis.item() if l_dis is not None else 0.0)
    if record_timing:
        stats.wall_ms = int(round((time.perf_counter() - started) * 1000))
    return stats


# ---------------------------------------------------------------- evaluation


@dataclass
class EvalEpisode:
    skill: str
    variation: str
    seed: int
    tokens: tuple
    state: WorldState
    steps: int = 0
    done: bool = False


class ModelPolicy:
    """Greedy argmax actions of a policy model."""

    def __init__(self, model: PolicyModel):
        self.model = model
        self.grid_size = model.config.grid_size
        self.max_tokens = model.config.max_tokens

    def act(self, episodes: Sequence[EvalEpisode], batch: ObservationBatch):
        return predict_actions(self.model.forward(batch))


class ExpertPolicy:
    """Replays the scripted expert's keyframe actions for each evaluated episode."""

    def __init__(self, grid_size: int = 8, rot_bins: int = 12):
        self.grid_size = grid_size
        self.rot_bins = rot_bins
        self.max_tokens = MAX_TOKENS
        self._plans: Dict[tuple, list] = {}

    def act(self, episodes: Sequence[EvalEpisode], batch: ObservationBatch):
        actions = []
        for ep in episodes:
            key = (ep.skill, ep.variation, ep.seed)
            if key not in self._plans:
                demo = world_controller.sample_episode(ep.skill, ep.variation, ep.seed, self.grid_size, self.rot_bins)
                self._plans[key] = demo.keyframe_actions()
            plan = self._plans[key]
            actions.append(plan[min(ep.steps, len(plan) - 1)])
        return actions


def evaluation_episodes(skill: str, count: int, seed: int, grid_size: int) -> List[EvalEpisode]:
    rng = make_rng(seed, "evaluation", skill)
    episodes = []
    for e in range(count):
        variation = world_controller.sample_variation(skill, rng)
        episode_seed = derive_seed(seed, "evaluation-episode", skill, e) & 0xFFFFFFFF
        episodes.append(
            EvalEpisode(
                skill=skill,
                variation=variation,
                seed=episode_seed,
                tokens=world_controller.instruction_tokens(skill, variation),
                state=world_controller.initial_state(skill, variation, episode_seed, grid_size),
            )
        )
    return episodes


def evaluate(
    policy,
    skills: Sequence[str],
    episodes_per_skill: int = 25,
    seed: int = 0,
    max_steps: int = 25,
) -> Dict[str, float]:
    """Success rate per skill; an episode ends at success or after ``max_steps`` keyframe actions."""
    actor = policy if hasattr(policy, "act") else ModelPolicy(policy)
    rates = {}
    for skill in skills:
        episodes = evaluation_episodes(skill, episodes_per_skill, seed, actor.grid_size)
        for _ in range(max_steps):
            active = [ep for ep in episodes if not ep.done]
            if not active:
                break
            batch = ObservationBatch.from_observations(
                [world_controller.render(ep.state, ep.tokens) for ep in active], actor.max_tokens
            )
            for ep, action in zip(active, actor.act(active, batch)):
                ep.state = world_controller.step(ep.state, action)
                ep.steps += 1
                ep.done = world_controller.success(ep.skill, ep.variation, ep.state)
        rates[skill] = sum(ep.done for ep in episodes) / episodes_per_skill
    return rates


# ---------------------------------------------------------------- protocol


def _mean(values: Sequence[float]) -> Optional[float]:
    return float(np.mean(values)) if len(values) else None


def attribution_by_skill(model: PolicyModel, demos: DemoSet, skills: Sequence[str]) -> Dict[str, List[float]]:
    weights = {}
    for skill in skills:
        observations, actions = stack_samples(samples_of(demos, [skill])[:ATTRIBUTION_SAMPLES], model.config.max_tokens)
        by_prompt = prompt_attribution(model, observations, actions)
        weights[skill] = [by_prompt[name] for name in model.prompts]
    return weights


def step_report(
    step: int,
    new_skills: Sequence[str],
    rates: Dict[str, float],
    model: PolicyModel,
    stats: PhaseStats,
    demos: DemoSet,
) -> StepReport:
    old = [rate for skill, rate in rates.items() if skill not in new_skills]
    new = [rates[skill] for skill in new_skills]
    return StepReport(
        step=step,
        new_skills=list(new_skills),
        per_skill=dict(rates),
        old=_mean(old),
        new=_mean(new),
        all=_mean(list(rates.values())) or 0.0,
        trainable_params=model.params.count(trainable_only=True),
        total_params=model.params.count(),
        iterations=len(stats.l_act),
        iterations_to_converge=iterations_to_converge(stats.l_act),
        l_act=stats.final(stats.l_act),
        l_dis=stats.final(stats.l_dis),
        wall_ms=stats.wall_ms,
        prompt_attribution=attribution_by_skill(model, demos, list(rates)),
    )


def run_base(schedule: Schedule, config: RunConfig, demos: DemoSet):
    """Joint behaviour cloning over the base skills; returns (model, StepReport)."""
    base = schedule.base_skills
    prompts = list(base) if config.base_prompt == "per-skill" else [BASE_PROMPT]
    model = PolicyModel.build(policy_config(config, schedule.seed), prompts)
    for skill in base:
        model.register_skill(skill, skill if config.base_prompt == "per-skill" else BASE_PROMPT)

    logger.info(f"Base phase on {base}: {schedule.iterations_base} iterations")
    stats = train_phase(
        model,
        samples_of(demos, base),
        None,
        None,
        schedule.iterations_base,
        schedule,
        0.0,
        make_rng(schedule.seed, "train", 0),
        grad_clip=config.grad_clip,
        record_timing=config.record_timing,
    )
    rates = evaluate(model, base, config.eval_episodes, schedule.seed, config.max_eval_steps)
    report = step_report(0, base, rates, model, stats, demos)
    logger.info(f"Base phase success {report.all:.3f} per skill {rates}")

    if config.base_gate is not None and report.all < config.base_gate:
        logger.error(f"Base success {report.all:.3f} is below the learnability gate {config.base_gate}")
        raise LearnabilityGateError(
            f"base all-skill success {report.all:.3f} < gate {config.base_gate}; per skill {rates}"
        )
    return model, report


def run_increment(
    model: PolicyModel,
    snapshot: Optional[PolicyModel],
    memory: ReplayBuffer,
    new_skills: Sequence[str],
    schedule: Schedule,
    config: RunConfig,
    demos: DemoSet,
    plan: MethodPlan,
    step: int,
):
    """One incremental step; returns (model, StepReport, memory including the new skills)."""
    if plan.extend:
        keep = []
        for skill in new_skills:
            keep += model.extend_for_skill(skill, plan.freeze)
        model.apply_freeze(plan.freeze, keep)
    else:
        for skill in new_skills:
            model.register_skill(skill, model.prompts[0])
        model.apply_freeze(plan.freeze)

    logger.info(
        f"Step {step} ({plan.method}) on {list(new_skills)}: {len(memory)} replay samples, "
        f"{model.params.count(trainable_only=True)} trainable parameters"
    )
    stats = train_phase(
        model,
        samples_of(demos, new_skills),
        memory,
        snapshot,
        schedule.iterations_step,
        schedule,
        plan.lambda_dis,
        make_rng(schedule.seed, "train", step),
        replay_ratio=config.replay_ratio,
        grad_clip=config.grad_clip,
        record_timing=config.record_timing,
    )
    if plan.replay_k > 0:
        memory = build_memory(
            {skill: demos[skill] for skill in new_skills},
            model,
            plan.replay_k,
            plan.strategy,
            make_rng(schedule.seed, "memory", step),
            buffer=memory,
            entropy_mode=config.entropy_mode,
        )
    learned = schedule.learned_through(step)
    rates = evaluate(model, learned, config.eval_episodes, schedule.seed, config.max_eval_steps)
    report = step_report(step, new_skills, rates, model, stats, demos)
    logger.info(f"Step {step} success old={report.old} new={report.new} all={report.all:.3f}")
    return model, report, memory


@dataclass
class RunResult:
    method: str
    schedule: Schedule
    reports: List[StepReport]
    model: PolicyModel
    memories: List[ReplayBuffer]
    demos: DemoSet


def copy_buffer(buffer: ReplayBuffer) -> ReplayBuffer:
    return ReplayBuffer(buffer.quota, {key: list(items) for key, items in buffer.slots.items()})


@dataclass
class ResumePoint:
    """A run stopped after ``step``: its reports and memories so far plus the model at that point."""

    reports: List[StepReport]
    memories: List[ReplayBuffer]
    model: PolicyModel

    @property
    def step(self) -> int:
        return len(self.reports) - 1


StepHook = Callable[[int, PolicyModel, List[StepReport], List[ReplayBuffer]], None]


def run_protocol(
    schedule: Schedule,
    method: str,
    config: RunConfig,
    demos: Optional[DemoSet] = None,
    resume: Optional[ResumePoint] = None,
    on_step: Optional[StepHook] = None,
) -> RunResult:
    """Base phase then every incremental step of ``schedule`` under one method.

    With ``resume`` the completed steps are taken as given and training continues at the next one.
    ``on_step`` is called after every completed step.
    """
    try:
        plan = method_plan(method, schedule)
        for skill in schedule.learned_through(len(schedule.steps)):
            world_controller.get_plugin(skill)
        demos = demos if demos is not None else generate_data(schedule, config)

        if resume is None:
            model, report = run_base(schedule, config, demos)
            reports = [report]
            memory = ReplayBuffer(quota=plan.replay_k)
            if plan.replay_k > 0:
                memory = build_memory(
                    {skill: demos[skill] for skill in schedule.base_skills},
                    model,
                    plan.replay_k,
                    plan.strategy,
                    make_rng(schedule.seed, "memory", 0),
                    buffer=memory,
                    entropy_mode=config.entropy_mode,
                )
            memories = [copy_buffer(memory)]
            if on_step is not None:
                on_step(0, model, reports, memories)
        else:
            if not resume.reports or resume.step > len(schedule.steps) or len(resume.memories) != len(resume.reports):
                raise ContractError(
                    f"cannot resume {schedule.notation} from {len(resume.reports)} reports "
                    f"and {len(resume.memories)} memories"
                )
            logger.info(f"Resuming {method} {schedule.notation} seed {schedule.seed} after step {resume.step}")
            model, reports = resume.model, list(resume.reports)
            memories = [copy_buffer(m) for m in resume.memories]
            memory = copy_buffer(memories[-1])

        for step, skills in enumerate(schedule.steps, start=1):
            if step < len(reports):
                continue
            snapshot = model.clone()
            model, report, memory = run_increment(
                model, snapshot, memory, skills, schedule, config, demos, plan, step
            )
            reports.append(report)
            memories.append(copy_buffer(memory))
            if on_step is not None:
                on_step(step, model, reports, memories)
        return RunResult(method, schedule, reports, model, memories, demos)
    except Exception as e:
        logger.error(f"Error in run_protocol ({method}, {schedule.notation}): {str(e)}")
        raise
