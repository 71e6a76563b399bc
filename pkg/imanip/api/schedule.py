import logging
import re
from typing import Optional, Sequence

from pydantic import ValidationError

from ..controller.world_controller import skill_names
from ..core.errors import ScheduleParseError
from ..model.schemas import RunConfig, Schedule

logger = logging.getLogger(__name__)

NOTATION = re.compile(r"^B(\d+)-(\d+)N(\d+)$")


def parse_schedule(text: str, skills: Optional[Sequence[str]] = None, **settings) -> Schedule:
    """Bn-kNm: n base skills, then k steps of m skills, assigned in catalog order."""
    skills = list(skills) if skills is not None else skill_names()
    match = NOTATION.match(text.strip())
    if not match:
        raise ScheduleParseError(f"schedule '{text}' does not match B<n>-<k>N<m>")
    n, k, m = (int(g) for g in match.groups())
    if n < 1:
        raise ScheduleParseError(f"schedule '{text}' needs at least one base skill")
    if k > 0 and m < 1:
        raise ScheduleParseError(f"schedule '{text}' has incremental steps without skills")
    needed = n + k * m
    if needed > len(skills):
        raise ScheduleParseError(f"schedule '{text}' needs {needed} skills, catalog has {len(skills)}")
    steps = [skills[n + i * m : n + (i + 1) * m] for i in range(k)]
    try:
        return Schedule(base_skills=skills[:n], steps=steps, **settings)
    except ValidationError as e:
        logger.error(f"Invalid schedule settings for {text}: {str(e)}")
        raise ScheduleParseError(str(e)) from e


def schedule_from_config(config: RunConfig, seed: int) -> Schedule:
    return parse_schedule(
        config.schedule,
        iterations_base=config.iterations_base,
        iterations_step=config.iterations_step,
        batch_size=config.batch_size,
        lr=config.lr,
        lambda_dis=config.lambda_dis,
        replay_k=config.replay_k,
        strategy=config.strategy,
        freeze=config.freeze,
        seed=seed,
    )
