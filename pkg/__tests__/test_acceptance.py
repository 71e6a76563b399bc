"""End-to-end behaviour at the default scale. Run with ``pytest -m slow``."""
import numpy as np
import pytest

from imanip.api.schedule import schedule_from_config
from imanip.controller import trainer_controller as tc
from imanip.controller import world_controller
from imanip.model.batch import stack_samples
from imanip.model.policy import PolicyConfig, PolicyModel
from imanip.model.schemas import KeyframeAction, RunConfig

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2)


class RandomPolicy:
    def __init__(self, seed: int, grid_size: int = 8, rot_bins: int = 12):
        self.rng = np.random.default_rng(seed)
        self.grid_size = grid_size
        self.rot_bins = rot_bins
        self.max_tokens = 12

    def act(self, episodes, batch):
        return [
            KeyframeAction(
                trans=int(self.rng.integers(self.grid_size ** 3)),
                rot=tuple(int(r) for r in self.rng.integers(self.rot_bins, size=3)),
                open=int(self.rng.integers(2)),
                collide=int(self.rng.integers(2)),
            )
            for _ in episodes
        ]


@pytest.fixture(scope="module")
def protocol_runs():
    cache = {}

    def run(notation, method, seed, **updates):
        key = (notation, method, seed, tuple(sorted(updates.items())))
        if key not in cache:
            config = RunConfig(schedule=notation, method=method, **updates)
            cache[key] = tc.run_protocol(schedule_from_config(config, seed), method, config)
        return cache[key]

    return run


def test_random_actions_rarely_succeed():
    rates = tc.evaluate(RandomPolicy(0), world_controller.skill_names(), episodes_per_skill=200, seed=0)
    assert all(rate < 0.10 for rate in rates.values()), rates


def test_untrained_model_rarely_succeeds():
    model = PolicyModel.build(PolicyConfig())
    rates = tc.evaluate(model, world_controller.skill_names(), episodes_per_skill=25, seed=0)
    assert all(rate < 0.10 for rate in rates.values()), rates


def test_forgetting_and_its_mitigation(protocol_runs):
    runs = {m: [protocol_runs("B2-3N1", m, s) for s in SEEDS] for m in ("imanip", "finetune", "tib")}

    def mean_over_seeds(method, pick):
        return float(np.mean([pick(r.reports) for r in runs[method]]))

    base_all = mean_over_seeds("imanip", lambda reports: reports[0].all)
    assert base_all >= 0.80

    finetune_base = mean_over_seeds("finetune", lambda reports: reports[0].all)
    finetune_old = mean_over_seeds("finetune", lambda reports: reports[1].old)
    assert finetune_base - finetune_old >= 0.40

    for step in range(1, 4):
        old = mean_over_seeds("imanip", lambda reports: reports[step].old)
        assert base_all - old <= 0.15, (step, old)

    def avg_all(method):
        return mean_over_seeds(method, lambda reports: np.mean([r.all for r in reports]))

    assert avg_all("imanip") - avg_all("finetune") >= 0.20
    assert avg_all("imanip") - avg_all("tib") >= 0.05


def test_farthest_entropy_beats_herding_and_hard_samples(protocol_runs):
    def old_success(strategy):
        return float(np.mean([protocol_runs("B2-1N1", "imanip", s, strategy=strategy).reports[1].old for s in SEEDS]))

    farthest = old_success("farthest-entropy")
    assert farthest > old_success("herding")
    assert farthest > old_success("hard-sample")


def test_new_prompt_carries_new_skill_attribution(protocol_runs):
    result = protocol_runs("B2-1N1", "imanip", 0, strategy="farthest-entropy")
    step = result.reports[1]
    new_index = result.model.prompts.index("pick_place")
    new_weight = step.prompt_attribution["pick_place"][new_index]
    for skill in result.schedule.base_skills:
        assert new_weight > step.prompt_attribution[skill][new_index]


def test_single_skill_is_learnable_at_default_scale():
    config = RunConfig(schedule="B1-0N0")
    schedule = schedule_from_config(config, 0)
    assert schedule.base_skills == ["slide_block"]
    demos = tc.generate_data(schedule, config)
    model, report = tc.run_base(schedule, config, demos)
    samples = tc.samples_of(demos, ["slide_block"])
    observations, actions = stack_samples(samples, model.config.max_tokens)
    predicted = np.argmax(model.forward(observations).trans.data, axis=1)
    assert np.mean(predicted == actions.trans) >= 0.90
    assert report.per_skill["slide_block"] >= 0.80


def test_zero_iteration_run_scores_like_random(protocol_runs):
    result = protocol_runs("B2-1N1", "imanip", 0, iterations_base=0, iterations_step=0, base_gate=None)
    skills = result.schedule.learned_through(1)
    random_rates = tc.evaluate(RandomPolicy(0), skills, episodes_per_skill=25, seed=0)
    for report in result.reports:
        assert report.all < 0.10
    assert abs(result.reports[-1].all - float(np.mean(list(random_rates.values())))) < 0.10
