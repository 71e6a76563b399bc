import pytest
from pydantic import ValidationError

from imanip.api.config import build_run_config, config_to_text, parse_config_text, read_config_file
from imanip.api.schedule import parse_schedule, schedule_from_config
from imanip.core.errors import ConfigError, ScheduleParseError
from imanip.model.schemas import RunConfig, Schedule


class TestParseSchedule:
    def test_five_plus_five(self):
        schedule = parse_schedule("B5-5N1")
        assert schedule.base_skills == ["slide_block", "press_button", "pick_place", "open_drawer", "stack_two"]
        assert schedule.steps == [["sweep_to_zone"], ["lift_block"], ["close_drawer"], ["press_two"], ["place_two"]]

    def test_two_plus_three(self):
        schedule = parse_schedule("B2-3N1")
        assert schedule.base_skills == ["slide_block", "press_button"]
        assert schedule.steps == [["pick_place"], ["open_drawer"], ["stack_two"]]
        assert schedule.learned_through(0) == ["slide_block", "press_button"]
        assert schedule.learned_through(2) == ["slide_block", "press_button", "pick_place", "open_drawer"]

    @pytest.mark.parametrize("text", ["B2-3N1", "B5-5N1", "B1-0N0", "B2-2N2", "B4-3N2"])
    def test_notation_round_trip(self, text):
        assert parse_schedule(text).notation == text

    def test_custom_catalog(self):
        schedule = parse_schedule("B1-2N1", skills=["a", "b", "c"])
        assert schedule.base_skills == ["a"] and schedule.steps == [["b"], ["c"]]

    @pytest.mark.parametrize("text", ["B9-9N9", "B2-3", "2-3N1", "B0-1N1", "B2-1N0", "b2-3n1", ""])
    def test_invalid_notation(self, text):
        with pytest.raises(ScheduleParseError):
            parse_schedule(text)

    def test_parse_errors_are_config_errors(self):
        with pytest.raises(ConfigError):
            parse_schedule("B11-0N0")

    def test_invalid_settings(self):
        with pytest.raises(ScheduleParseError):
            parse_schedule("B2-1N1", batch_size=0)

    def test_skill_lists_must_be_disjoint(self):
        with pytest.raises(ValidationError):
            Schedule(base_skills=["slide_block"], steps=[["slide_block"]])

    def test_from_run_config(self):
        config = RunConfig(schedule="B2-1N1", replay_k=3, strategy="herding", iterations_step=7)
        schedule = schedule_from_config(config, seed=4)
        assert schedule.seed == 4
        assert schedule.replay_k == 3 and schedule.strategy == "herding"
        assert schedule.iterations_step == 7


class TestConfigFiles:
    def test_parse_text(self):
        values = parse_config_text("# comment\nschedule = B2-1N1\n\nreplay_k = 3  # inline\nseeds=0,1\n")
        assert values == {"schedule": "B2-1N1", "replay_k": "3", "seeds": "0,1"}

    @pytest.mark.parametrize(
        "text",
        ["no_equals_sign", "= 3", "unknown_key = 1", "replay_k = 1\nreplay_k = 2"],
    )
    def test_parse_errors(self, text):
        with pytest.raises(ConfigError):
            parse_config_text(text)

    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("schedule = B2-1N1\nreplay_k = 3\nseeds = 0,1,2\nbase_gate = none\n", encoding="utf-8")
        config = build_run_config(str(path), {"replay_k": "5", "method": None})
        assert config.schedule == "B2-1N1"
        assert config.replay_k == 5
        assert config.method == "imanip"
        assert config.seeds == [0, 1, 2]
        assert config.base_gate is None

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_config_file(str(tmp_path / "absent.cfg"))

    @pytest.mark.parametrize(
        "overrides",
        [{"method": "magic"}, {"lambda_dis": "-1"}, {"replay_ratio": "1.5"}, {"grid_size": "4"}, {"bogus": "1"}],
    )
    def test_invalid_values(self, overrides):
        with pytest.raises(ConfigError):
            build_run_config(None, overrides)

    def test_text_round_trip(self):
        config = RunConfig(schedule="B2-3N1", seeds=[0, 1, 2], replay_ratio=0.25, record_timing=True)
        assert build_run_config(None, parse_config_text(config_to_text(config))) == config
