import pytest
from click.testing import CliRunner

from milepost.cli import main
from milepost.errors import ScriptParseError
from milepost.persona import PersonaScript, load_script, run_persona


class TestScripts:
    def test_golden_trace_passes(self, fixtures, persona_dir):
        report = run_persona(load_script(persona_dir / "bakery_ideation.yaml"), fixtures)
        failures = [r for r in report.results if not r.passed]
        assert report.ok, failures

    @pytest.mark.parametrize(
        "name", ["catering_pivot", "permit_loop", "on_topic_control", "vague_opening"]
    )
    def test_companion_scripts_pass(self, fixtures, persona_dir, name):
        report = run_persona(load_script(persona_dir / f"{name}.yaml"), fixtures)
        assert report.ok, [r for r in report.results if not r.passed]

    def test_wrong_expectation_reports_expected_vs_actual(self, fixtures, persona_dir, tmp_path):
        script = (persona_dir / "bakery_ideation.yaml").read_text(encoding="utf-8")
        script = script.replace("state: s2", "state: s4", 1)
        target = tmp_path / "wrong.yaml"
        target.write_text(script, encoding="utf-8")
        report = run_persona(load_script(target), fixtures)
        assert not report.ok
        failing = [r for r in report.results if not r.passed]
        assert failing[0].expected == "s4"
        assert failing[0].actual == "s2"
        assert any("FAIL" in line for line in report.lines())

    def test_script_requires_turns(self, fixtures, profile):
        with pytest.raises(ScriptParseError):
            PersonaScript(name="empty", profile=profile, turns=())

    def test_malformed_script_file(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("name: x\nturns: []\n", encoding="utf-8")
        with pytest.raises(ScriptParseError):
            load_script(bad)


class TestCli:
    def test_replay_ok_exit_zero(self, persona_dir):
        runner = CliRunner()
        result = runner.invoke(
            main, ["replay", "--script", str(persona_dir / "bakery_ideation.yaml")]
        )
        assert result.exit_code == 0, result.output
        assert "bakery-ideation: OK" in result.output

    def test_replay_failure_exit_nonzero(self, persona_dir, tmp_path):
        script = (persona_dir / "bakery_ideation.yaml").read_text(encoding="utf-8")
        script = script.replace("state: s2", "state: s4", 1)
        target = tmp_path / "wrong.yaml"
        target.write_text(script, encoding="utf-8")
        runner = CliRunner()
        result = runner.invoke(main, ["replay", "--script", str(target)])
        assert result.exit_code == 1
        assert "FAIL" in result.output

    def test_validate_fixtures(self):
        runner = CliRunner()
        result = runner.invoke(main, ["validate-fixtures"])
        assert result.exit_code == 0, result.output
        assert result.output.startswith("ok:")

    def test_validate_fixtures_bad_file(self, tmp_path):
        bad = tmp_path / "kb.jsonl"
        bad.write_text("garbage\n", encoding="utf-8")
        runner = CliRunner()
        result = runner.invoke(main, ["validate-fixtures", "--kb", str(bad)])
        assert result.exit_code != 0
        assert "kb.jsonl:1" in result.output

    def test_env_overrides_config(self, monkeypatch):
        from milepost.cli import config_from_env

        monkeypatch.setenv("MILEPOST_TAU", "0.9")
        monkeypatch.setenv("MILEPOST_W_PROGRESS", "0.5")
        monkeypatch.setenv("MILEPOST_W_RELEVANCE", "0.3")
        monkeypatch.setenv("MILEPOST_W_EXTERNAL", "0.2")
        config = config_from_env()
        assert config.tau == 0.9
        assert config.w_progress == 0.5
