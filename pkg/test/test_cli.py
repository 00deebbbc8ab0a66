import json
import textwrap

import pytest

from mvperiodic.cli import (
    ACCEPTANCE_SUITE, EXIT_CODES, code_version, config_from_mapping, main, parse_config, run,
)
from mvperiodic.errors import ParseError, ValidationError

MINIMAL = textwrap.dedent("""\
    [scenario]
    name = "mv_ou_periodic"

    [grid]
    dt = 0.01
    periods = 1

    [experiment]
    name = "pathwise_periodicity"
    seed = 42
    N = 8
    """)


def _write(tmp_path, text, name='run.toml'):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestParse:

    def test_minimal(self, tmp_path):
        cfg = parse_config(_write(tmp_path, MINIMAL))
        assert cfg.scenario == 'mv_ou_periodic'
        assert cfg.experiment == 'pathwise_periodicity'
        assert cfg.seed == 42
        assert cfg.config.N == 8
        assert cfg.csv and cfg.json and not cfg.svg

    def test_misaligned_dt(self, tmp_path):
        text = MINIMAL.replace('dt = 0.01', 'dt = 0.003')
        with pytest.raises(ValidationError, match='grid not period-aligned'):
            parse_config(_write(tmp_path, text))

    def test_unknown_key(self, tmp_path):
        text = MINIMAL.replace('N = 8', 'N = 8\nfoo = 1')
        with pytest.raises(ParseError) as info:
            parse_config(_write(tmp_path, text))
        assert info.value.line == 12
        assert 'foo' in str(info.value)

    def test_unknown_scenario_parameter(self, tmp_path):
        text = MINIMAL.replace('name = "mv_ou_periodic"', 'name = "mv_ou_periodic"\nkappa = 0.1')
        with pytest.raises(ParseError) as info:
            parse_config(_write(tmp_path, text))
        assert info.value.line == 3

    def test_unknown_section(self, tmp_path):
        with pytest.raises(ParseError) as info:
            parse_config(_write(tmp_path, MINIMAL + '\n[plots]\nsize = 3\n'))
        assert info.value.line == 13

    def test_missing_seed(self, tmp_path):
        with pytest.raises(ValidationError, match='seed'):
            parse_config(_write(tmp_path, MINIMAL.replace('seed = 42\n', '')))

    def test_float_seed(self, tmp_path):
        with pytest.raises(ValidationError):
            parse_config(_write(tmp_path, MINIMAL.replace('seed = 42', 'seed = 4.2')))

    def test_syntax_error(self, tmp_path):
        with pytest.raises(ParseError) as info:
            parse_config(_write(tmp_path, MINIMAL.replace('periods = 1', 'periods = = 1')))
        assert info.value.line == 6

    def test_bad_value(self, tmp_path):
        with pytest.raises(ValidationError):
            parse_config(_write(tmp_path, MINIMAL.replace('N = 8', 'N = 0')))

    def test_acceptance_suite_validates(self):
        for label, data in ACCEPTANCE_SUITE.items():
            cfg = config_from_mapping(data, source=label)
            assert cfg.experiment == data['experiment']['name']


class TestRun:

    def test_pathwise(self, tmp_path):
        cfg = parse_config(_write(tmp_path, MINIMAL))
        out = tmp_path / 'out'
        assert run(cfg, str(out)) == EXIT_CODES['PASS']
        report = json.loads((out / 'report.json').read_text())
        assert report['verdict'] == 'PASS'
        assert report['seeds']['seed'] == 42
        manifest = json.loads((out / 'manifest.json').read_text())
        assert manifest['code_version'] == code_version()
        assert manifest['config']['experiment']['seed'] == 42
        header = (out / 'pathwise_periodicity_discrepancy.csv').read_text().splitlines()[0]
        assert header == 't,max_discrepancy,max_abs_state'

    def test_rerun_from_manifest(self, tmp_path):
        first, second = tmp_path / 'first', tmp_path / 'second'
        run(parse_config(_write(tmp_path, MINIMAL)), str(first))
        run(parse_config(str(first / 'manifest.json')), str(second))
        a = json.loads((first / 'report.json').read_text())
        b = json.loads((second / 'report.json').read_text())
        a.pop('runtime_s')
        b.pop('runtime_s')
        assert a == b
        assert (first / 'pathwise_periodicity_discrepancy.csv').read_bytes() == \
            (second / 'pathwise_periodicity_discrepancy.csv').read_bytes()

    def test_not_contractive_is_an_error(self, tmp_path):
        text = MINIMAL.replace('name = "mv_ou_periodic"', 'name = "mv_ou_periodic"\na = 0.2\nb = 0.5')
        text = text.replace('pathwise_periodicity', 'pullback')
        out = tmp_path / 'out'
        assert run(parse_config(_write(tmp_path, text)), str(out)) == 3
        error = json.loads((out / 'error.json').read_text())
        assert error['error'] == 'NotContractive'
        assert not (out / 'report.json').exists()

    def test_svg_and_snapshots(self, tmp_path):
        text = MINIMAL.replace('pathwise_periodicity', 'oracle_mean') + textwrap.dedent("""
            [output]
            svg = true
            snapshots = true
            """)
        out = tmp_path / 'out'
        code = run(parse_config(_write(tmp_path, text)), str(out))
        assert code in (0, 1)
        assert (out / 'oracle_mean_oracle_mean.svg').exists()
        lines = (out / 'snapshots.csv').read_text().splitlines()
        assert lines[0] == 'run_id,t,particle,component,value'
        assert len(lines) == 1 + 2 * 8
        summary = json.loads((out / 'snapshots.json').read_text())
        assert summary['run_id'] == 'mv_ou_periodic-42'

    def test_worker_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv('MVP_WORKERS', '3')
        cfg = parse_config(_write(tmp_path, MINIMAL))
        out = tmp_path / 'out'
        assert run(cfg, str(out)) == 0
        manifest = json.loads((out / 'manifest.json').read_text())
        assert manifest['config']['output']['workers'] == 1


class TestMain:

    def test_list_scenarios(self, capsys):
        assert main(['list-scenarios']) == 0
        names = [line.split('(')[0] for line in capsys.readouterr().out.splitlines()]
        assert names == ['double_well_partial', 'mv_ou_periodic', 'piecewise_k1', 'truncated_ou']

    def test_run(self, tmp_path):
        path = _write(tmp_path, MINIMAL)
        assert main(['run', path, '--output', str(tmp_path / 'out')]) == 0

    def test_parse_failure(self, tmp_path):
        path = _write(tmp_path, MINIMAL.replace('N = 8', 'N = 8\nfoo = 1'))
        out = tmp_path / 'out'
        assert main(['run', path, '--output', str(out)]) == 3
        assert json.loads((out / 'error.json').read_text())['error'] == 'ParseError'

    def test_version(self, capsys):
        with pytest.raises(SystemExit):
            main(['--version'])
        assert capsys.readouterr().out.startswith('mvperiodic ')

    def test_code_version(self):
        digest = code_version()
        assert len(digest) == 64
        int(digest, 16)
