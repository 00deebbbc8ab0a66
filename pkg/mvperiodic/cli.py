"""
Command line front end.

``mvperiodic run <config>`` reads a TOML run description::

    [scenario]
    name = "mv_ou_periodic"
    A = 1.0                 # any parameter of the scenario factory

    [grid]
    dt = 0.001
    periods = 30
    t0 = 0.0

    [experiment]
    name = "pullback"
    seed = 42
    N = 1024                # any field of ExperimentConfig

    [output]
    dir = "out"
    csv = true
    json = true
    svg = false
    snapshots = false
    workers = 1

and writes ``report.json``, the series CSVs, optional SVG charts and a
``manifest.json`` that :func:`parse_config` accepts in place of the TOML
file to reproduce the run.  The exit code is 0, 1 or 2 for a ``PASS``,
``FAIL`` or ``INCONCLUSIVE`` verdict and 3 when the run raised.
"""
import argparse
import dataclasses
import hashlib
import json
import logging
import os
import re
import sys
import tomllib
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from . import printer
from ._utils.pool import worker_count
from ._version import __version__
from .errors import DivergenceDetected, MvPeriodicError, ParseError, ValidationError
from .experiments import (
    EXPERIMENTS, FAIL, INCONCLUSIVE, PASS, ExperimentConfig, make_grid, run_experiment,
)
from .ips import Ensemble, drivers_for, simulate
from .models import SCENARIOS, build_scenario, scenario_parameters
from .noise import NoiseBundle

__all__ = [
    'RunConfig',
    'EXIT_CODES',
    'ACCEPTANCE_SUITE',
    'parse_config',
    'config_from_mapping',
    'code_version',
    'run',
    'verify_all',
    'main',
]

log = logging.getLogger(__name__)

EXIT_CODES = {PASS: 0, FAIL: 1, INCONCLUSIVE: 2}
EXIT_ERROR = 3

_SECTIONS = ('scenario', 'grid', 'experiment', 'output')
_GRID_KEYS = ('dt', 'periods', 't0')
_OUTPUT_DEFAULTS = dict(dir='.', csv=True, json=True, svg=False, snapshots=False, workers=1)
# ExperimentConfig fields that live in other sections
_NOT_EXPERIMENT = set(_GRID_KEYS) | {'workers'}


@dataclass
class RunConfig:
    scenario: str
    scenario_params: Dict[str, object]
    experiment: str
    config: ExperimentConfig
    output_dir: str = '.'
    csv: bool = True
    json: bool = True
    svg: bool = False
    snapshots: bool = False
    workers: int = 1
    source: Optional[str] = field(default=None, compare=False)

    @property
    def seed(self) -> int:
        return self.config.seed

    def normalized(self) -> dict:
        """ The mapping written to ``manifest.json`` """
        experiment = self.config.to_dict()
        grid = {k: experiment.pop(k) for k in _GRID_KEYS}
        experiment['name'] = self.experiment
        return dict(
            scenario=dict(name=self.scenario, **self.scenario_params),
            grid=grid,
            experiment=experiment,
            output=dict(dir=self.output_dir, csv=self.csv, json=self.json, svg=self.svg,
                        snapshots=self.snapshots, workers=self.workers),
        )


def _key_line(text, section, key) -> Optional[int]:
    """ 1-based line of ``key = ...`` inside ``[section]``, if it can be found """
    if text is None:
        return None
    current = None
    key_re = re.compile(r'^\s*["\']?{}["\']?\s*='.format(re.escape(key)))
    for lineno, line in enumerate(text.splitlines(), start=1):
        header = re.match(r'^\s*\[\s*([^\]]+?)\s*\]', line)
        if header:
            current = header.group(1)
            if section is None and current == key:
                return lineno
            continue
        if current == section and key_re.match(line):
            return lineno
    return None


def _unknown(text, section, keys, allowed):
    for key in keys:
        if key not in allowed:
            raise ParseError('unknown key {!r} in [{}]'.format(key, section), _key_line(text, section, key))


def config_from_mapping(data: dict, text: Optional[str] = None, source=None) -> RunConfig:
    """
    Validate a parsed run description.

    ``text`` is the raw file contents, used only to locate offending keys.
    """
    if not isinstance(data, dict):
        raise ParseError('a run description must be a table')
    for section in data:
        if section not in _SECTIONS:
            raise ParseError('unknown section [{}]'.format(section), _key_line(text, None, section))
    scenario_sec = dict(data.get('scenario', {}))
    grid_sec = dict(data.get('grid', {}))
    experiment_sec = dict(data.get('experiment', {}))
    output_sec = dict(data.get('output', {}))

    if 'name' not in scenario_sec:
        raise ValidationError('[scenario] needs a name')
    scenario_name = scenario_sec.pop('name')
    if scenario_name not in SCENARIOS:
        raise ParseError('unknown scenario {!r}; expected one of {}'.format(scenario_name, sorted(SCENARIOS)),
                         _key_line(text, 'scenario', 'name'))
    _unknown(text, 'scenario', scenario_sec, scenario_parameters(scenario_name))
    _unknown(text, 'grid', grid_sec, _GRID_KEYS)
    _unknown(text, 'output', output_sec, _OUTPUT_DEFAULTS)

    if 'name' not in experiment_sec:
        raise ValidationError('[experiment] needs a name')
    experiment = experiment_sec.pop('name')
    if experiment not in EXPERIMENTS:
        raise ParseError('unknown experiment {!r}; expected one of {}'.format(experiment, sorted(EXPERIMENTS)),
                         _key_line(text, 'experiment', 'name'))
    fields = {f.name for f in dataclasses.fields(ExperimentConfig)} - _NOT_EXPERIMENT
    _unknown(text, 'experiment', experiment_sec, fields)
    if 'seed' not in experiment_sec:
        raise ValidationError('[experiment] needs an explicit seed')
    if not isinstance(experiment_sec['seed'], int) or isinstance(experiment_sec['seed'], bool):
        raise ValidationError('seed must be an integer, got {!r}'.format(experiment_sec['seed']))

    output = dict(_OUTPUT_DEFAULTS, **output_sec)
    try:
        scenario = build_scenario(scenario_name, **scenario_sec)
        config = ExperimentConfig(workers=int(output['workers']), **grid_sec, **experiment_sec)
        grid = make_grid(scenario, config)
    except ValidationError:
        raise
    except (TypeError, ValueError) as e:
        raise ValidationError(str(e)) from None
    if grid.n_steps < 1:
        raise ValidationError('the grid has no steps: periods = {!r}'.format(config.periods))

    return RunConfig(
        scenario=scenario_name, scenario_params=scenario_sec, experiment=experiment, config=config,
        output_dir=str(output['dir']), csv=bool(output['csv']), json=bool(output['json']),
        svg=bool(output['svg']), snapshots=bool(output['snapshots']), workers=int(output['workers']),
        source=source,
    )


def _decode_line(message) -> Optional[int]:
    m = re.search(r'line (\d+)', message)
    return int(m.group(1)) if m else None


def parse_config(path) -> RunConfig:
    """
    Read a TOML run description, or the ``manifest.json`` of an earlier run.

    Raises
    ------
    ParseError
        on a syntax error or an unknown section or key, with its line
    ValidationError
        when a value breaks an invariant, e.g. a misaligned ``dt``
    """
    with open(path, 'rb') as f:
        raw = f.read()
    text = raw.decode('utf-8')
    if str(path).endswith('.json'):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(e.msg, e.lineno) from None
        data = data.get('config', data)
        return config_from_mapping(data, None, source=str(path))
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ParseError(str(e), _decode_line(str(e))) from None
    return config_from_mapping(data, text, source=str(path))


def code_version() -> str:
    """ sha256 over the sources of this package, in path order """
    root = os.path.dirname(os.path.abspath(__file__))
    digest = hashlib.sha256()
    paths = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames[:] = sorted(d for d in dirnames if d != '__pycache__')
        paths.extend(os.path.join(dirpath, name) for name in filenames if name.endswith('.py'))
    for path in sorted(paths):
        digest.update(os.path.relpath(path, root).replace(os.sep, '/').encode())
        with open(path, 'rb') as f:
            digest.update(f.read())
    return digest.hexdigest()


def _write_snapshots(cfg: RunConfig, scenario, outdir):
    config = cfg.config
    grid = make_grid(scenario, config)
    noise = NoiseBundle(config.seed, scenario.dim, grid.dt, config.N, drivers_for(scenario), workers=cfg.workers)
    x0 = config.init.sample(config.N, scenario.dim, key=config.seed)
    steps = list(range(0, grid.n_steps + 1, grid.period_steps))
    ensembles = simulate(scenario, grid, Ensemble(x0, grid.start_index), noise, snapshot_steps=steps,
                         guard=config.guard, workers=cfg.workers)
    run_id = '{}-{}'.format(cfg.scenario, config.seed)
    printer.write_snapshots_csv(os.path.join(outdir, 'snapshots.csv'), run_id, ensembles, grid.dt)
    printer.write_json(os.path.join(outdir, 'snapshots.json'),
                       dict(run_id=run_id, snapshots=printer.snapshot_summary(ensembles, grid.dt)))


def _write_error(outdir, exc):
    try:
        os.makedirs(outdir, exist_ok=True)
        printer.write_json(os.path.join(outdir, 'error.json'),
                           dict(error=type(exc).__name__, message=str(exc)))
    except OSError:
        log.exception('could not write error.json to %s', outdir)


def run(cfg: RunConfig, output_dir=None) -> int:
    """ Execute one run and write its artifacts; returns the exit code """
    outdir = output_dir or cfg.output_dir
    workers = worker_count(cfg.workers)
    if workers != cfg.config.workers:
        cfg = dataclasses.replace(cfg, config=dataclasses.replace(cfg.config, workers=workers))
    try:
        os.makedirs(outdir, exist_ok=True)
        scenario = build_scenario(cfg.scenario, **cfg.scenario_params)
        log.info('running %s on %s (seed %d, %d worker(s))', cfg.experiment, cfg.scenario, cfg.seed, workers)
        report = run_experiment(cfg.experiment, scenario, cfg.config).to_dict()
        if cfg.json:
            printer.write_json(os.path.join(outdir, 'report.json'), report)
        if cfg.csv:
            printer.write_series_csv(outdir, report)
        if cfg.svg:
            printer.write_series_svg(outdir, report)
        if cfg.snapshots:
            _write_snapshots(cfg, scenario, outdir)
        printer.write_json(os.path.join(outdir, 'manifest.json'), dict(
            config=cfg.normalized(), seeds=report['seeds'], code_version=code_version(), version=__version__))
    except (MvPeriodicError, DivergenceDetected, OSError) as e:
        log.error('%s failed: %s: %s', cfg.experiment, type(e).__name__, e)
        _write_error(outdir, e)
        return EXIT_ERROR
    return EXIT_CODES[report['verdict']]


def _suite_entry(scenario, experiment, seed, grid=None, output=None, params=None, **fields):
    return {
        'scenario': dict(name=scenario, **(params or {})),
        'grid': dict(grid or {}),
        'experiment': dict(name=experiment, seed=seed, **fields),
        'output': dict(output or {}),
    }


#: run descriptions of the acceptance criteria, keyed by output subdirectory
ACCEPTANCE_SUITE: Dict[str, dict] = {
    **{
        'pathwise_{}'.format(name): _suite_entry(name, 'pathwise_periodicity', 1, grid=dict(periods=5), N=256)
        for name in ('mv_ou_periodic', 'piecewise_k1', 'double_well_partial', 'truncated_ou')
    },
    'oracle_mean': _suite_entry('mv_ou_periodic', 'oracle_mean', 2, grid=dict(dt=1e-3, periods=30), N=4096),
    'contraction_mv_ou': _suite_entry(
        'mv_ou_periodic', 'contraction', 3, grid=dict(dt=1e-3, periods=10), N=256,
        init_a=dict(kind='point', loc=1.0), init_b=dict(kind='point', loc=-1.0)),
    'pullback_piecewise_k1': _suite_entry('piecewise_k1', 'pullback', 4, N=256),
    'pullback_mv_ou': _suite_entry('mv_ou_periodic', 'pullback', 5, N=256),
    'poc_mv_ou': _suite_entry('mv_ou_periodic', 'poc', 6, N_list=[8, 32, 128, 512]),
    'contraction_double_well': _suite_entry(
        'double_well_partial', 'contraction', 7, grid=dict(periods=3), N=512, eps=0.4, samples_per_period=20,
        init_a=dict(kind='normal', loc=2.0, scale=0.1, seed=1),
        init_b=dict(kind='normal', loc=-2.0, scale=0.1, seed=2)),
    'law_periodicity': _suite_entry('mv_ou_periodic', 'law_periodicity', 8, R=2000),
    'poc_double_well': _suite_entry('double_well_partial', 'poc', 9, grid=dict(periods=10),
                                    N_list=[16, 64, 256], M_ref=1024),
}


def verify_all(outdir, workers=None) -> int:
    """ Run :data:`ACCEPTANCE_SUITE` into ``outdir``; returns the worst exit code """
    os.makedirs(outdir, exist_ok=True)
    codes = {}
    for label, data in ACCEPTANCE_SUITE.items():
        data = dict(data, output=dict(data['output'], dir=os.path.join(outdir, label)))
        if workers is not None:
            data['output']['workers'] = workers
        codes[label] = run(config_from_mapping(data, source=label))
        log.info('%s: exit %d', label, codes[label])
    printer.write_json(os.path.join(outdir, 'summary.json'), codes)
    return max(codes.values())


def _list_scenarios(out=None):
    out = out or sys.stdout
    for name in sorted(SCENARIOS):
        params = ', '.join('{}={!r}'.format(k, v) for k, v in scenario_parameters(name).items())
        print('{}({})'.format(name, params), file=out)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='mvperiodic', description=__doc__.splitlines()[1])
    parser.add_argument('--version', action='version', version='%(prog)s ' + __version__)
    parser.add_argument('-v', '--verbose', action='store_true', help='log at DEBUG level')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('run', help='run one experiment from a TOML or manifest.json file')
    p.add_argument('config')
    p.add_argument('--workers', type=int, default=None)
    p.add_argument('--output', default=None, help='override [output] dir')

    sub.add_parser('list-scenarios', help='print the built-in scenarios and their parameters')

    p = sub.add_parser('verify-all', help='run the acceptance suite')
    p.add_argument('dir')
    p.add_argument('--workers', type=int, default=None)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(name)s %(levelname)s: %(message)s')
    if args.command == 'list-scenarios':
        _list_scenarios()
        return 0
    if args.command == 'verify-all':
        return verify_all(args.dir, args.workers)
    try:
        cfg = parse_config(args.config)
    except (ParseError, ValidationError, OSError) as e:
        log.error('%s: %s', args.config, e)
        _write_error(args.output or '.', e)
        return EXIT_ERROR
    if args.workers is not None:
        cfg = dataclasses.replace(cfg, workers=args.workers)
    return run(cfg, output_dir=args.output)


if __name__ == '__main__':
    sys.exit(main())
