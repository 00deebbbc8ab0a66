r"""
Output formats for reports, particle snapshots and charts.

CSV
---

Series files have a header row, ``,`` as separator and ``.`` as decimal
mark regardless of locale; floats are written with 17 significant digits so
reloading them is bit-faithful.  Particle snapshots use the fixed columns
``run_id, t, particle, component, value``.

JSON
----

Reports and manifests are written with sorted keys and shortest round-trip
float representation, so identical runs give identical bytes apart from the
``runtime_s`` field.

SVG
---

:func:`write_svg` draws a series with :mod:`matplotlib` using the SVG canvas
(``FigureCanvasSVG``), a fixed hash salt and no date metadata.  Charts are
conveniences; no verdict ever reads them.
"""
import csv
import json
import os
from typing import Iterable, List, Sequence

import numpy as np
import matplotlib
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

from .models import compute_stats

__all__ = [
    'format_value',
    'write_csv',
    'write_series_csv',
    'snapshot_rows',
    'write_snapshots_csv',
    'snapshot_summary',
    'dumps_json',
    'write_json',
    'write_svg',
    'write_series_svg',
]


def format_value(value) -> str:
    """ A CSV cell; floats keep 17 significant digits """
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return '%.17g' % value
    if value is None:
        return ''
    return str(value)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    return path


def _series_path(outdir, report, series, ext):
    return os.path.join(outdir, '{}_{}.{}'.format(report['experiment'], series['name'], ext))


def write_series_csv(outdir, report: dict) -> List[str]:
    """ One CSV per series of ``report`` (a :meth:`Report.to_dict` mapping) """
    return [write_csv(_series_path(outdir, report, s, 'csv'), s['columns'], s['rows'])
            for s in report['series']]


def snapshot_rows(run_id, ensembles, dt):
    for ensemble in ensembles:
        t = ensemble.time_index * dt
        for i, state in enumerate(ensemble.states):
            for c, value in enumerate(state):
                yield [run_id, t, i, c, float(value)]


def write_snapshots_csv(path, run_id, ensembles, dt) -> str:
    return write_csv(path, ['run_id', 't', 'particle', 'component', 'value'],
                     snapshot_rows(run_id, ensembles, dt))


def snapshot_summary(ensembles, dt) -> List[dict]:
    """ Per-snapshot moments for the JSON summary """
    out = []
    for ensemble in ensembles:
        stats = compute_stats(ensemble)
        out.append(dict(t=ensemble.time_index * dt, time_index=ensemble.time_index,
                        mean=stats.means.tolist(), abs_moment=stats.abs_moments.tolist(),
                        second_moment=stats.second_moments.tolist()))
    return out


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    raise TypeError('{!r} is not JSON serializable'.format(value))


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_plain) + '\n'


def write_json(path, obj) -> str:
    with open(path, 'w', encoding='utf-8') as f:
        f.write(dumps_json(obj))
    return path


def write_svg(path, columns: Sequence[str], rows: Sequence[Sequence], title=None) -> str:
    """
    Line chart of every numeric column against the first one.

    Axes switch to log scale when all plotted values are positive.
    """
    data = [[v for v in row] for row in rows]
    x = np.array([float(r[0]) for r in data])
    fig = Figure(figsize=(6, 4))
    FigureCanvasSVG(fig)
    ax = fig.add_subplot(1, 1, 1)
    plotted = []
    for j, name in enumerate(columns[1:], start=1):
        try:
            y = np.array([float(r[j]) for r in data])
        except (TypeError, ValueError):
            continue
        if not np.all(np.isfinite(y)):
            continue
        ax.plot(x, y, marker='.', label=name)
        plotted.append(y)
    if plotted and all(np.all(y > 0) for y in plotted):
        ax.set_yscale('log')
    if len(x) and np.all(x > 0) and x.max() / x.min() > 100:
        ax.set_xscale('log')
    ax.set_xlabel(columns[0])
    if title:
        ax.set_title(title)
    if plotted:
        ax.legend()
    with matplotlib.rc_context({'svg.hashsalt': 'mvperiodic', 'svg.fonttype': 'none'}):
        fig.savefig(path, format='svg', metadata={'Date': None})
    return path


def write_series_svg(outdir, report: dict) -> List[str]:
    paths = []
    for s in report['series']:
        if len(s['rows']) < 2:
            continue
        paths.append(write_svg(_series_path(outdir, report, s, 'svg'), s['columns'], s['rows'],
                               title='{} / {}'.format(report['experiment'], s['name'])))
    return paths
