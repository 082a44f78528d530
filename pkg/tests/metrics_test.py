import numpy as np
import pytest

from panoscan import metrics
from panoscan.errors import ArgumentError
from panoscan.errors import UndefinedCorrelationError
from panoscan.metrics import EvalReport


@pytest.mark.parametrize(
    ('x', 'y', 'expected'),
    (
        ([1, 2, 3, 4], [10, 20, 30, 40], 1.0),
        ([1, 2, 3, 4], [1, 4, 9, 16], 1.0),
        ([1, 2, 3, 4], [4, 3, 2, 1], -1.0),
        # ranks [1.5, 1.5, 3] against [1, 2, 3]
        ([1, 1, 2], [1, 2, 3], 0.8660254037844387),
    ),
)
def test_srcc(x, y, expected):
    assert metrics.srcc(x, y) == pytest.approx(expected)


def test_srcc_ignores_monotone_transforms():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=30), rng.normal(size=30)
    assert metrics.srcc(np.exp(x), y) == pytest.approx(metrics.srcc(x, y))


def test_plcc_matches_corrcoef():
    rng = np.random.default_rng(1)
    x = rng.normal(size=20)
    y = x + rng.normal(size=20)
    assert metrics.plcc(x, y) == pytest.approx(np.corrcoef(x, y)[0, 1])


@pytest.mark.parametrize(
    ('x', 'y', 'exc'),
    (
        ([1.0], [2.0], UndefinedCorrelationError),
        ([1.0, 1.0, 1.0], [1.0, 2.0, 3.0], UndefinedCorrelationError),
        ([1.0, 2.0, 3.0], [5.0, 5.0, 5.0], UndefinedCorrelationError),
        ([1.0, 2.0], [1.0, 2.0, 3.0], ArgumentError),
        ([[1.0, 2.0]], [[1.0, 2.0]], ArgumentError),
    ),
)
def test_correlation_rejects(x, y, exc):
    with pytest.raises(exc):
        metrics.srcc(x, y)
    with pytest.raises(exc):
        metrics.plcc(x, y)


def test_logistic4_midpoint():
    out = metrics.logistic4(np.array([3.0]), 100.0, 0.0, 3.0, 2.0)
    assert out[0] == pytest.approx(50.0)


def test_logistic_plcc_recovers_a_sigmoid():
    x = np.linspace(-4.0, 4.0, 40)
    y = metrics.logistic4(x, 90.0, 10.0, 0.5, 1.2)
    assert metrics.logistic_plcc(x, y) == pytest.approx(1.0, abs=1e-6)
    assert metrics.logistic_plcc(x, y) > metrics.plcc(x, y)


def test_eval_report():
    report = EvalReport.from_pairs([10.0, 20.0, 30.0], [1.0, 3.0, 2.0])
    assert report.srcc == pytest.approx(0.5)
    assert report.n == 3
    assert report.to_json() == {'srcc': report.srcc, 'plcc': report.plcc, 'n': 3}


def test_sweep_writes_one_row_per_cell(tmpdir):
    calls = []

    def evaluate(k, t):
        calls.append((k, t))
        return EvalReport(0.1 * k, 0.01 * t, 4, (), ())

    out = tmpdir.join('sweep.csv')
    rows = metrics.sweep(evaluate, [5, 10], [4, 7], out.strpath)
    assert calls == [(5, 4), (10, 4), (5, 7), (10, 7)]
    assert [(r['K'], r['T']) for r in rows] == calls
    lines = out.read().splitlines()
    assert lines[0] == ','.join(metrics.SWEEP_COLUMNS)
    assert len(lines) == 5
    assert lines[1].startswith('5,4,0.5,0.04,')
