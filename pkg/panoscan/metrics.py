from __future__ import annotations

import dataclasses
import time
from collections.abc import Callable
from collections.abc import Sequence
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy import optimize
from scipy import stats

from panoscan.console import CsvLog
from panoscan.console import status
from panoscan.diffcore import Array
from panoscan.errors import ArgumentError
from panoscan.errors import UndefinedCorrelationError

SWEEP_COLUMNS = ('K', 'T', 'srcc', 'plcc', 'wall_ms')
DEFAULT_SWEEP_KS = (5, 10, 15, 20, 50)
DEFAULT_SWEEP_TS = (4, 7, 15)


def _check_pair(x: npt.ArrayLike, y: npt.ArrayLike) -> tuple[Array, Array]:
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise ArgumentError(f'correlation needs equal 1-d inputs, got {xa.shape} and {ya.shape}')
    if xa.size < 2:
        raise UndefinedCorrelationError(f'correlation needs n >= 2, got {xa.size}')
    for name, a in (('x', xa), ('y', ya)):
        if np.all(a == a[0]):
            raise UndefinedCorrelationError(f'{name} is constant; correlation is undefined')
    return xa, ya


def srcc(x: npt.ArrayLike, y: npt.ArrayLike) -> float:
    """Spearman rank-order correlation; ties take their average rank."""
    xa, ya = _check_pair(x, y)
    return float(stats.spearmanr(xa, ya)[0])


def plcc(x: npt.ArrayLike, y: npt.ArrayLike) -> float:
    xa, ya = _check_pair(x, y)
    return float(stats.pearsonr(xa, ya)[0])


def logistic4(x: Array, b1: float, b2: float, b3: float, b4: float) -> Array:
    return (b1 - b2) / (1.0 + np.exp(-(x - b3) / abs(b4))) + b2


def logistic_plcc(pred: npt.ArrayLike, labels: npt.ArrayLike) -> float:
    """PLCC after fitting a 4-parameter logistic from predictions to labels;
    falls back to raw PLCC when the fit does not converge."""
    xa, ya = _check_pair(pred, labels)
    p0 = [float(ya.max()), float(ya.min()), float(np.mean(xa)), float(np.std(xa)) or 1.0]
    try:
        popt, _ = optimize.curve_fit(logistic4, xa, ya, p0=p0, maxfev=10000)
    except (RuntimeError, ValueError):
        return plcc(xa, ya)
    mapped = logistic4(xa, *popt)
    if np.all(mapped == mapped[0]):
        return plcc(xa, ya)
    return plcc(mapped, ya)


@dataclasses.dataclass(frozen=True)
class EvalReport:
    srcc: float
    plcc: float
    n: int
    labels: tuple[float, ...]
    predictions: tuple[float, ...]

    @classmethod
    def from_pairs(
            cls,
            labels: Sequence[float],
            predictions: Sequence[float],
            logistic: bool = False,
    ) -> EvalReport:
        linear = logistic_plcc if logistic else plcc
        return cls(
            srcc=srcc(predictions, labels),
            plcc=linear(predictions, labels),
            n=len(labels),
            labels=tuple(labels),
            predictions=tuple(predictions),
        )

    def to_json(self) -> dict[str, Any]:
        return {'srcc': self.srcc, 'plcc': self.plcc, 'n': self.n}


def sweep(
        evaluate: Callable[[int, int], EvalReport],
        ks: Sequence[int],
        ts: Sequence[int],
        out_csv: str,
) -> list[dict[str, float]]:
    """Evaluates every ``(K, T)`` cell and writes one CSV row per cell."""
    rows = []
    with CsvLog(out_csv, SWEEP_COLUMNS) as log:
        for t in ts:
            for k in ks:
                start = time.perf_counter()
                report = evaluate(k, t)
                wall_ms = (time.perf_counter() - start) * 1000.0
                row = {
                    'K': k,
                    'T': t,
                    'srcc': report.srcc,
                    'plcc': report.plcc,
                    'wall_ms': wall_ms,
                }
                log.row(row)
                rows.append(row)
                status(
                    f'K={k:<3d} T={t:<3d} srcc={report.srcc:.4f} '
                    f'plcc={report.plcc:.4f} ({wall_ms:.0f} ms)',
                )
    return rows
