"""
Post-search analysis: rank correlations and table exports.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
from scipy import stats

from .latency_bench import count_flops, count_params
from .model_core import ModelConfig
from .pareto import pareto_indices
from .search_space import config_for_point, scaled_base_config
from .trial import Trial

PARETO_COLUMNS = ("loss", "ttft_s", "d_l", "d_ffn", "d_model", "n_skip", "n_swa", "on_front")
CORRELATION_COLUMNS = ("context", "proxy", "target", "tau", "n")

Row = Sequence[Any]


class UndefinedCorrelationError(Exception):
    """Raised when a rank correlation is undefined (constant input or too few points)."""

    pass


def kendall_tau(x: npt.ArrayLike, y: npt.ArrayLike) -> float:
    """
    Kendall's tau-b between two paired samples.

    Raises:
        UndefinedCorrelationError: fewer than 2 pairs or either side constant
    """
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    b = np.asarray(y, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"paired samples differ in length: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 2:
        raise UndefinedCorrelationError("need at least 2 pairs")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise UndefinedCorrelationError("tau is undefined for a constant sample")
    return float(stats.kendalltau(a, b).statistic)


@dataclass
class CorrelationPair:
    context: int
    proxy: str
    target: str
    tau: float  # nan when undefined
    n: int


@dataclass
class CorrelationReport:
    """Proxy-vs-measurement rank correlations, plus the rows they were computed from."""

    pairs: List[CorrelationPair] = field(default_factory=list)
    rows: List[Dict[str, Any]] = field(default_factory=list)

    def tau(self, context: int, proxy: str, target: str) -> float:
        for pair in self.pairs:
            if (pair.context, pair.proxy, pair.target) == (context, proxy, target):
                return pair.tau
        raise KeyError((context, proxy, target))

    def table(self) -> Tuple[Tuple[str, ...], List[Row]]:
        rows = [[p.context, p.proxy, p.target, p.tau, p.n] for p in self.pairs]
        return CORRELATION_COLUMNS, rows


def _safe_tau(x: Sequence[float], y: Sequence[float]) -> float:
    try:
        return kendall_tau(x, y)
    except UndefinedCorrelationError as e:
        logging.warning(f"Correlation undefined: {e}")
        return math.nan


def proxy_correlation(
    trials: Sequence[Trial],
    template: Optional[ModelConfig] = None,
    width_divisor: int = 1,
    swa_window: int = 1024,
) -> CorrelationReport:
    """
    Rank-correlate analytic proxies with measured latency.

    For every measured context: parameter count and ideal prefill FLOPs
    against TTFT, parameter count and ideal per-token decode FLOPs against
    per-token decode time. Samples are averaged per (point, context) first.

    Args:
        trials: trials carrying latency samples
        template: config the proxies are priced on (full-scale base by default)
        width_divisor: width scale of ``template``
        swa_window: window used for SWA layers

    Returns:
        CorrelationReport
    """
    template = template or scaled_base_config(1)
    grouped: Dict[Tuple[str, int], List[Tuple[float, float]]] = {}
    points = {}
    for trial in trials:
        key = trial.point.encode()
        points[key] = trial.point
        for sample in trial.samples:
            grouped.setdefault((key, sample.context), []).append(
                (sample.ttft_seconds, 1.0 / sample.decode_tok_per_s)
            )

    report = CorrelationReport()
    for key, context in sorted(grouped, key=lambda k: (k[1], k[0])):
        values = np.array(grouped[(key, context)])
        cfg = config_for_point(points[key], template, width_divisor, swa_window)
        flops = count_flops(cfg, context)
        report.rows.append(
            {
                "point": key,
                "context": context,
                "params": count_params(cfg),
                "prefill_flops": flops.prefill,
                "decode_flops": flops.decode_per_token,
                "ttft_s": float(values[:, 0].mean()),
                "ttft_per_token_s": float(values[:, 0].mean()) / context,
                "decode_s_per_token": float(values[:, 1].mean()),
            }
        )

    for context in sorted({row["context"] for row in report.rows}):
        rows = [row for row in report.rows if row["context"] == context]
        for proxy, target in (
            ("params", "ttft_s"),
            ("prefill_flops", "ttft_s"),
            ("params", "decode_s_per_token"),
            ("decode_flops", "decode_s_per_token"),
        ):
            tau = _safe_tau([r[proxy] for r in rows], [r[target] for r in rows])
            report.pairs.append(CorrelationPair(context, proxy, target, tau, len(rows)))
    return report


def rank_stability(
    curves: Mapping[str, Mapping[int, float]], early_step: int, late_step: int
) -> float:
    """Kendall's tau between candidate losses at ``early_step`` and at ``late_step``."""
    keys = sorted(curves)
    missing = [k for k in keys if early_step not in curves[k] or late_step not in curves[k]]
    if missing:
        raise KeyError(f"{len(missing)} curves lack step {early_step} or {late_step}")
    early = [curves[k][early_step] for k in keys]
    late = [curves[k][late_step] for k in keys]
    return kendall_tau(early, late)


def export_pareto(
    trials: Sequence[Trial], ref: Optional[Sequence[float]] = None
) -> Tuple[Tuple[str, ...], List[Row]]:
    """
    Table of evaluated trials with a front marker, ordered by TTFT then loss.

    With ``ref`` set, only trials strictly inside the reference box can be
    marked as on the front.
    """
    evaluated = [t for t in trials if t.quality is not None]
    eligible = [
        i
        for i, t in enumerate(evaluated)
        if ref is None or (t.objectives[0] < ref[0] and t.objectives[1] < ref[1])
    ]
    on_front = set()
    if eligible:
        objectives = np.array([evaluated[i].objectives for i in eligible])
        on_front = {eligible[int(i)] for i in pareto_indices(objectives)}

    order = sorted(
        range(len(evaluated)),
        key=lambda i: (evaluated[i].latency, evaluated[i].quality, evaluated[i].point.encode()),
    )
    rows: List[Row] = []
    for i in order:
        t = evaluated[i]
        rows.append(
            [
                t.quality,
                t.latency,
                t.point.d_l,
                t.point.d_ffn,
                t.point.d_model,
                t.point.n_skip,
                t.point.n_swa,
                int(i in on_front),
            ]
        )
    return PARETO_COLUMNS, rows


def write_table(path: Union[str, Path], header: Sequence[str], rows: Sequence[Row]) -> Path:
    """Write a CSV table; floats are written with full precision."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    logging.info(f"Wrote {len(rows)} rows to {out}")
    return out
