"""Error statistics, standards grading, and agreement tables.

Everything here consumes estimate/reference pairs (or precomputed
errors in mmHg) and produces plain values or plot-ready tables; nothing
touches models or waveforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    IncompleteTableError,
    InsufficientDataError,
    InvalidConfigurationError,
    ShapeError,
)

BHS_THRESHOLDS_MMHG = (5.0, 10.0, 15.0)
# inclusive floors on (pct within 5, 10, 15); anything below C is D
BHS_GRADE_FLOORS = (
    ("A", (60.0, 85.0, 95.0)),
    ("B", (50.0, 75.0, 90.0)),
    ("C", (40.0, 65.0, 85.0)),
)
AAMI_MAX_ABS_ME_MMHG = 5.0
AAMI_MAX_SDE_MMHG = 8.0


def _as_error_vector(errors, min_n: int) -> np.ndarray:
    e = np.asarray(errors, dtype=np.float64)
    if e.ndim != 1:
        raise ShapeError(f"expected a 1D error sequence, got shape {e.shape}")
    if e.shape[0] < min_n:
        raise InsufficientDataError(
            f"need at least {min_n} errors, got {e.shape[0]}")
    return e


def error_stats(errors: Sequence[float]) -> tuple[float, float, float]:
    """Mean error, mean absolute error, and sample standard deviation of
    the error (n - 1 denominator), all in mmHg."""
    e = _as_error_vector(errors, min_n=2)
    return float(e.mean()), float(np.abs(e).mean()), float(e.std(ddof=1))


def within_percentages(errors: Sequence[float]) -> tuple[float, float, float]:
    """Percentages of absolute errors within 5, 10, and 15 mmHg."""
    e = np.abs(_as_error_vector(errors, min_n=1))
    return tuple(float(100.0 * np.mean(e <= t)) for t in BHS_THRESHOLDS_MMHG)


def grade_from_percentages(pct_5: float, pct_10: float, pct_15: float) -> str:
    """Letter grade for cumulative-percentage triple; floors are inclusive."""
    for pct in (pct_5, pct_10, pct_15):
        if not 0.0 <= pct <= 100.0:
            raise InvalidConfigurationError(
                f"percentages must lie in [0, 100], got {pct}")
    for grade, floors in BHS_GRADE_FLOORS:
        if pct_5 >= floors[0] and pct_10 >= floors[1] and pct_15 >= floors[2]:
            return grade
    return "D"


def bhs_grade(errors: Sequence[float]) -> tuple[tuple[float, float, float], str]:
    """Grade an error vector: returns the within-percentages and the letter."""
    pct = within_percentages(errors)
    return pct, grade_from_percentages(*pct)


def aami_check(me: float, sde: float) -> bool:
    """Device-accuracy rule: |mean error| at most 5 mmHg and error
    standard deviation at most 8 mmHg, both inclusive."""
    return abs(me) <= AAMI_MAX_ABS_ME_MMHG and sde <= AAMI_MAX_SDE_MMHG


@dataclass(frozen=True)
class BlandAltmanTable:
    """Plot-ready agreement table: one (mean, difference) point per pair."""

    mean_of_pair: np.ndarray
    difference: np.ndarray
    bias: float
    lower_limit: float
    upper_limit: float


def bland_altman(estimates: Sequence[float],
                 references: Sequence[float]) -> BlandAltmanTable:
    """Pairwise means against differences, with bias +- 1.96 SD limits.

    The SD uses the n - 1 denominator; a single pair has no measurable
    spread, so its limits collapse onto the bias.
    """
    est = np.asarray(estimates, dtype=np.float64)
    ref = np.asarray(references, dtype=np.float64)
    if est.ndim != 1 or est.shape != ref.shape:
        raise ShapeError(
            f"estimates and references must be matching 1D sequences, "
            f"got {est.shape} and {ref.shape}")
    if est.shape[0] == 0:
        raise InsufficientDataError("no pairs to compare")
    diff = est - ref
    bias = float(diff.mean())
    sd = float(diff.std(ddof=1)) if diff.shape[0] > 1 else 0.0
    return BlandAltmanTable(
        mean_of_pair=(est + ref) / 2.0,
        difference=diff,
        bias=bias,
        lower_limit=bias - 1.96 * sd,
        upper_limit=bias + 1.96 * sd,
    )


@dataclass(frozen=True)
class EvaluationReport:
    """Run-averaged accuracy summary for one pressure target."""

    target: str
    me: float
    mae: float
    sde: float
    pct_within_5: float
    pct_within_10: float
    pct_within_15: float
    bhs_grade: str
    aami_pass: bool
    n: int
    runs_averaged: int

    def validate(self) -> None:
        if not 0.0 <= self.pct_within_5 <= self.pct_within_10 \
                <= self.pct_within_15 <= 100.0:
            raise InvalidConfigurationError(
                "within-percentages must be increasing and in [0, 100]")
        if self.mae < abs(self.me):
            raise InvalidConfigurationError("mae cannot be below |me|")
        if self.sde < 0:
            raise InvalidConfigurationError("sde cannot be negative")
        if self.bhs_grade not in ("A", "B", "C", "D"):
            raise InvalidConfigurationError(f"unknown grade {self.bhs_grade!r}")
        if self.n < 1 or self.runs_averaged < 1:
            raise InvalidConfigurationError("counts must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def aggregate_runs(rows: Iterable, n_runs: int) -> dict[str, EvaluationReport]:
    """Average per-run statistics into one report per target.

    ``rows`` holds prediction records with run, subject_id, record_id,
    target, prediction, and reference attributes. Every run index in
    ``range(n_runs)`` must be present for each target; statistics are
    computed within each run and then averaged, so no run dominates.
    """
    if n_runs < 1:
        raise InvalidConfigurationError("n_runs must be >= 1")
    by_target: dict[str, dict[int, list]] = {}
    for row in rows:
        by_target.setdefault(row.target, {}).setdefault(row.run, []).append(row)
    if not by_target:
        raise IncompleteTableError("prediction table is empty")
    reports = {}
    for target in sorted(by_target):
        runs = by_target[target]
        expected = set(range(n_runs))
        if set(runs) != expected:
            missing = sorted(expected - set(runs))
            extra = sorted(set(runs) - expected)
            raise IncompleteTableError(
                f"target {target}: missing runs {missing}, unexpected runs {extra}")
        per_run = []
        records = set()
        for run in range(n_runs):
            errors = np.array([r.prediction - r.reference for r in runs[run]])
            records.update((r.subject_id, r.record_id) for r in runs[run])
            me, mae, sde = error_stats(errors)
            per_run.append((me, mae, sde, *within_percentages(errors)))
        avg = np.mean(np.array(per_run), axis=0)
        me, mae, sde, p5, p10, p15 = (float(v) for v in avg)
        report = EvaluationReport(
            target=target, me=me, mae=mae, sde=sde,
            pct_within_5=p5, pct_within_10=p10, pct_within_15=p15,
            bhs_grade=grade_from_percentages(p5, p10, p15),
            aami_pass=aami_check(me, sde),
            n=len(records), runs_averaged=n_runs)
        report.validate()
        reports[target] = report
    return reports


# -- emission -----------------------------------------------------------------

_REPORT_COLUMNS = ("target", "me", "mae", "sde", "pct_within_5",
                   "pct_within_10", "pct_within_15", "bhs_grade",
                   "aami_pass", "n", "runs_averaged")


def report_to_json(reports: dict[str, EvaluationReport]) -> str:
    """All report fields per target, as deterministic indented JSON."""
    payload = {t: reports[t].to_dict() for t in sorted(reports)}
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def reports_to_csv(reports: dict[str, EvaluationReport]) -> str:
    lines = [",".join(_REPORT_COLUMNS)]
    for target in sorted(reports):
        r = reports[target]
        lines.append(",".join([
            r.target, repr(r.me), repr(r.mae), repr(r.sde),
            repr(r.pct_within_5), repr(r.pct_within_10), repr(r.pct_within_15),
            r.bhs_grade, str(r.aami_pass).lower(), str(r.n),
            str(r.runs_averaged)]))
    return "\n".join(lines) + "\n"


def bland_altman_to_csv(table: BlandAltmanTable) -> str:
    """Data rows then a three-line footer with bias and both limits."""
    lines = ["mean_mmHg,diff_mmHg"]
    for m, d in zip(table.mean_of_pair, table.difference):
        lines.append(f"{float(m)!r},{float(d)!r}")
    lines.append(f"# bias,{table.bias!r}")
    lines.append(f"# lower_limit,{table.lower_limit!r}")
    lines.append(f"# upper_limit,{table.upper_limit!r}")
    return "\n".join(lines) + "\n"


def format_report(reports: dict[str, EvaluationReport]) -> str:
    """Human-readable multi-line summary of one or more reports."""
    out = []
    for target in sorted(reports):
        r = reports[target]
        out.append(f"{r.target}: n={r.n} records, {r.runs_averaged} run(s)")
        out.append(f"  ME {r.me:+.2f} mmHg   MAE {r.mae:.2f} mmHg   "
                   f"SDE {r.sde:.2f} mmHg")
        out.append(f"  within 5/10/15 mmHg: {r.pct_within_5:.2f}% / "
                   f"{r.pct_within_10:.2f}% / {r.pct_within_15:.2f}%")
        out.append(f"  grade {r.bhs_grade}   "
                   f"device accuracy {'pass' if r.aami_pass else 'fail'}")
    return "\n".join(out) + "\n"
