"""Morpho-temporal grid: a square matrix holding one resampled pulse
shape per integer cuff pressure.

Rows index the morphology samples of a pulse, columns index cuff
pressure on a 1 mmHg lattice (21..235 mmHg by default, 215 columns).
Each cleaned pulse is resampled to the row count and dropped into the
column nearest its occurrence pressure; pressures without a pulse are
filled row-wise by linear interpolation between, or extrapolation from,
the two nearest observed columns. Column provenance is kept so
downstream consumers can tell measured shapes from filled ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegeneratePulseError,
    InsufficientPulsesError,
    InvalidConfigurationError,
    ParseError,
)
from .signal_prep import PulseSegment

__all__ = [
    "MorphoTemporalGrid",
    "ORIGINAL",
    "INTERPOLATED",
    "EXTRAPOLATED",
    "pulse_pressure",
    "resample_pulse",
    "build_grid",
    "grid_to_csv",
    "grid_from_csv",
]

DEFAULT_PRESSURE_RANGE = (21, 235)
DEFAULT_ROWS = 215

ORIGINAL = "original"
INTERPOLATED = "interpolated"
EXTRAPOLATED = "extrapolated"

_TAG_TO_CHAR = {ORIGINAL: "o", INTERPOLATED: "i", EXTRAPOLATED: "e"}
_CHAR_TO_TAG = {v: k for k, v in _TAG_TO_CHAR.items()}


@dataclass
class MorphoTemporalGrid:
    """Pressure-by-morphology matrix with per-column provenance."""

    values: np.ndarray               # (n_rows, n_cols)
    column_pressure: np.ndarray      # (n_cols,) integers, mmHg
    provenance: list[str]
    subject_id: str = ""
    record_id: str = ""

    def validate(self) -> None:
        v = self.values
        if v.ndim != 2:
            raise InvalidConfigurationError("grid values must be a 2D matrix")
        n_cols = v.shape[1]
        if len(self.column_pressure) != n_cols or len(self.provenance) != n_cols:
            raise InvalidConfigurationError(
                "column_pressure and provenance must have one entry per column")
        steps = np.diff(self.column_pressure)
        if n_cols > 1 and not np.all(steps == 1):
            raise InvalidConfigurationError(
                "column pressures must increase in 1 mmHg steps")
        bad = set(self.provenance) - set(_TAG_TO_CHAR)
        if bad:
            raise InvalidConfigurationError(f"unknown provenance tags: {sorted(bad)}")
        if ORIGINAL not in self.provenance:
            raise InvalidConfigurationError("grid has no original columns")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def original_columns(self) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.provenance) if t == ORIGINAL])


def pulse_pressure(pulse: PulseSegment, slow: np.ndarray) -> float:
    """Cuff pressure at which the pulse occurred: the slow component
    sampled at the pulse peak."""
    slow = np.asarray(slow)
    if not 0 <= pulse.peak_index < len(slow):
        raise InvalidConfigurationError(
            f"peak index {pulse.peak_index} outside slow trace of {len(slow)}")
    return float(slow[pulse.peak_index])


def resample_pulse(samples: np.ndarray, n: int = DEFAULT_ROWS) -> np.ndarray:
    """Linear resampling onto n equally spaced points over the pulse span.

    Endpoints are preserved exactly; a pulse already of length n comes
    back unchanged.
    """
    y = np.asarray(samples, dtype=np.float64)
    if y.ndim != 1 or len(y) < 2:
        raise DegeneratePulseError(f"cannot resample a pulse of {y.size} samples")
    if len(y) == n:
        return y.copy()
    old = np.arange(len(y), dtype=np.float64)
    new = np.linspace(0.0, len(y) - 1.0, n)
    return np.interp(new, old, y)


def _nearest_column(pressure: float, p_min: int, p_max: int) -> int:
    # ties between neighbors go to the lower pressure
    p = int(np.ceil(pressure - 0.5))
    return int(np.clip(p, p_min, p_max)) - p_min


def build_grid(pulses: list[PulseSegment], slow: np.ndarray,
               pressure_range: tuple[int, int] = DEFAULT_PRESSURE_RANGE,
               n_rows: int = DEFAULT_ROWS,
               clamp_extrapolation: bool = False,
               subject_id: str = "", record_id: str = "") -> MorphoTemporalGrid:
    """Place cleaned pulses on the pressure lattice and fill the gaps.

    Outlier-flagged pulses are ignored. Pulses landing on the same
    column are averaged element-wise. Every remaining column is filled
    row-wise from the two nearest observed columns: interpolation
    between them inside the observed span, straight-line continuation
    outside it (optionally clamped to each row's observed value range).

    Raises an insufficient-pulses error when fewer than two distinct
    columns receive a pulse, since the line fill needs two anchors.
    """
    p_min, p_max = int(pressure_range[0]), int(pressure_range[1])
    if p_max <= p_min:
        raise InvalidConfigurationError(f"bad pressure range [{p_min}, {p_max}]")
    n_cols = p_max - p_min + 1

    kept = [p for p in pulses if not p.is_outlier]
    if len(kept) < 2:
        raise InsufficientPulsesError(
            f"{len(kept)} usable pulses, need at least 2 to span a pressure range")

    # sort placements so colliding pulses are summed in a fixed order
    # and the grid is independent of the input list order
    placed = sorted(
        ((_nearest_column(pulse_pressure(p, slow), p_min, p_max), p) for p in kept),
        key=lambda t: (t[0], t[1].peak_index, t[1].start_index,
                       t[1].samples.tobytes()))
    sums = np.zeros((n_rows, n_cols))
    counts = np.zeros(n_cols, dtype=np.intp)
    for col, p in placed:
        sums[:, col] += resample_pulse(p.samples, n_rows)
        counts[col] += 1

    orig = np.nonzero(counts)[0]
    if len(orig) < 2:
        raise InsufficientPulsesError(
            "all pulses fall on one pressure column, need two anchors to fill")

    values = np.zeros((n_rows, n_cols))
    values[:, orig] = sums[:, orig] / counts[orig]
    anchors = values[:, orig]

    provenance = [INTERPOLATED] * n_cols
    for j in range(n_cols):
        if counts[j]:
            provenance[j] = ORIGINAL
            continue
        if j < orig[0] or j > orig[-1]:
            provenance[j] = EXTRAPOLATED
        # pick the bracketing (or two nearest) observed columns
        k = int(np.searchsorted(orig, j))
        if k == 0:
            a, b = 0, 1
        elif k == len(orig):
            a, b = len(orig) - 2, len(orig) - 1
        else:
            a, b = k - 1, k
        w = (j - orig[a]) / float(orig[b] - orig[a])
        col = anchors[:, a] * (1.0 - w) + anchors[:, b] * w
        if clamp_extrapolation and provenance[j] == EXTRAPOLATED:
            col = np.clip(col, anchors.min(axis=1), anchors.max(axis=1))
        values[:, j] = col

    # the fill never touches observed columns, but restate them so the
    # bit-for-bit guarantee is explicit
    values[:, orig] = anchors

    return MorphoTemporalGrid(values=values,
                              column_pressure=np.arange(p_min, p_max + 1),
                              provenance=provenance,
                              subject_id=subject_id, record_id=record_id)


# ---------------------------------------------------------------------------
# serialization: one header line, then one line per column (column-major)


def grid_to_csv(grid: MorphoTemporalGrid) -> str:
    """Render the grid as CSV text.

    Header: subject_id,record_id,p_min,p_max,provenance where provenance
    is one character per column (o/i/e). Then one line per column with
    the morphology values, written with repr so reruns are byte equal.
    """
    grid.validate()
    for ident in (grid.subject_id, grid.record_id):
        if "," in ident or "\n" in ident:
            raise InvalidConfigurationError(f"identifier {ident!r} contains a delimiter")
    tags = "".join(_TAG_TO_CHAR[t] for t in grid.provenance)
    lines = [f"{grid.subject_id},{grid.record_id},"
             f"{int(grid.column_pressure[0])},{int(grid.column_pressure[-1])},{tags}"]
    for j in range(grid.n_cols):
        lines.append(",".join(repr(float(v)) for v in grid.values[:, j]))
    return "\n".join(lines) + "\n"


def grid_from_csv(text: str) -> MorphoTemporalGrid:
    """Parse grid_to_csv output back into a grid, bit for bit."""
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty grid file")
    head = lines[0].split(",")
    if len(head) != 5:
        raise ParseError(f"line 1: expected 5 header fields, got {len(head)}")
    subject_id, record_id, p_min_s, p_max_s, tags = head
    try:
        p_min, p_max = int(p_min_s), int(p_max_s)
    except ValueError:
        raise ParseError(f"line 1: pressure bounds {p_min_s!r}, {p_max_s!r} not integers")
    n_cols = p_max - p_min + 1
    if n_cols < 1:
        raise ParseError(f"line 1: bad pressure range [{p_min}, {p_max}]")
    if len(tags) != n_cols:
        raise ParseError(
            f"line 1: provenance has {len(tags)} tags for {n_cols} columns")
    try:
        provenance = [_CHAR_TO_TAG[c] for c in tags]
    except KeyError as e:
        raise ParseError(f"line 1: unknown provenance character {e.args[0]!r}")
    if len(lines) < 1 + n_cols:
        raise ParseError(f"expected {n_cols} column lines, found {len(lines) - 1}")

    columns = []
    width = None
    for j in range(n_cols):
        parts = lines[1 + j].split(",")
        if width is None:
            width = len(parts)
        elif len(parts) != width:
            raise ParseError(f"line {j + 2}: expected {width} values, got {len(parts)}")
        try:
            columns.append(np.array([float(v) for v in parts]))
        except ValueError:
            raise ParseError(f"line {j + 2}: non-numeric value")
    grid = MorphoTemporalGrid(values=np.stack(columns, axis=1),
                              column_pressure=np.arange(p_min, p_max + 1),
                              provenance=provenance,
                              subject_id=subject_id, record_id=record_id)
    grid.validate()
    return grid
