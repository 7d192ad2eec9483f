"""Flat-file formats tying the pipeline stages together.

Everything is line-oriented text so artifacts diff cleanly: raw
recordings, the run configuration, prediction tables, training
histories, and cohort truth tables. Rendering uses repr() for floats,
so write-then-read round trips are exact and reruns are byte-identical.
"""

from __future__ import annotations

import typing
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import InvalidConfigurationError, ParseError
from .model import ModelConfig
from .signal_prep import CuffDeflationRecord
from .synthetic import SyntheticCohortConfig, SyntheticTruth
from .trainer import PredictionRow, TrainingConfig, TrainingHistory

WORKING_RATE_HZ = 100.0


# -- raw recordings -----------------------------------------------------------


def record_to_text(record: CuffDeflationRecord) -> str:
    """Header of id and calibration fields, then one sample per line."""
    record.validate()
    for name in (record.subject_id, record.record_id):
        if not name or "," in name or "\n" in name:
            raise InvalidConfigurationError(f"unserializable id {name!r}")
    head = (f"{record.subject_id},{record.record_id},"
            f"{record.sampling_rate!r},{record.ref_sbp!r},{record.ref_dbp!r}")
    body = "\n".join(repr(float(v)) for v in record.samples)
    return head + "\n" + body + "\n"


def write_record(record: CuffDeflationRecord, path) -> None:
    with open(path, "w") as fh:
        fh.write(record_to_text(record))


def parse_record(path, working_rate_hz: float = WORKING_RATE_HZ) -> CuffDeflationRecord:
    """Read one recording and resample it to the working rate.

    Resampling is linear interpolation onto a uniform time base, applied
    only when the stored rate differs. Errors cite 1-based line numbers,
    counting the header as line 1.
    """
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    head = lines[0].split(",")
    if len(head) != 5:
        raise ParseError(f"{path}: line 1: expected 5 header fields, got {len(head)}")
    subject_id, record_id = head[0], head[1]
    if not subject_id or not record_id:
        raise ParseError(f"{path}: line 1: empty id field")
    try:
        fs = float(head[2])
        ref_sbp = float(head[3])
        ref_dbp = float(head[4])
    except ValueError as err:
        raise ParseError(f"{path}: line 1: {err}") from None
    if fs <= 0:
        raise ParseError(f"{path}: line 1: sampling rate must be positive, got {fs}")
    samples = np.empty(len(lines) - 1)
    for i, line in enumerate(lines[1:], start=2):
        try:
            samples[i - 2] = float(line)
        except ValueError:
            raise ParseError(
                f"{path}: line {i}: expected a decimal sample, got {line!r}") from None
    if len(samples) < 10 * fs:
        raise ParseError(
            f"{path}: {len(samples)} samples is under 10 s at {fs:g} Hz")
    if fs != working_rate_hz:
        t_old = np.arange(len(samples)) / fs
        n_new = int(np.floor(t_old[-1] * working_rate_hz)) + 1
        samples = np.interp(np.arange(n_new) / working_rate_hz, t_old, samples)
        fs = working_rate_hz
    record = CuffDeflationRecord(subject_id=subject_id, record_id=record_id,
                                 sampling_rate=fs, samples=samples,
                                 ref_sbp=ref_sbp, ref_dbp=ref_dbp)
    record.validate()
    return record


# -- run configuration ----------------------------------------------------------


@dataclass(frozen=True)
class SignalConfig:
    """Preprocessing knobs: filter cutoffs and the peak-scan window."""

    hp_cutoff_hz: float = 0.3
    lp_cutoff_hz: float = 10.0
    window_s: float = 6.0
    working_rate_hz: float = WORKING_RATE_HZ

    def validate(self) -> None:
        for name in ("hp_cutoff_hz", "lp_cutoff_hz", "window_s", "working_rate_hz"):
            if getattr(self, name) <= 0:
                raise InvalidConfigurationError(f"{name} must be positive")
        if self.hp_cutoff_hz >= self.lp_cutoff_hz:
            raise InvalidConfigurationError(
                "hp_cutoff_hz must sit below lp_cutoff_hz")


@dataclass(frozen=True)
class GridConfig:
    p_min: int = 21
    p_max: int = 235
    n_rows: int = 215
    clamp_extrapolation: bool = False

    def validate(self) -> None:
        if not self.p_min < self.p_max:
            raise InvalidConfigurationError("need p_min < p_max")
        if self.n_rows < 2:
            raise InvalidConfigurationError("n_rows must be >= 2")

    @property
    def pressure_range(self) -> tuple[int, int]:
        return (self.p_min, self.p_max)


@dataclass(frozen=True)
class RunConfig:
    """Every configurable default, addressable as flat key=value text.

    ``seed`` is the master seed: unless a section sets its own seed
    explicitly, ``training.seed`` and ``cohort.seed`` follow it, so one
    integer reproduces a whole experiment.
    """

    seed: int = 0
    n_runs: int = 10
    signal: SignalConfig = field(default_factory=SignalConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    cohort: SyntheticCohortConfig = field(default_factory=SyntheticCohortConfig)

    def validate(self) -> None:
        if self.n_runs < 1:
            raise InvalidConfigurationError("n_runs must be >= 1")
        self.signal.validate()
        self.grid.validate()
        self.model.validate()
        self.training.validate()
        self.cohort.validate()

    def with_master_seed(self, seed: int) -> "RunConfig":
        """Propagate one master seed into every seeded section."""
        return replace(self, seed=seed,
                       training=replace(self.training, seed=seed),
                       cohort=replace(self.cohort, seed=seed))


_SECTIONS = ("cohort", "grid", "model", "signal", "training")
_TOP_KEYS = ("seed", "n_runs")


def _field_types(obj) -> dict[str, type]:
    return typing.get_type_hints(type(obj))


def _parse_value(raw: str, typ, key: str, lineno: int):
    def fail(why):
        return ParseError(f"line {lineno}: {key}: {why}")

    origin = typing.get_origin(typ)
    if origin is tuple:
        args = typing.get_args(typ)
        parts = [p.strip() for p in raw.split(",")]
        if args[-1] is Ellipsis:
            elem = args[0]
            return tuple(_parse_value(p, elem, key, lineno) for p in parts)
        if len(parts) != len(args):
            raise fail(f"expected {len(args)} comma-separated values, got {len(parts)}")
        return tuple(_parse_value(p, a, key, lineno) for p, a in zip(parts, args))
    if typ is bool:
        if raw.lower() in ("true", "false"):
            return raw.lower() == "true"
        raise fail(f"expected true or false, got {raw!r}")
    if typ is int:
        try:
            return int(raw)
        except ValueError:
            raise fail(f"expected an integer, got {raw!r}") from None
    if typ is float:
        try:
            return float(raw)
        except ValueError:
            raise fail(f"expected a number, got {raw!r}") from None
    if typ is str:
        return raw
    raise fail(f"unsupported value type {typ}")


def _render_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_render_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_run_config(text: str) -> RunConfig:
    """Parse flat key=value lines; # comments and blank lines are skipped.

    Unknown keys are rejected with their line number. The master seed
    propagates into training.seed and cohort.seed unless those keys
    appear explicitly.
    """
    cfg = RunConfig()
    sections = {name: getattr(cfg, name) for name in _SECTIONS}
    top: dict[str, int] = {}
    section_updates: dict[str, dict] = {name: {} for name in _SECTIONS}
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in seen:
            raise ParseError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        if key in _TOP_KEYS:
            top[key] = _parse_value(value, int, key, lineno)
            continue
        section, _, name = key.partition(".")
        if section not in sections or not name:
            raise ParseError(f"line {lineno}: unknown key {key!r}")
        types = _field_types(sections[section])
        if name not in types:
            raise ParseError(f"line {lineno}: unknown key {key!r}")
        section_updates[section][name] = _parse_value(value, types[name], key, lineno)
    cfg = replace(cfg, **top)
    if "seed" in top:
        # master seed flows into sections unless they pin their own
        section_updates["training"].setdefault("seed", top["seed"])
        section_updates["cohort"].setdefault("seed", top["seed"])
    for name in _SECTIONS:
        if section_updates[name]:
            cfg = replace(cfg, **{name: replace(sections[name],
                                                **section_updates[name])})
    cfg.validate()
    return cfg


def run_config_to_text(cfg: RunConfig) -> str:
    """Render every key, master keys first, then sections alphabetically."""
    lines = [f"seed={cfg.seed}", f"n_runs={cfg.n_runs}"]
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in fields(obj):
            lines.append(f"{section}.{f.name}={_render_value(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


# -- result tables ----------------------------------------------------------------

PREDICTION_HEADER = "run,fold,subject_id,record_id,target,prediction_mmHg,reference_mmHg"
HISTORY_HEADER = "epoch,train_loss,val_error,lr"
TRUTH_HEADER = "subject_id,record_id,ref_sbp,ref_dbp,ref_map"


def predictions_to_csv(rows) -> str:
    lines = [PREDICTION_HEADER]
    for r in rows:
        lines.append(f"{r.run},{r.fold},{r.subject_id},{r.record_id},"
                     f"{r.target},{r.prediction!r},{r.reference!r}")
    return "\n".join(lines) + "\n"


def predictions_from_csv(text: str) -> list[PredictionRow]:
    lines = text.splitlines()
    if not lines or lines[0] != PREDICTION_HEADER:
        raise ParseError("line 1: bad or missing prediction header")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 7:
            raise ParseError(f"line {lineno}: expected 7 fields, got {len(parts)}")
        try:
            rows.append(PredictionRow(
                run=int(parts[0]), fold=int(parts[1]), subject_id=parts[2],
                record_id=parts[3], target=parts[4],
                prediction=float(parts[5]), reference=float(parts[6])))
        except ValueError as err:
            raise ParseError(f"line {lineno}: {err}") from None
    return rows


def history_to_csv(history: TrainingHistory) -> str:
    lines = [HISTORY_HEADER]
    for epoch, (loss, err, lr) in enumerate(
            zip(history.train_loss, history.val_error, history.lr), start=1):
        lines.append(f"{epoch},{loss!r},{err!r},{lr!r}")
    return "\n".join(lines) + "\n"


def truth_to_csv(cohort) -> str:
    """Reference labels for a generated cohort, one line per record."""
    lines = [TRUTH_HEADER]
    for record, truth in cohort:
        lines.append(f"{record.subject_id},{record.record_id},"
                     f"{truth.sbp!r},{truth.dbp!r},{truth.map!r}")
    return "\n".join(lines) + "\n"


def truth_from_csv(text: str) -> dict[tuple[str, str], tuple[float, float]]:
    """Map (subject_id, record_id) to (sbp, dbp)."""
    lines = text.splitlines()
    if not lines or lines[0] != TRUTH_HEADER:
        raise ParseError("line 1: bad or missing truth header")
    out = {}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 5:
            raise ParseError(f"line {lineno}: expected 5 fields, got {len(parts)}")
        try:
            out[(parts[0], parts[1])] = (float(parts[2]), float(parts[3]))
        except ValueError as err:
            raise ParseError(f"line {lineno}: {err}") from None
    return out
