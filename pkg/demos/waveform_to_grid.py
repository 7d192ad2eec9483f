"""Turn one cuff-deflation record into the 2D pressure-by-shape grid.

Shows the intermediate products: detected pulses, outlier flags, and the
grid's split between columns holding real pulses and interpolated gaps.
"""

from pathlib import Path

from oscibp.grid import ORIGINAL, build_grid, grid_to_csv
from oscibp.signal_prep import preprocess_record
from oscibp.synthetic import SyntheticCohortConfig, generate_record

cfg = SyntheticCohortConfig(noise_sd=0.4, artifact_rate=0.1, seed=3)
record, truth = generate_record(cfg, seed=3, subject_id="demo", record_id="r0")

omw, pulses, peaks = preprocess_record(record)
n_out = sum(p.is_outlier for p in pulses)
print(f"record {record.subject_id}/{record.record_id}: "
      f"{len(record.samples)} samples at {record.sampling_rate:g} Hz")
print(f"truth SBP/DBP/MAP: {truth.sbp:.1f}/{truth.dbp:.1f}/{truth.map:.1f} mmHg")
print(f"{len(peaks)} peaks, {len(pulses)} pulses, {n_out} flagged as outliers")

grid = build_grid(pulses, omw.slow_component,
                  subject_id=record.subject_id, record_id=record.record_id)
original = sum(1 for tag in grid.provenance if tag == ORIGINAL)
print(f"grid {grid.values.shape[0]}x{grid.values.shape[1]}: "
      f"{original} original columns, "
      f"{len(grid.provenance) - original} interpolated")
print(f"pressure axis {grid.column_pressure[0]:g}..{grid.column_pressure[-1]:g} mmHg")

out = Path(__file__).with_name("demo_grid.csv")
out.write_text(grid_to_csv(grid))
print(f"wrote {out.name}")
