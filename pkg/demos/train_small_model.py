"""Train a scaled-down regressor on one leave-one-subject-out fold.

Uses a 12-subject cohort and a reduced architecture so the run finishes in
about half a minute; prints the learning-rate schedule, the held-out
predictions, and how they compare with a predict-the-training-mean
baseline. Subject-independent estimation on a cohort this small is noisy,
so expect fold-to-fold swings.
"""

import numpy as np

from oscibp.grid import build_grid
from oscibp.model import ModelConfig, init
from oscibp.signal_prep import preprocess_record
from oscibp.synthetic import SyntheticCohortConfig, generate_cohort
from oscibp.trainer import LabeledGrid, TrainingConfig, fit, loso_folds

cohort = SyntheticCohortConfig(n_subjects=12, records_per_subject=3,
                               sbp_range=(100.0, 180.0), dbp_range=(55.0, 95.0),
                               noise_sd=0.3, seed=42)
dataset = []
for record, truth in generate_cohort(cohort):
    omw, pulses, _ = preprocess_record(record)
    g = build_grid(pulses, omw.slow_component,
                   subject_id=record.subject_id, record_id=record.record_id)
    dataset.append(LabeledGrid(record.subject_id, record.record_id,
                               g.values, truth.sbp, truth.dbp))

mc = ModelConfig(n_kernels=4, kernel_width=31, lstm_layers=2, lstm_hidden=4,
                 dense_widths=(64, 16))
tc = TrainingConfig(target="SBP", optimizer="adam", initial_lr=0.01,
                    lr_patience=40, early_stop_patience=80, max_epochs=200,
                    seed=42)

fold = loso_folds(dataset, seed=42)[0]
model = init(mc, seed=fold.fold_id)
history = fit(model, fold, dataset, tc)

print(f"held out {fold.test_subject}; trained on {len(fold.train_records)} "
      f"records, validated on {len(fold.validation_records)}")
print(f"stopped after epoch {history.stopped_epoch}, "
      f"best validation at epoch {history.best_epoch} "
      f"(val MSE {min(history.val_error):.1f})")
rates = sorted(set(history.lr), reverse=True)
print("learning rates used:", ", ".join(f"{r:g}" for r in rates))

train_keys = set(fold.train_records)
train_mean = float(np.mean([g.label("SBP") for g in dataset
                            if g.key() in train_keys]))
test = [g for g in dataset if g.subject_id == fold.test_subject]
preds = model.predict_batch(np.stack([g.values for g in test]))
print(f"\ntraining-mean baseline would predict {train_mean:.1f} mmHg")
for g, p in zip(test, preds):
    print(f"  {g.subject_id}/{g.record_id}: predicted {p:6.1f}, "
          f"reference {g.label('SBP'):6.1f} mmHg")
mae = float(np.mean([abs(p - g.label("SBP")) for p, g in zip(preds, test)]))
bmae = float(np.mean([abs(train_mean - g.label("SBP")) for g in test]))
print(f"fold MAE {mae:.1f} mmHg vs baseline {bmae:.1f} mmHg")
