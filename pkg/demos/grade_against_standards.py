"""Grade a set of measurement errors against BHS and AAMI standards."""

import numpy as np

from oscibp.evaluation import (EvaluationReport, aami_check, bhs_grade,
                               bland_altman, error_stats, format_report)

rng = np.random.default_rng(5)

# two synthetic devices: one tight, one biased and noisy
devices = {
    "SBP": rng.normal(0.4, 3.0, size=120),
    "DBP": rng.normal(-4.0, 9.0, size=120),
}

reports = {}
for target, errors in devices.items():
    me, mae, sde = error_stats(errors)
    pcts, grade = bhs_grade(errors)
    reports[target] = EvaluationReport(
        target=target, me=me, mae=mae, sde=sde,
        pct_within_5=pcts[0], pct_within_10=pcts[1], pct_within_15=pcts[2],
        bhs_grade=grade, aami_pass=aami_check(me, sde),
        n=len(errors), runs_averaged=1)

print(format_report(reports))

reference = rng.uniform(80, 180, size=120)
ba = bland_altman(reference + devices["SBP"], reference)
print(f"SBP Bland-Altman: bias {ba.bias:.2f} mmHg, "
      f"limits [{ba.lower_limit:.2f}, {ba.upper_limit:.2f}]")
