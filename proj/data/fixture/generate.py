"""Regenerates the synthetic fixture: 21 patients x 3 time points x 112 variables.

Responders differ from non-responders on a block of variables, every patient
has an individual offset, and three patients have one grossly deviating time
point. Run from this directory: python3 generate.py
"""
import csv

import numpy as np

rng = np.random.default_rng(20240607)
n_vars = 112
times = ["T0", "T1", "T2"]
patients = [f"P{i:02d}" for i in range(1, 22)]
responder = {p: ("R" if i < 11 else "NR") for i, p in enumerate(patients)}
outliers = {"P04": "T1", "P13": "T2", "P18": "T0"}

baseline = rng.uniform(4.0, 8.0, n_vars)
responder_shift = np.zeros(n_vars)
responder_shift[:20] = 0.6
time_shift = {t: rng.normal(0.0, 0.1, n_vars) for t in times}

rows = []
for p in patients:
    offset = rng.normal(0.0, 0.5, n_vars)
    for t in times:
        x = baseline + offset + time_shift[t] + rng.normal(0.0, 0.5, n_vars)
        if responder[p] == "R":
            x += responder_shift
        if outliers.get(p) == t:
            x += rng.normal(0.0, 6.0, n_vars)
        rows.append((f"{p}_{t}", p, t, np.exp(x / 2.0)))

with open("data.csv", "w", newline="") as f:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["sample"] + [f"V{j:03d}" for j in range(1, n_vars + 1)])
    for sid, _, _, x in rows:
        w.writerow([sid] + [f"{v:.6g}" for v in x])

with open("design.csv", "w", newline="") as f:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["sample", "Responder", "Time", "Patient"])
    for sid, p, t, _ in rows:
        w.writerow([sid, responder[p], t, p])
