# coding: utf-8

# # Stationarity against the number of rounds
#
# With step size 1/(K sqrt(T)) the time-averaged squared gradient norm at
# the averaged adapters should fall roughly like 1/sqrt(T).

import numpy as np

from declora.harness import run_point, validate_config
from declora.metrics import rate_slope

Ts = [8, 16, 32, 64]
avg = []
for T in Ts:
    cfg = validate_config({"train": {"n": 8, "T": T, "K": 2, "eta": "auto", "sigma_init": 1.0}})
    vals = []
    for seed in range(3):
        res, _ = run_point(cfg, seed)
        vals.append(np.mean([rec.stat_metric for rec in res.records[:-1]]))
    avg.append(float(np.mean(vals)))
    print(f"T={T:3d}  eta={cfg.train.resolved_eta:.4f}  mean stationarity={avg[-1]:.4f}")

print("log-log slope:", round(rate_slope(zip(Ts, avg)), 3))
