# coding: utf-8

# # Label skew and a low-bit base model
#
# Smaller Dirichlet alpha gives each client fewer classes.  Quantizing W0
# to a few bits adds a fixed error the adapters can partly absorb.

import numpy as np

from declora.data import label_distribution_tv
from declora.harness import build_task, run_point, validate_config

for alpha in (100.0, 1.0, 0.1):
    cfg = validate_config({"train": {"n": 10, "T": 20}, "data": {"partition": {"scheme": "dirichlet", "alpha": alpha}}})
    res, task = run_point(cfg, 0)
    tv = label_distribution_tv(task.ds, task.partition).mean()
    print(f"alpha={alpha:6.1f}  mean TV={tv:.3f}  final loss={res.final.train_loss:.4f}")

# ## Base weights at 8, 4 and 2 bits

for bits in (None, 8, 4, 2):
    cfg = validate_config({"train": {"n": 10, "T": 20, "quant_bits": bits}})
    losses = [run_point(cfg, s)[0].final.train_loss for s in range(3)]
    print(f"bits={str(bits):4s} mean final loss over 3 seeds = {np.mean(losses):.4f}")
