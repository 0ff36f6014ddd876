"""A small federated run: adaptive lattices vs a fixed hexagonal codec.

Five clients with non-iid class windows train a linear classifier on a
synthetic 10-class corpus; updates cross the wire as lattice indices plus a
tiny (generator, scale) metadata block.

Run:  python3 demos/federated_run.py
"""

import warnings

import numpy as np

from olala.config import ExperimentConfig
from olala.fl import bits_accounting, run_fl

warnings.filterwarnings("ignore", category=UserWarning)

base = dict(
    rounds=15,
    local_steps=100,
    model_lr=0.05,
    synthetic_train_size=2000,
    synthetic_test_size=1000,
    rate=2.0,
    lattice_lr=2e-4,
    lattice_epochs=8,
    overload_mode="heuristic_minus1",
    master_seed=0,
)

for quantizer in ("none", "fixed_hex", "olala"):
    res = run_fl(ExperimentConfig(quantizer=quantizer, **base))
    accs = [r.accuracy for r in res.records]
    last = res.records[-1]
    print(f"{quantizer:10s} acc by round: "
          + " ".join(f"{a:.2f}" for a in accs[::3])
          + f"  final {accs[-1]:.3f}  bits/round {last.total_bits}")

m = ExperimentConfig(**base).arch().n_params
print(f"\nuplink per client per round at R=2, L=2: "
      f"{bits_accounting(m, 2.0, 2)} bits vs {64 * m} uncompressed "
      f"({64 * m / bits_accounting(m, 2.0, 2):.1f}x smaller)")
