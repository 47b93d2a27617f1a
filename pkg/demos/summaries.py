"""Posterior summaries of a fit: principal functions, weights and a saved chain.

Writes the chain in both formats to a temporary directory and reloads it,
which is how the command-line ``summarize`` step consumes a fit.
"""

import tempfile
from pathlib import Path

import numpy as np

from bmef import FitConfig, SimulationConfig, align_components, fit, generate, load_chain, save_chain, weight_summary
from bmef.posterior import principal_function_summary

ds, _ = generate(SimulationConfig(scenario="S3", rank=2, n_subjects=20, T=20, F=20, seed=3))
chain = align_components(fit(ds, FitConfig(burn_in=400, n_draws=200, seed=3)))

time_fn, freq_fn = principal_function_summary(chain)
for r in range(chain.rank):
    peak = np.argmax(np.abs(time_fn.mean[r]))
    print(f"rank {r}: time function peaks at t={ds.time_grid[peak]:.2f}, "
          f"95% band width there {time_fn.upper[r, peak] - time_fn.lower[r, peak]:.3f}")

# intercept only, then each extra covariate switched on
profiles = np.array([[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 0.0, 1.0]])
for row in weight_summary(chain, profiles)[:6]:
    print("condition {condition} profile {profile} rank {rank}: {mean:+.3f} [{lower:+.3f}, {upper:+.3f}]".format(**row))

with tempfile.TemporaryDirectory() as tmp:
    for fmt in ("jsonl", "binary"):
        path = save_chain(chain, Path(tmp) / f"chain.{fmt}", fmt)
        back = load_chain(path)
        same = all(np.array_equal(back.arrays[k], chain.arrays[k]) for k in chain.arrays)
        print(f"{fmt}: {path.stat().st_size} bytes, exact round trip: {same}")
