"""Compare the full model with its random-effect ablations by WAIC.

Data are generated with both subject-level and subject-by-condition
random effects, so dropping either level should cost predictive accuracy.
"""

from bmef import FitConfig, SimulationConfig, fit, generate, waic

ds, _ = generate(SimulationConfig(n_subjects=20, T=20, F=20, seed=7))

scores = {}
for spec in ("ABC", "AB", "A"):
    chain = fit(ds, FitConfig(model_spec=spec, burn_in=400, n_draws=200, seed=7))
    scores[spec] = waic(chain, ds)
    print(f"{spec:>3}: WAIC {scores[spec]:12.1f}  rank {chain.rank}")

best = min(scores, key=scores.get)
print("lowest WAIC:", best)
