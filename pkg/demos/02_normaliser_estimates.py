"""Estimate a normaliser Z = sum(z) by importance and Bernoulli sampling.

Both estimators are unbiased. At equal expected cost (S draws against an
inclusion probability f = S/C) their variances differ by at most a factor
1 - f, and the Bernoulli sampler wins only when a few terms dominate Z.
"""
from manyclass.experiments import run_variance_study

print(f"{'profile':>9} {'f':>5} {'estimator':>10} {'Z':>9} {'mean':>9} {'emp var':>11} {'closed var':>11}")
for profile in ("sparse", "lognormal"):
    for f in (0.05, 0.25, 1.0):
        for r in run_variance_study(C=1000, f=f, trials=20_000, seed=0, profile=profile):
            print(f"{profile:>9} {f:5.2f} {r['estimator']:>10} {r['exact_Z']:9.3f} "
                  f"{r['empirical_mean']:9.3f} {r['empirical_variance']:11.4g} "
                  f"{r['closed_form_variance']:11.4g}")
