"""Train every estimator side by side on one problem and compare final metrics.

All runs share the zero initialisation and the minibatch sequence. Ranking,
NCE, negative sampling and BlackOut get their own learning rates from a
short pilot search because their gradients have a different scale.
"""
from manyclass.estimators import METHODS
from manyclass.experiments import MethodSpec, generate_synthetic, run_comparison, search_learning_rate
from manyclass.trainer import TrainerConfig

prob = generate_synthetic(N=600, D=20, C=200, seed=2)
cfg = TrainerConfig(learning_rate=0.002, momentum=0.99, minibatch_size=50, iterations=600)
specs = []
for m in METHODS:
    spec = MethodSpec.of(m, K=20)
    if m in ("ranking", "nce", "negative-sampling", "blackout"):
        spec.learning_rate = search_learning_rate(prob, spec, cfg, pilot_iterations=100)
    specs.append(spec)
comp = run_comparison(prob, specs, cfg)
print(f"{'method':>20} {'lr':>8} {'final LL':>10} {'bias':>8} {'param diff':>10} {'ops/step':>9}")
for tag, trace in comp.traces.items():
    r = trace.records[-1]
    print(f"{tag:>20} {trace.learning_rate:8.4g} {r['exact_ll']:10.2f} {r['bias']:8.3f} "
          f"{r['param_diff']:10.3f} {r['op_count'] / cfg.iterations:9.1f}")
