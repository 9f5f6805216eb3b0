"""Fit softmax regression on a small realisable problem with the exact gradient.

Labels are drawn from a known model, so the fitted probabilities can be
compared with the truth as training proceeds.
"""
import numpy as np

from manyclass.estimators import Estimator, EstimatorConfig
from manyclass.experiments import bias_metric, generate_synthetic
from manyclass.model import log_likelihood
from manyclass.samplers import build_frequency_table
from manyclass.trainer import TrainerConfig, train

prob = generate_synthetic(N=500, D=10, C=20, seed=0)
data = prob.data
est = Estimator(EstimatorConfig("exact"), build_frequency_table(data.labels, data.C))
cfg = TrainerConfig(learning_rate=0.005, momentum=0.9, minibatch_size=50, iterations=300,
                    eval_every=50)


def metrics(it, W, ops):
    return {"ll": log_likelihood(W, data), "bias": bias_metric(W, prob.true_params, data.inputs)}


trace = train(data, np.zeros((data.C, data.D)), est, cfg, [metrics])
print(f"{'iter':>5} {'log-lik':>10} {'bias':>8} {'ops':>8}")
for r in trace.records:
    print(f"{r['iteration']:5d} {r['ll']:10.2f} {r['bias']:8.3f} {r['op_count']:8d}")
print(f"true-model log-likelihood: {log_likelihood(prob.true_params, data):.2f}")
