"""One uniformly drawn negative turns the sampled likelihood into a ranking loss.

With the explicit set holding only the true class and a single negative drawn
uniformly from the other C - 1 classes, the weight on the negative is C - 1,
and the gradient equals that of the pairwise ranking objective with margin
ln(C - 1).
"""
import math

import numpy as np

from manyclass.estimators import Estimator, EstimatorConfig, gradient_ranking
from manyclass.model import Dataset
from manyclass.samplers import build_frequency_table

rng = np.random.default_rng(3)
C, D, N = 50, 4, 8
W = rng.standard_normal((C, D))
data = Dataset(rng.standard_normal((N, D)), rng.integers(0, C, N), C)
est = Estimator(EstimatorConfig("sampled-importance", K=1, importance_power=0.0),
                build_frequency_table(data.labels, C))
draw = est.draw(data, rng)
g_sampled = est.gradient(W, data, draw).to_dense(C)
g_ranking = gradient_ranking(W, data, draw.negatives, math.log(C - 1)).to_dense(C)
print("negative weights:", np.unique(draw.negatives.kappa))
print("max |difference| between the two gradients:", np.abs(g_sampled - g_ranking).max())
