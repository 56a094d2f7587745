"""Why ignoring the resampling step biases ELBO gradients.

The common estimator drops the dependence of the resampled ancestors on the
parameter. Its expectation then converges, as N grows, to a sum of filtered
expectations rather than to the score (a sum of smoothed expectations). The
two coincide only when the states carry no information forward. This script
compares both regimes against exact Kalman quantities.
"""

import numpy as np

from detpf import filter as pf
from detpf import kalman, ssm

for name, theta_c, obs_var in [("near independent states", 0.0, 0.5), ("strong smoothing", 0.9, 0.1)]:
    model = ssm.DiagonalLGModel(observation_var=obs_var)
    theta = np.array([theta_c, theta_c])
    y = ssm.simulate(model, [0.5, 0.5], 50, seed=2).observations
    lg = model.linear_gaussian(theta)
    score = kalman.diagonal_transition_score(kalman.smoothed_pair_moments(lg, y), theta, model.transition_var)
    limit = kalman.diagonal_transition_score(kalman.filtered_pair_moments(lg, y), theta, model.transition_var)
    print("%s: exact score %s, large-N limit of the biased estimator %s" % (name, np.round(score, 2), np.round(limit, 2)))
    for N in (64, 1024):
        g = pf.biased_elbo_gradient(model, theta, None, y, N, list(range(64))).theta
        se = g.std(0, ddof=1) / np.sqrt(len(g))
        print("  N=%-4d mean %s +- %s   |z| vs score %s" % (N, np.round(g.mean(0), 2), np.round(se, 2), np.round(np.abs(g.mean(0) - score) / se, 1)))
