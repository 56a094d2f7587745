"""Learning a proposal by stochastic gradient ascent on the DPF log-likelihood.

The model is a five-dimensional linear Gaussian state with one observed
coordinate. The proposal family contains the locally optimal proposal at
phi = 1. Starting from phi = 1.5, gradients of the DET filter averaged over
four independent filters move phi towards 1 and raise the effective sample
size along the way.
"""

import numpy as np

from detpf import filter as pf
from detpf import ssm

model = ssm.ProposalLGModel(d_x=5, d_y=1)
y = ssm.simulate(model, None, 50, seed=4).observations
phi = np.full(model.d_phi, 1.5)
lr, n_filters, N = 0.02, 4, 25

for step in range(61):
    seeds = [1000 * step + j for j in range(n_filters)]
    res = pf.dpf_gradient(model, None, np.tile(phi, (n_filters, 1)), np.repeat(y[None], n_filters, 0), N, seeds)
    if step % 10 == 0:
        ess = (res.trace.ess / N).mean()
        print("step %3d  RMSE(phi - 1) %.3f  ESS fraction %.2f" % (step, np.sqrt(np.mean((phi - 1) ** 2)), ess))
    phi = np.maximum(phi + lr * res.phi.mean(0), 1e-3)
