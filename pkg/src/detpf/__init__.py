"""Differentiable particle filtering with entropy-regularised optimal transport.

Submodules
----------
autodiff    reverse-mode tape over numpy arrays
ssm         linear-Gaussian state-space models and proposals
kalman      exact Kalman references
ot          Sinkhorn solver, couplings and an exact transport oracle
resampling  multinomial, systematic, soft, exact and differentiable ET
filter      batched particle filter, ELBO and gradient estimators
harness     experiment configuration, runners and the command-line entry point
"""

__version__ = "0.1.0"
