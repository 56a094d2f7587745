"""Resampling a weighted 2-D ensemble four ways.

Multinomial and systematic resampling copy particles, so the output depends on
the random draw and is piecewise constant in the weights. The ensemble
transform moves every particle to a weighted average of the inputs instead.
With the exact optimal plan (ET) the map is deterministic but still not smooth;
the entropic plan (DET) trades a little spread for differentiability, and all
transforms reproduce the weighted mean exactly.
"""

import numpy as np

from detpf import autodiff as ad
from detpf.resampling import ParticleEnsemble, det_resample, exact_et_resample, multinomial_resample, systematic_resample

rng = np.random.default_rng(0)
N = 8
x = rng.standard_normal((N, 2))
w = rng.dirichlet(np.ones(N))
ens = ParticleEnsemble(x, np.log(w))
target_mean = w @ x
print("weighted mean          ", np.round(target_mean, 4))

for name, fn in [("multinomial", multinomial_resample), ("systematic", systematic_resample)]:
    out, info = fn(ens, np.random.default_rng(1))
    print("%-22s mean %s  distinct particles %d" % (name, np.round(out.positions.mean(0), 4), len(set(info.ancestors))))

et = exact_et_resample(ens)[0].positions
print("%-22s mean %s" % ("exact ET", np.round(et.mean(0), 4)))

print("\nDET: distance to exact ET and spread as epsilon shrinks")
for eps in [2.0, 1.0, 0.5, 0.1, 0.01]:
    out, info = det_resample(ens, eps, tol=1e-10, max_iter=200_000)
    p = out.positions
    print(
        "  eps=%-5g mean %s  max |DET - ET| %.4f  mean spread %.3f  sinkhorn iterations %d"
        % (eps, np.round(p.mean(0), 4), np.max(np.abs(p - et)), p.std(0).mean(), int(info.sinkhorn_iterations))
    )
print("  input spread %.3f" % x.std(0).mean())


# DET output is a smooth function of the log-weights, so gradients exist
def first_particle(lw):
    out, _ = det_resample(ParticleEnsemble(x, lw), 0.5, tol=1e-11)
    return ad.sum(out.positions[0])


lw0 = np.log(w)
err = ad.finite_diff_check(first_particle, lw0, h=1e-6)
print("\nd(first DET particle)/d(log w): relative error vs finite differences %.1e" % err)
