"""Acceptance suite: each test checks one numbered criterion at its stated tolerance.

Every test records a one-line verdict which is printed as it runs and again in
the pytest terminal summary. Run with ``pytest tests/test_acceptance.py -v -s``.
"""

import time

import numpy as np
import pytest

from conftest import record
from detpf import filter as pf
from detpf import kalman, ot, ssm
from detpf.harness import config as cf
from detpf.harness.cli import main
from detpf.harness.experiments import EXPERIMENTS
from detpf.resampling import ParticleEnsemble, det_resample, exact_et_resample

TABLE1_PF = {0.25: -1.13, 0.5: -0.93, 0.75: -1.05}


def _experiment(name, *overrides):
    fn, defaults = EXPERIMENTS[name]
    t0 = time.perf_counter()
    res = fn(cf.resolve(name, defaults, None, list(overrides)))
    return res, time.perf_counter() - t0


def _rows(rep, **match):
    return rep.where(**match)


def test_criterion_1_table1():
    res, wall = _experiment("table1")
    rep = res.reports[0]
    worst_mean = worst_std = worst_abs = 0.0
    for thr in sorted(set(rep.column("ess_threshold"))):
        for theta, target in TABLE1_PF.items():
            p = _rows(rep, ess_threshold=thr, theta=theta, method="PF")[0]
            worst_abs = max(worst_abs, abs(p["mean"] - target))
            for d in _rows(rep, ess_threshold=thr, theta=theta, method="DPF"):
                worst_mean = max(worst_mean, abs(d["mean"] - p["mean"]))
                worst_std = max(worst_std, abs(d["std"] - p["std"]))
    ok_rel = worst_mean <= 0.05 and worst_std <= 0.05
    ok_abs = worst_abs <= 0.15
    ok_time = wall <= 180
    record(
        1,
        ok_rel and ok_abs and ok_time,
        "max|mean_DPF-mean_PF| %.3f, max|std_DPF-std_PF| %.3f (<= 0.05: %s); max|mean_PF - reference| %.3f (<= 0.15: %s); %.0f s"
        % (worst_mean, worst_std, ok_rel, worst_abs, ok_abs, wall),
    )
    assert ok_rel, "DPF and PF rows differ"
    assert ok_time
    assert ok_abs, "PF means on this dataset are %.2f from the reference values" % worst_abs


def test_criterion_2_gradcheck():
    res, wall = _experiment("gradcheck")
    err = max(res.reports[0].column("max_rel_error"))
    ok = err <= 1e-4 and wall <= 30
    record(2, ok, "max relative error %.2e over %d points (<= 1e-4); %.1f s" % (err, len(res.reports[0].rows), wall))
    assert ok


def test_criterion_3_sinkhorn():
    res, wall = _experiment("sinkhorn-bench")
    rep = res.reports[0]
    resid = max(max(rep.column("row_residual")), max(rep.column("col_residual")))
    dgap = max(np.abs(rep.column("duality_gap")))
    gap = np.array(rep.column("entropic_gap"))
    over = np.max(gap - np.array(rep.column("gap_bound")))
    # the LP oracle and the solver stop at finite tolerance, so a gap of -1e-8 is zero
    ok = resid <= 1e-6 and dgap <= 1e-6 and gap.min() >= -1e-7 and over <= 0 and wall <= 30
    record(
        3,
        ok,
        "marginal residual %.1e, |duality gap| %.1e, entropic gap min %.1e, max(gap - 2 eps log N) %.3f; %.1f s"
        % (resid, dgap, gap.min(), over, wall),
    )
    assert ok


def _unique_lp(x, w, rng):
    N = w.size
    a = np.full(N, 1.0 / N)
    C = ot.squared_distances(x, x)
    P, _ = ot.exact_ot_lp(a, w, C)
    for _ in range(3):
        Q, _ = ot.exact_ot_lp(a, w, C + 1e-7 * rng.random(C.shape))
        if np.max(np.abs(P - Q)) > 1e-9:
            return False
    return True


def test_criterion_4_det_to_et():
    rng = np.random.default_rng(4)
    epsilons = [1.0, 0.5, 0.1, 0.01]
    monotone, worst = True, 0.0
    n = 0
    while n < 20:
        N = int(rng.integers(2, 9))
        x = rng.standard_normal((N, 2))
        w = rng.dirichlet(np.ones(N))
        if not _unique_lp(x, w, rng):
            continue
        n += 1
        ens = ParticleEnsemble(x, np.log(w))
        et = exact_et_resample(ens)[0].positions
        disp = [np.max(np.abs(det_resample(ens, e, tol=1e-10, max_iter=500_000)[0].positions - et)) for e in epsilons]
        spread = np.ptp(x, axis=0).max()
        # displacements below 1e-8 * spread are beneath what a 1e-10 marginal tolerance resolves
        monotone &= all(b <= a + 1e-8 * spread for a, b in zip(disp, disp[1:]))
        worst = max(worst, disp[-1] / spread)
    ok = monotone and worst <= 1e-2
    record(4, ok, "displacement non-increasing in eps: %s; max displacement / spread at eps=0.01: %.2e" % (monotone, worst))
    assert ok


def test_criterion_5_affine_unbiasedness():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        N, d = int(rng.integers(1, 65)), int(rng.integers(1, 4))
        x = rng.standard_normal((N, d)) * rng.uniform(0.1, 5)
        w = rng.dirichlet(np.ones(N) * rng.uniform(0.2, 2))
        A, b = rng.standard_normal((3, d)), rng.standard_normal(3)
        out = det_resample(ParticleEnsemble(x, np.log(w)), float(rng.uniform(0.05, 1.0)))[0].positions
        worst = max(worst, np.max(np.abs((out @ A.T + b).mean(0) - w @ (x @ A.T + b))))
    ok = worst <= 1e-8
    record(5, ok, "max |mean psi(DET) - sum w psi(X)| = %.1e over 100 ensembles" % worst)
    assert ok


def test_criterion_6_bias_demo():
    res, wall = _experiment("biasdemo")
    rep = res.reports[0]
    big = max(rep.column("N"))

    def rows(config, N):
        return _rows(rep, config=config, method="biased_pf", N=N)

    smooth_z = min(abs(r["z_score"]) for r in rows("smoothing", big))
    smooth_strong = max(abs(r["z_score"]) for r in rows("smoothing", big)) > 5
    # "does not shrink": the gap at the largest N is not significantly below the gap at N=512
    stable = True
    for r512, rbig in zip(rows("smoothing", 512), rows("smoothing", big)):
        g512, gbig = abs(r512["mean"] - r512["score"]), abs(rbig["mean"] - rbig["score"])
        stable &= gbig >= g512 - 2 * np.hypot(r512["stderr"], rbig["stderr"])
    iid_z = max(abs(r["z_score"]) for r in rows("near_iid", big))
    ok = smooth_strong and stable and iid_z <= 3 and wall <= 300
    record(
        6,
        ok,
        "smoothing N=%d |z| vs score in [%.1f, %.1f] (> 5), gap not shrinking from 512: %s; near-iid max |z| %.1f (<= 3); %.0f s"
        % (big, smooth_z, max(abs(r["z_score"]) for r in rows("smoothing", big)), stable, iid_z, wall),
    )
    assert ok


def test_criterion_7_proposal_learning():
    res, wall = _experiment("proposal")
    rep = res.reports[0]
    d = {r["dataset"]: r for r in _rows(rep, method="dpf")}
    p = {r["dataset"]: r for r in _rows(rep, method="pf")}
    wins = []
    for m in d:
        if d[m]["diverged"]:
            wins.append(False)
        elif p[m]["diverged"]:
            # a diverged PF run has no finite RMSE or ESS and counts against PF
            wins.append(True)
        else:
            wins.append(d[m]["rmse"] < p[m]["rmse"] and d[m]["ess_fraction"] > p[m]["ess_fraction"])
    frac = float(np.mean(wins))
    spot, spot_wall = _experiment("proposal", "preset=full", "M=1", "methods=dpf,")
    spot_rmse = spot.reports[0].rows[0][3]
    ok = frac >= 0.8 and spot_rmse < 0.2 and wall <= 600
    record(
        7,
        ok,
        "desk: DPF lower RMSE and higher ESS in %.0f%% of %d datasets (>= 80%%), %.0f s; full-scale DPF RMSE %.3f (< 0.2), %.0f s"
        % (100 * frac, len(wins), wall, spot_rmse, spot_wall),
    )
    assert ok


def test_criterion_8_estimators():
    res, wall = _experiment("estimators")
    rep = res.reports[0]
    table = {(r["B"], r["method"]): r["rmse_x1e3"] for r in rep.where()}
    Bs = sorted({b for b, _ in table})
    dpf_better = all(table[(B, "dpf_elbo")] < table[(B, "pf_elbo")] for B in Bs)
    smle = [table[(B, "smle")] for B in Bs]
    decreasing = all(b < a for a, b in zip(smle, smle[1:]))
    cells = "; ".join("B=%d PF %.2f DPF %.2f SMLE %.2f" % (B, table[(B, "pf_elbo")], table[(B, "dpf_elbo")], table[(B, "smle")]) for B in Bs)
    ok = dpf_better and decreasing
    record(8, ok, "1e3*RMSE %s; DPF < PF at every B: %s; SMLE decreasing: %s; %.0f s" % (cells, dpf_better, decreasing, wall))
    assert ok


def test_criterion_9_consistency_trend():
    model = ssm.DiagonalLGModel()
    theta = np.array([0.5, 0.5])
    T = 50
    y = ssm.simulate(model, theta, T, seed=9).observations
    exact = kalman.kalman_loglik(model, theta, y).loglik
    medians = []
    for N in (25, 100, 400):
        eps = 1.0 / np.log(N)
        tr = pf.run_filter(model, theta, None, y, N, "det(%r)" % float(eps), seed=list(range(20)))
        medians.append(float(np.median(np.abs(tr.loglik - exact)) / T))
    ok = medians[0] > medians[1] > medians[2]
    record(9, ok, "median |loglik_eps - loglik| / T at N = 25, 100, 400: %s" % ", ".join("%.4f" % m for m in medians))
    assert ok


SMALL = {
    "table1": ["T=20", "n_seeds=5"],
    "gradcheck": ["n_points=3"],
    "sinkhorn-bench": ["n_instances=5"],
    "biasdemo": ["T=10", "Ns=64,", "n_seeds=8", "dpf_seeds=8"],
    "proposal": ["T=10", "M=2", "steps=3"],
    "estimators": ["T=10", "M=2", "steps=3"],
}


def test_criterion_10_determinism(tmp_path):
    same = {}
    for name, overrides in SMALL.items():
        outs = []
        for k in range(2):
            out = tmp_path / name / str(k)
            args = [name, "--out", str(out), "--seed", "7", "--quiet"]
            for o in overrides:
                args += ["--override", o]
            assert main(args) == 0
            outs.append(sorted((p.name, p.read_bytes()) for p in out.glob("*.csv")))
        same[name] = bool(outs[0]) and outs[0] == outs[1]
    ok = all(same.values())
    record(10, ok, "byte-identical reruns: %s" % ", ".join("%s %s" % (k, "yes" if v else "NO") for k, v in same.items()))
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
