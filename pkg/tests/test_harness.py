"""Plan execution, exponent/regularity estimators, sweeps, cross-validation."""

import json
import math

import numpy as np
import pytest

from kpzlab.dynamics import estimate_events
from kpzlab.fields import eval_Y
from kpzlab.harness import (
    ExperimentPlan,
    MomentReport,
    bg2_sweep,
    compare_particle_vs_she,
    holder_estimate,
    make_test_function,
    resolve_budget,
    resolve_rates,
    run_plan,
    scaling_exponent,
    white_noise_marginal_test,
)
from kpzlab.lattice import gradient_b, sample_grand_canonical, wasep
from kpzlab.manifest import load_manifest


# -- plumbing -----------------------------------------------------------------


def test_resolve_rates_presets():
    m = resolve_rates("wasep", a=0.5)
    assert m.a == 0.5 and m.c.width <= 1
    g = resolve_rates("gradient-b:0.25", a=1.0)
    assert g.c.width >= 2
    with pytest.raises(ValueError, match="preset"):
        resolve_rates("asep")


def test_resolve_budget_env(monkeypatch):
    assert resolve_budget(None) is None
    assert resolve_budget(1e6) == 1e6
    monkeypatch.setenv("KPZLAB_BUDGET", "5e7")
    assert resolve_budget(1e6) == 5e7
    monkeypatch.setenv("KPZLAB_BUDGET", "lots")
    with pytest.raises(ValueError, match="KPZLAB_BUDGET"):
        resolve_budget(None)


def test_make_test_function_specs():
    G = make_test_function("sine:2", 8, 2)
    assert G.values[0] == pytest.approx(0.0, abs=1e-15)
    B = make_test_function("bump:-0.5:0.5", 8, 4)
    assert B.integral() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError, match="spec"):
        make_test_function("wavelet", 8, 2)


# -- plans --------------------------------------------------------------------


def test_plan_round_trip_and_estimate():
    plan = ExperimentPlan(n_grid=(16, 32), replicas=3, T=0.2, master_seed=4)
    d = plan.to_dict()
    assert ExperimentPlan.from_dict(d) == plan
    with pytest.raises(ValueError, match="unknown plan key"):
        ExperimentPlan.from_dict({"n_gird": (16,)})
    est = plan.estimate()
    assert est == pytest.approx(
        sum(estimate_events(plan.params(n), 0.2, 3) for n in (16, 32)), rel=1e-12)


def test_run_plan_empty_grid():
    res = run_plan(ExperimentPlan(n_grid=(), replicas=2))
    assert res.reports == {} and res.events_total == 0


def test_run_plan_deterministic_and_split_invariant():
    plan = ExperimentPlan(n_grid=(16,), T=0.1, replicas=4, master_seed=7)
    r1 = run_plan(plan)
    r2 = run_plan(plan)
    r3 = run_plan(plan, jobs=3)
    dumps = [json.dumps(r.to_dict(), sort_keys=True) for r in (r1, r2, r3)]
    assert dumps[0] == dumps[1] == dumps[2]
    rep = r1.reports["n=16,G=sine"]
    assert rep.names == ["Y", "theta0", "occ", "nn"]
    assert rep.nreps == 4 and rep.nbatches == 0
    assert np.isnan(rep.ci_half).all()  # CI needs >= 20 replicas


def test_run_plan_budget_refusal():
    plan = ExperimentPlan(n_grid=(64,), T=1.0, replicas=100)
    with pytest.raises(ValueError, match=r"estimated .* events"):
        run_plan(plan, budget=1000)


def test_run_plan_manifest(tmp_path):
    plan = ExperimentPlan(n_grid=(16,), T=0.05, replicas=21, master_seed=1)
    res = run_plan(plan, out=tmp_path)
    doc = load_manifest(tmp_path)
    assert doc["command"] == "run_plan"
    assert doc["master_seed"] == 1
    assert len(doc["replica_seeds"]) == 21
    assert doc["outputs"][0]["path"] == "plan_report.json"
    rep = res.reports["n=16,G=sine"]
    assert rep.nbatches == 20 and np.isfinite(rep.ci_half).all()


# -- scaling exponent ----------------------------------------------------------


def test_scaling_exponent_exact_and_noisy():
    d = np.geomspace(0.01, 0.5, 8)
    fit = scaling_exponent(d, d ** 1.5)
    assert fit.slope == pytest.approx(1.5, abs=1e-9)
    assert fit.stderr < 1e-6 and fit.r2 == pytest.approx(1.0, abs=1e-12)
    rng = np.random.default_rng(0)
    noisy = d ** 1.5 * (1 + 0.1 * rng.normal(size=8))
    fit2 = scaling_exponent(d, noisy, errors=0.1 * d ** 1.5)
    assert fit2.slope == pytest.approx(1.5, abs=0.05)
    flat = scaling_exponent(d, np.full(8, 3.0))
    assert flat.slope == 0.0


def test_scaling_exponent_guards():
    with pytest.raises(ValueError, match="5"):
        scaling_exponent([0.1, 1.0], [1, 2])
    with pytest.raises(ValueError, match="decade"):
        scaling_exponent([1, 2, 3, 4, 5], [1, 2, 3, 4, 5])
    with pytest.raises(ValueError, match="positive"):
        scaling_exponent([0.01, 0.1, 0.3, 0.5, 1.0], [1, 2, -3, 4, 5])


# -- Holder regularity ----------------------------------------------------------


def _ou_paths(rng, reps, N, dt):
    decay = math.exp(-dt)
    s = math.sqrt(1 - decay ** 2)
    ou = np.empty((reps, N))
    ou[:, 0] = rng.normal(size=reps)
    for i in range(1, N):
        ou[:, i] = ou[:, i - 1] * decay + s * rng.normal(size=reps)
    return ou


def test_holder_brownian_and_ou():
    rng = np.random.default_rng(12)
    N, dt = 2 ** 12, 1e-3
    ts = np.arange(N) * dt
    bm = np.cumsum(rng.normal(0, math.sqrt(dt), (16, N)), axis=1)
    gb = [holder_estimate(ts, path).gamma for path in bm]
    assert np.mean(gb) == pytest.approx(0.5, abs=0.05)
    # stationary OU with unit relaxation time: lags well below relaxation
    # see the Brownian exponent
    ou = _ou_paths(rng, 16, N, dt)
    go = [holder_estimate(ts, path).gamma for path in ou]
    assert np.mean(go) == pytest.approx(0.5, abs=0.05)


def test_holder_ou_crossover_window():
    # a window straddling the relaxation time reads an intermediate
    # exponent: this is the regime the particle-field gate probes
    rng = np.random.default_rng(13)
    N, dt = 2 ** 12, 1e-2
    ts = np.arange(N) * dt
    ou = _ou_paths(rng, 16, N, dt)
    gamma = np.mean([holder_estimate(ts, path).gamma for path in ou])
    assert 0.2 < gamma < 0.45


def test_holder_smooth_path_saturates():
    ts = np.arange(2 ** 12) * 1e-3
    h = holder_estimate(ts, np.sin(ts))
    assert h.gamma > 0.95


def test_holder_guards():
    with pytest.raises(ValueError, match="2\\^10"):
        holder_estimate(np.arange(100) * 0.1, np.zeros(100))
    ts = np.arange(2048) * 0.1
    ts[5] += 0.01
    with pytest.raises(ValueError, match="uniform"):
        holder_estimate(ts, np.zeros(2048))


# -- white-noise marginal -------------------------------------------------------


@pytest.fixture(scope="module")
def stationary_samples():
    n, ell, rho, R = 64, 4, 0.5, 600
    Gs = [make_test_function("sine", n, ell),
          make_test_function("sine:2", n, ell),
          make_test_function("bump:-1.5:-0.5", n, ell),
          make_test_function("bump:0.5:1.5", n, ell)]
    rng = np.random.default_rng(3)
    samples = np.empty((R, 4))
    for r in range(R):
        eta = sample_grand_canonical(n * ell, rho, rng)
        samples[r] = [eval_Y(eta, G, rho) for G in Gs]
    return samples, Gs, rho


def test_white_noise_marginal_passes_on_product_measure(stationary_samples):
    samples, Gs, rho = stationary_samples
    rep = white_noise_marginal_test(samples, Gs, rho,
                                    names=["s1", "s2", "bL", "bR"])
    assert rep.passed, (rep.z, rep.normality_p)
    # disjoint supports: exact covariance is literally zero
    assert rep.exact_cov[rep.pair_names.index("bL*bR")] == 0.0
    # diagonal entries match chi <G, G>_n
    i = rep.pair_names.index("s1*s1")
    assert rep.exact_cov[i] == pytest.approx(0.25 * Gs[0].l2sq(), rel=1e-12)


def test_white_noise_marginal_detects_wrong_variance(stationary_samples):
    samples, Gs, rho = stationary_samples
    rep = white_noise_marginal_test(2.0 * samples, Gs, rho)
    assert not rep.passed
    assert np.abs(rep.z).max() > rep.z_crit


# -- second-order Boltzmann-Gibbs sweep ----------------------------------------


def test_bg2_sweep_floor_and_structure():
    plan = ExperimentPlan(n_grid=(32, 64), eps_grid=(1 / 4, 1 / 8, 1 / 16, 1 / 32),
                          T=0.25, replicas=40, ell=2, master_seed=11)
    rep = bg2_sweep(plan)
    skipped = [(r["n"], r["eps"]) for r in rep.rows if r["skipped"]]
    assert (32, 1 / 16) in skipped and (32, 1 / 32) in skipped
    assert (64, 1 / 32) in skipped
    notes = [r["note"] for r in rep.rows if r["skipped"]]
    assert all("floor" in s for s in notes)
    live = [r for r in rep.rows if not r["skipped"]]
    assert len(live) == 5
    assert all(np.isfinite(r["msq"]) and r["msq"] > 0 for r in live)
    assert set(rep.monotone_in_eps) == {32, 64}
    assert np.isfinite(rep.r2)


def test_bg2_sweep_symmetric_dynamics_trivial():
    plan = ExperimentPlan(a=0.0, n_grid=(32,), eps_grid=(1 / 4,), T=0.1,
                          replicas=3, ell=2)
    rep = bg2_sweep(plan)
    assert rep.rows[0]["msq"] == 0.0


def test_bg2_sweep_needs_grid():
    with pytest.raises(ValueError, match="eps grid"):
        bg2_sweep(ExperimentPlan(n_grid=(32,)))


# -- particle vs Cole-Hopf -----------------------------------------------------


def test_compare_refuses_mismatched_coefficients():
    with pytest.raises(ValueError, match="coefficient mismatch"):
        compare_particle_vs_she(gradient_b(1.0), 0.5, n=32, ell=2, replicas=4)
    with pytest.raises(ValueError, match="coefficient mismatch"):
        compare_particle_vs_she(wasep(a=1.0), 0.4, n=32, ell=2, replicas=4)


def test_compare_symmetric_case_matches_closed_form():
    rep = compare_particle_vs_she(wasep(a=0.0), 0.5, n=32, ell=2, replicas=300,
                                  t_list=(0.1,), master_seed=5, eps=0.25)
    assert rep.var_she is None
    assert rep.ou_reference == pytest.approx(0.25, rel=1e-6)  # chi * ||sin||^2
    assert rep.rel_discrepancy[0] < 0.10
    # smoothed field variance at separation 0 is the white-noise value chi/eps
    assert rep.twopoint_particle[0][0] == pytest.approx(1.0, rel=0.2)


def test_compare_matched_weak_asymmetry():
    rep = compare_particle_vs_she(wasep(a=1.0), 0.5, n=32, ell=2, replicas=150,
                                  t_list=(0.25,), master_seed=5, M=64,
                                  she_replicas=800, eps=0.25)
    assert rep.var_she is not None and rep.var_she[0] > 0
    assert np.isfinite(rep.rel_discrepancy).all()
    # both sides see the same initial white-noise law, so even at n=32 the
    # variances sit within a loose factor
    assert rep.rel_discrepancy[0] < 0.5
    assert rep.twopoint_r[0] == 0.0
