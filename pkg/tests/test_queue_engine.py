import math

import numpy as np
import pytest
from scipy import stats

from qedsim import policies as pol
from qedsim import queue_engine as qe
from qedsim.errors import ValidationError
from qedsim.params import SystemParams, validate_halfin_whitt
from qedsim.renewal import DowntimeDist, RenewalDist


def mm5m_params():
    """M/M/5+M with arrival rate 4 and unit service/abandonment rates."""
    return SystemParams.build(
        n=5, lam_n=[4.0], mu_n=[1.0], gam_n=[1.0],
        lam=[1.0], mu=[1.0], gam=[1.0])


def birth_death_stationary(lam, n, mu, gam, kmax):
    """Balance-equation solution of the single-class M/M/n+M chain."""
    w = np.zeros(kmax + 1)
    w[0] = 1.0
    for k in range(1, kmax + 1):
        death = mu * min(k, n) + gam * max(k - n, 0)
        w[k] = w[k - 1] * lam / death
    return w / w.sum()


# --------------------------------------------------------------------- #
# construction
# --------------------------------------------------------------------- #

def test_build_system_single_class():
    st = qe.build_system(mm5m_params(), [4], pol.work_conserving_policy())
    assert st.X[0] == 4 and st.Z[0] == 4 and st.Q[0] == 0
    assert st.psi == 1 and st.K == 0.0 and np.all(st.H == 0.0)


def test_build_system_static_priority():
    params = SystemParams.halfin_whitt(
        n=5, lam=[0.5, 0.5], mu=[1.0, 1.0], gam=[0.5, 0.5])
    st = qe.build_system(params, [3, 4], pol.static_priority_policy([0, 1]))
    assert np.array_equal(st.Z, [3, 2]) and np.array_equal(st.Q, [0, 2])


def test_build_system_rejects_noncritical_load():
    with pytest.raises(ValidationError):
        SystemParams.halfin_whitt(
            n=10, lam=[0.45, 0.45], mu=[1.0, 1.0], gam=[0.5, 0.5])


def test_negative_x0_rejected():
    with pytest.raises(ValidationError):
        qe.build_system(mm5m_params(), [-1])


# --------------------------------------------------------------------- #
# stepping
# --------------------------------------------------------------------- #

def test_step_empty_system_only_env_events():
    params = SystemParams.build(
        n=5, lam_n=[1e-12], mu_n=[1.0], gam_n=[1.0],
        lam=[1.0], mu=[1.0], gam=[1.0],
        beta_u_n=2.0, downtime=DowntimeDist(RenewalDist.exponential(), 4.0),
        beta=2.0, vartheta=4.0 / math.sqrt(5))
    policy = pol.work_conserving_policy()
    st = qe.build_system(params, [0], policy)
    rng = np.random.default_rng(0)
    kinds = set()
    for _ in range(50):
        ev = qe.step(st, policy, rng)
        kinds.add(ev.kind)
    assert kinds <= {"env_down", "env_up"}


def test_step_no_events_returns_none():
    params = SystemParams.build(
        n=5, lam_n=[0.0], mu_n=[1.0], gam_n=[1.0],
        lam=[1.0], mu=[1.0], gam=[1.0])
    policy = pol.work_conserving_policy()
    st = qe.build_system(params, [0], policy)
    assert qe.step(st, policy, np.random.default_rng(0)) is None


def test_age_processes_regenerate():
    params = SystemParams.build(
        n=3, lam_n=[2.0], mu_n=[1.0], gam_n=[1.0],
        lam=[1.0], mu=[1.0], gam=[1.0],
        beta_u_n=1.0, downtime=DowntimeDist(RenewalDist.erlang(2), 2.0),
        beta=1.0, vartheta=2.0 / math.sqrt(3),
        arrival=[RenewalDist.erlang(2)])
    policy = pol.work_conserving_policy()
    st = qe.build_system(params, [1], policy)
    rng = np.random.default_rng(5)
    seen_down = False
    for _ in range(2000):
        ev = qe.step(st, policy, rng)
        if ev.kind == "arrival":
            assert st.H[ev.cls] == 0.0
        if ev.kind == "env_up":
            assert st.K == 0.0 and st.psi == 1
        if ev.kind == "env_down":
            seen_down = True
            assert st.psi == 0 and st.R > 0.0
    assert seen_down


# --------------------------------------------------------------------- #
# runs and oracles
# --------------------------------------------------------------------- #

def test_run_horizon_zero():
    params = mm5m_params()
    policy = pol.work_conserving_policy()
    st = qe.build_system(params, [4], policy)
    stats_ = qe.run(st, policy, 0.0, np.random.default_rng(1))
    assert stats_.raw["n_events"] == 0
    assert np.array_equal(stats_.raw["X"], [4])


def test_run_no_arrivals_stays_empty():
    params = SystemParams.build(
        n=5, lam_n=[0.0], mu_n=[1.0], gam_n=[1.0],
        lam=[1.0], mu=[1.0], gam=[1.0])
    policy = pol.work_conserving_policy()
    st = qe.build_system(params, [0], policy)
    stats_ = qe.run(st, policy, 100.0, np.random.default_rng(2), n_batches=4)
    assert stats_.raw["n_events"] == 0
    assert stats_.time_avg_X()[0] == 0.0


def test_mm5m_time_average_matches_poisson_mean():
    params = mm5m_params()
    policy = pol.work_conserving_policy()
    st = qe.build_system(params, [4], policy)
    stats_ = qe.run(st, policy, 10_000.0, np.random.default_rng(3),
                    burn_in=1_000.0, n_batches=20)
    assert abs(stats_.time_avg_X()[0] - 4.0) < 0.04


def test_mm5m_stationary_law_close_to_birth_death_solution():
    params = mm5m_params()
    policy = pol.work_conserving_policy()
    st = qe.build_system(params, [4], policy)
    stats_ = qe.run(st, policy, 30_000.0, np.random.default_rng(4),
                    burn_in=2_000.0, n_batches=20, hist_max=60)
    emp = stats_.occupancy()[:21]
    bd = birth_death_stationary(4.0, 5, 1.0, 1.0, 60)[:21]
    tv = 0.5 * np.abs(emp - bd).sum()
    assert tv <= 0.05
    # mu = gam makes the chain an M/M/inf in disguise: Poisson(4) law
    pois = np.array([math.exp(-4.0) * 4.0**k / math.factorial(k) for k in range(21)])
    assert 0.5 * np.abs(emp - pois).sum() <= 0.05


def test_frozen_service_during_down_periods():
    params = SystemParams.build(
        n=4, lam_n=[3.0], mu_n=[1.0], gam_n=[0.5],
        lam=[1.0], mu=[1.0], gam=[0.5],
        beta_u_n=1.0, downtime=DowntimeDist(RenewalDist.exponential(), 1.0),
        beta=1.0, vartheta=0.5)
    policy = pol.work_conserving_policy()
    st = qe.build_system(params, [4], policy)
    stats_ = qe.run(st, policy, 500.0, np.random.default_rng(6),
                    record_events=True, max_records=10**6)
    kinds = stats_.raw["ev_kind"]
    psis = stats_.raw["ev_psi"]
    d = params.d
    service = (kinds >= 2 + d) & (kinds < 2 + 2 * d)
    # services must occur while the environment was up (previous state)
    prev_psi = np.concatenate([[1], psis[:-1]])
    assert not np.any(service & (prev_psi == 0))
    # sanity: downtime actually happened and suppressed work
    assert stats_.raw["count_env"][0] > 20
    assert stats_.raw["cum_down"] > 0.0


def test_work_conservation_along_trajectory():
    params = SystemParams.halfin_whitt(
        n=10, lam=[0.5, 0.5], mu=[1.0, 1.0], gam=[0.3, 0.6])
    policy = pol.static_priority_policy([1, 0])
    st = qe.build_system(params, [8, 8], policy)
    stats_ = qe.run(st, policy, 200.0, np.random.default_rng(7),
                    record_events=True)
    X, Q = stats_.raw["ev_X"], stats_.raw["ev_Q"]
    Z = X - Q
    assert (Z.sum(axis=1) == np.minimum(X.sum(axis=1), 10)).all()
    assert (Q >= 0).all() and (Z >= 0).all()


def test_environment_alternation_laws():
    beta_u, theta = 2.0, 4.0
    params = SystemParams.build(
        n=5, lam_n=[1e-12], mu_n=[1.0], gam_n=[1.0],
        lam=[1.0], mu=[1.0], gam=[1.0],
        beta_u_n=beta_u, downtime=DowntimeDist(RenewalDist.erlang(2), theta),
        beta=beta_u, vartheta=theta / math.sqrt(5))
    policy = pol.work_conserving_policy()
    st = qe.build_system(params, [0], policy)
    stats_ = qe.run(st, policy, 10_000.0, np.random.default_rng(8),
                    record_events=True, max_records=10**6)
    t = stats_.raw["ev_t"][1:]
    kinds = stats_.raw["ev_kind"][1:]
    downs = t[kinds == 0]
    ups = t[kinds == 1]
    m = min(len(downs), len(ups))
    assert m > 5000
    up_durs = np.diff(np.sort(np.concatenate([[0.0], ups])))[: m - 1]
    # up durations between an up-switch and the next down-switch
    up_durs = downs[1:m] - ups[: m - 1]
    down_durs = ups[:m] - downs[:m]
    ks_up = stats.kstest(up_durs, lambda x: 1.0 - np.exp(-beta_u * x)).statistic
    erl = RenewalDist.erlang(2)
    ks_down = stats.kstest(down_durs,
                           lambda x: np.vectorize(erl.cdf)(x * theta)).statistic
    assert ks_up <= 0.02
    assert ks_down <= 0.02


# --------------------------------------------------------------------- #
# scaling transforms
# --------------------------------------------------------------------- #

def test_diffusion_scale_examples():
    params = SystemParams.halfin_whitt(
        n=100, lam=[0.5, 0.5], mu=[1.0, 1.0], gam=[0.5, 0.5])
    assert np.allclose(qe.diffusion_scale(params, [50, 50]), [0.0, 0.0])
    assert np.allclose(qe.diffusion_scale(params, [60, 40]), [1.0, -1.0])
    x = np.array([57, 48])
    assert np.allclose(qe.diffusion_unscale(params, qe.diffusion_scale(params, x)), x)


def test_residual_augmented_values():
    params = SystemParams.halfin_whitt(
        n=100, lam=[0.5, 0.5], mu=[1.0, 1.0], gam=[0.5, 0.5])
    x = np.array([50, 50])
    assert np.allclose(qe.residual_augmented(params, x, 0.0), x)
    out = qe.residual_augmented(params, x, 0.02)
    assert np.allclose(out, [51.0, 51.0])


def test_residual_augmented_scaled_gap_shrinks_with_n():
    def gap(n, seed):
        params = SystemParams.halfin_whitt(
            n=n, lam=[1.0], mu=[1.0], gam=[1.0], beta=1.0, vartheta=1.0,
            downtime_base=RenewalDist.exponential())
        policy = pol.work_conserving_policy()
        st = qe.build_system(params, [n], policy)
        epochs = np.linspace(50.0, 2000.0, 1500)
        stats_ = qe.run(st, policy, 2000.0, np.random.default_rng(seed),
                        snap_times=epochs)
        r = stats_.raw["snap_R"]
        # scaled augmentation gap per class: sqrt(n) mu rho R
        return math.sqrt(n) * float(params.mu_n[0] * params.rho[0] * r.mean())

    g100 = gap(100, 9)
    g400 = gap(400, 10)
    assert g400 < 0.8 * g100     # should shrink roughly like 1/sqrt(n)


def test_downtime_scaled_zero_without_env():
    params = mm5m_params()
    policy = pol.work_conserving_policy()
    st = qe.build_system(params, [4], policy)
    stats_ = qe.run(st, policy, 50.0, np.random.default_rng(11),
                    snap_times=np.arange(0.0, 51.0, 10.0))
    path = qe.downtime_scaled(params, stats_)
    assert np.all(path == 0.0)


def test_downtime_scaled_compound_poisson_moments():
    # increments of sqrt(n) C_d over unit windows: mean beta E[d1]/theta,
    # variance beta E[d1^2]/theta^2 per unit time
    n, beta, theta = 2500, 1.0, 1.0
    params = SystemParams.build(
        n=n, lam_n=[1.0], mu_n=[1.0], gam_n=[1.0],
        lam=[1.0], mu=[1.0], gam=[1.0],
        beta_u_n=beta, downtime=DowntimeDist(RenewalDist.exponential(),
                                             theta * math.sqrt(n)),
        beta=beta, vartheta=theta)
    policy = pol.work_conserving_policy()
    incs = []
    for rep in range(40):
        st = qe.build_system(params, [0], policy)
        stats_ = qe.run(st, policy, 50.0, np.random.default_rng(100 + rep),
                        snap_times=np.arange(0.0, 51.0, 1.0))
        path = qe.downtime_scaled(params, stats_)
        incs.append(np.diff(path))
    incs = np.concatenate(incs)
    assert abs(incs.mean() - beta / theta) < 0.10 * beta / theta
    assert abs(incs.var() - 2.0 * beta / theta**2) < 0.15 * 2.0 * beta / theta**2


# --------------------------------------------------------------------- #
# regime diagnostics
# --------------------------------------------------------------------- #

def test_validate_halfin_whitt_accepts_proper_family():
    seq = [SystemParams.halfin_whitt(n, lam=[1.0], mu=[1.0], gam=[1.0],
                                     lam_hat=[0.5], beta=1.0, vartheta=1.0,
                                     downtime_base=RenewalDist.exponential())
           for n in (100, 400, 1600, 6400)]
    report = validate_halfin_whitt(seq)
    assert report.ok
    assert all(abs(r.theta_ratio - 1.0) < 1e-12 for r in report.rows)


def test_validate_halfin_whitt_flags_constant_rate():
    seq = [SystemParams.build(n=n, lam_n=[5.0], mu_n=[1.0], gam_n=[1.0],
                              lam=[1.0], mu=[1.0], gam=[1.0])
           for n in (100, 400, 1600, 6400)]
    report = validate_halfin_whitt(seq)
    assert not report.ok
    assert any("critically" in f for f in report.flags)


def test_run_requires_fresh_state():
    params = mm5m_params()
    policy = pol.work_conserving_policy()
    st = qe.build_system(params, [4], policy)
    qe.step(st, policy, np.random.default_rng(0))
    with pytest.raises(ValidationError):
        qe.run(st, policy, 10.0, np.random.default_rng(0))
