"""The compiled and pure-Python kernel lanes must produce bit-identical
output for the same Generator seed."""

import numpy as np
import pytest

from qedsim import policies as pol
from qedsim import queue_engine as qe
from qedsim._kernels import backends
from qedsim.diffusion import (
    DiffusionModel,
    JumpMeasure,
    build_diffusion_plan,
)
from qedsim.params import SystemParams
from qedsim.renewal import RenewalDist

pytestmark = pytest.mark.skipif(
    "c" not in backends(), reason="compiled kernel lane not built")


def _assert_same(a, b):
    assert set(a) == set(b)
    for key in a:
        va, vb = a[key], b[key]
        if isinstance(va, np.ndarray) or isinstance(vb, np.ndarray):
            assert np.array_equal(np.asarray(va), np.asarray(vb)), key
        else:
            assert va == vb, (key, va, vb)


def _run_both(plan, runner, seed):
    out = []
    for mod in backends().values():
        rng = np.random.default_rng(seed)
        out.append(getattr(mod, runner)(plan, rng))
    return out


QUEUE_CASES = {
    "d1_mmn": dict(
        params=lambda: SystemParams.halfin_whitt(
            n=20, lam=[1.0], mu=[1.0], gam=[0.5]),
        policy=pol.work_conserving_policy(), x0=[25]),
    "d2_static_env": dict(
        params=lambda: SystemParams.halfin_whitt(
            n=30, lam=[0.4, 0.6], mu=[1.0, 2.0], gam=[0.2, 0.7],
            arrival=[RenewalDist.erlang(3), RenewalDist.hyperexponential_scv(2.0)],
            beta=0.8, vartheta=1.0, downtime_base=RenewalDist.erlang(2)),
        policy=pol.static_priority_policy([1, 0]), x0=[20, 20]),
    "d2_modified": dict(
        params=lambda: SystemParams.halfin_whitt(
            n=40, lam=[0.5, 0.5], mu=[1.0, 1.0], gam=[0.0, 0.5],
            beta=1.0, vartheta=1.0, downtime_base=RenewalDist.exponential()),
        policy=pol.modified_priority_policy(), x0=[30, 30]),
    "d2_markov_field": dict(
        params=lambda: SystemParams.halfin_whitt(
            n=40, lam=[0.5, 0.5], mu=[1.0, 1.0], gam=[0.1, 0.5]),
        policy=None, x0=[25, 25]),
    "d3_idling": dict(
        params=lambda: SystemParams.halfin_whitt(
            n=25, lam=[0.3, 0.3, 0.4], mu=[1.0, 1.0, 1.0], gam=[0.3, 0.4, 0.5]),
        policy=pol.idling_policy(0.6), x0=[15, 10, 10]),
}


@pytest.mark.parametrize("case", list(QUEUE_CASES))
def test_queue_kernels_bitwise_equal(case):
    spec = QUEUE_CASES[case]
    params = spec["params"]()
    policy = spec["policy"]
    if policy is None:
        grid = np.random.default_rng(1).uniform(0, 1, (13, 13))
        field = pol.ControlField.from_grid(-3.0, 0.5, grid, radius=3.0)
        policy = pol.markov_from_control(field, params)
    plan = qe.build_plan(
        params, policy, x0=spec["x0"], t_end=40.0, burn_in=4.0, n_batches=8,
        alpha=0.7, cost_m=2.0, hist_max=150, record_events=True,
        max_records=10**6, snap_times=[0.0, 13.7, 39.9])
    assert not plan.python_only
    a, b = _run_both(plan, "run_queue", seed=2024)
    _assert_same(a, b)
    assert a["n_events"] > 100


def test_queue_kernel_event_budget():
    params = SystemParams.halfin_whitt(n=20, lam=[1.0], mu=[1.0], gam=[0.5])
    plan = qe.build_plan(params, pol.work_conserving_policy(), x0=[20],
                         t_end=1e9, max_events=500)
    a, b = _run_both(plan, "run_queue", seed=3)
    _assert_same(a, b)
    assert a["truncated"] == 1 and a["n_events"] == 500


DIFF_CASES = {
    "d1_ou": dict(model=lambda: DiffusionModel.build(
        ell=[0.2], mu=[1.0], gam=[1.0], sig=[1.3]), control=[1.0]),
    "d2_jumps_const": dict(model=lambda: DiffusionModel.build(
        ell=[0.0, 0.1], mu=[1.0, 1.5], gam=[0.4, 0.9], sig=[1.0, 1.2],
        jump_dir=[0.5, 0.5],
        jumps=JumpMeasure(beta=0.7, theta=1.0, base=RenewalDist.erlang(2))),
        control=[0.3, 0.7]),
    "d2_jumps_field": dict(model=lambda: DiffusionModel.build(
        ell=[0.0, 0.0], mu=[1.0, 1.0], gam=[0.5, 0.5], sig=[1.0, 1.0],
        jump_dir=[1.0, 1.0],
        jumps=JumpMeasure(beta=0.4, theta=2.0,
                          base=RenewalDist.hyperexponential_scv(2.0))),
        control="field"),
}


@pytest.mark.parametrize("case", list(DIFF_CASES))
def test_diffusion_kernels_bitwise_equal(case):
    spec = DIFF_CASES[case]
    model = spec["model"]()
    control = spec["control"]
    if control == "field":
        grid = np.random.default_rng(2).uniform(0, 1, (9, 9))
        control = pol.ControlField.from_grid(-4.0, 1.0, grid, radius=4.0)
    plan = build_diffusion_plan(
        model, x0=np.zeros(model.d), control=control, t_end=25.0, dt=2e-3,
        burn_in=5.0, n_batches=5, alpha=0.3, cost_m=2.0, record_stride=11)
    assert not plan.python_only
    a, b = _run_both(plan, "run_diffusion", seed=99)
    _assert_same(a, b)


def test_forced_python_lane_selectable(monkeypatch):
    import importlib

    import qedsim._kernels as K

    monkeypatch.setenv("QEDSIM_KERNEL", "py")
    mod = importlib.reload(K)
    assert mod.BACKEND == "python"
    monkeypatch.delenv("QEDSIM_KERNEL")
    mod = importlib.reload(K)
    assert mod.BACKEND == "c"
