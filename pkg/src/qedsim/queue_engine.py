"""Discrete-event engine facade: system state, stepping, batch runs, and
the diffusion-scaling transforms.

The hot loop lives in ``qedsim._kernels`` (compiled lane when built,
python lane otherwise).  ``step`` mirrors one kernel iteration on an
explicit state object, so a fresh-state step sequence reproduces the
kernel trajectory draw for draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from ._kernels import core_py
from .errors import ValidationError
from .params import SystemParams, validate_halfin_whitt  # noqa: F401  (re-export)
from .policies import Policy
from .renewal import KIND_USER

_MAXPH = 4


# --------------------------------------------------------------------- #
# kernel plan
# --------------------------------------------------------------------- #

@dataclass
class QueuePlan:
    """Flat, picklable bundle of kernel inputs."""

    d: int
    n: int
    lam: np.ndarray
    mu: np.ndarray
    gam: np.ndarray
    arr_kind: np.ndarray
    arr_k: np.ndarray
    arr_nph: np.ndarray
    arr_p: np.ndarray
    arr_r: np.ndarray
    has_env: int
    beta_u: float
    dt_kind: int
    dt_k: int
    dt_nph: int
    dt_p: np.ndarray
    dt_r: np.ndarray
    theta_n: float
    pol_kind: int
    pol_order: np.ndarray
    pol_i0: int
    pol_cap: np.ndarray
    pol_share: np.ndarray
    pol_neff: int
    nrho: np.ndarray
    sqrt_n: float
    pol_thr: float
    pol_R: float
    grid_x0: float
    grid_h: float
    grid_nx: int
    grid_ny: int
    grid_u1: np.ndarray
    x0: np.ndarray
    t_end: float
    burn_in: float
    n_batches: int
    alpha: float
    cost_m: float
    hist_max: int
    record_events: int
    max_events: int
    max_records: int
    snap_times: np.ndarray
    pol_fn: object = field(default=None, compare=False)
    arr_samplers: object = field(default=None, compare=False)
    dt_sampler: object = field(default=None, compare=False)
    python_only: bool = False


def _encode_dists(dists) -> tuple:
    d = len(dists)
    kind = np.zeros(d, dtype=np.int64)
    korder = np.ones(d, dtype=np.int64)
    nph = np.ones(d, dtype=np.int64)
    maxph = max([1] + [len(dd.probs) for dd in dists])
    maxph = min(max(maxph, 1), _MAXPH) if maxph <= _MAXPH else maxph
    p = np.zeros((d, maxph))
    r = np.ones((d, maxph))
    samplers = [None] * d
    python_only = False
    for i, dist in enumerate(dists):
        kind[i] = dist.kind
        if dist.kind == KIND_USER:
            samplers[i] = dist.sample
            python_only = True
            continue
        korder[i] = dist.k
        if len(dist.probs) > 0:
            nph[i] = len(dist.probs)
            p[i, :nph[i]] = dist.probs
            r[i, :nph[i]] = dist.rates
    return kind, korder, nph, p, r, samplers, python_only


def build_plan(
    params: SystemParams,
    policy: Policy,
    x0,
    t_end: float,
    burn_in: float = 0.0,
    n_batches: int = 0,
    alpha: float = 0.0,
    cost_m: float = 2.0,
    hist_max: int = 0,
    record_events: bool = False,
    max_events: int = 10**9,
    max_records: int = 2 * 10**6,
    snap_times: Optional[Sequence[float]] = None,
) -> QueuePlan:
    x0 = np.asarray(x0, dtype=np.int64)
    if x0.shape != (params.d,) or np.any(x0 < 0):
        raise ValidationError("x0 must be a nonnegative integer vector of length d")
    if burn_in < 0 or (n_batches > 0 and t_end > 0 and burn_in >= t_end):
        raise ValidationError("need 0 <= burn_in < t_end when batching")

    arr = _encode_dists(params.arrival)
    kind, korder, nph, p, r, samplers, py_only = arr

    if params.has_env:
        dts = _encode_dists([params.downtime.base])
        dt_kind = int(dts[0][0])
        dt_k = int(dts[1][0])
        dt_nph = int(dts[2][0])
        dt_p = np.ascontiguousarray(dts[3][0])
        dt_r = np.ascontiguousarray(dts[4][0])
        dt_sampler = dts[5][0]
        py_only = py_only or dts[6]
        theta_n = params.downtime.theta_n
        beta_u = params.beta_u_n
        has_env = 1
    else:
        dt_kind, dt_k, dt_nph = 0, 1, 1
        dt_p, dt_r = np.zeros(1), np.ones(1)
        dt_sampler = None
        theta_n, beta_u, has_env = 1.0, 0.0, 0

    fields = policy.kernel_fields(params)
    pol_fn = None
    if fields is None:
        py_only = True
        d = params.d
        fields = {
            "pol_kind": core_py.POL_CALLABLE,
            "pol_order": np.arange(d, dtype=np.int64),
            "pol_i0": 0,
            "pol_cap": np.zeros(d, dtype=np.int64),
            "pol_share": np.zeros(d),
            "pol_neff": 0,
            "pol_thr": 0.0,
            "pol_R": 0.0,
            "grid_x0": 0.0,
            "grid_h": 1.0,
            "grid_nx": 0,
            "grid_ny": 0,
            "grid_u1": np.zeros(1),
        }

        def pol_fn(x, h, psi, k, _p=params, _pol=policy):
            return _pol.evaluate(np.asarray(x), np.asarray(h), psi, k, _p)

    snaps = np.zeros(0) if snap_times is None else np.ascontiguousarray(
        np.sort(np.asarray(snap_times, dtype=float)))

    return QueuePlan(
        d=params.d, n=params.n,
        lam=np.ascontiguousarray(params.lam_n),
        mu=np.ascontiguousarray(params.mu_n),
        gam=np.ascontiguousarray(params.gam_n),
        arr_kind=kind, arr_k=korder, arr_nph=nph,
        arr_p=np.ascontiguousarray(p), arr_r=np.ascontiguousarray(r),
        has_env=has_env, beta_u=beta_u,
        dt_kind=dt_kind, dt_k=dt_k, dt_nph=dt_nph, dt_p=dt_p, dt_r=dt_r,
        theta_n=theta_n,
        pol_kind=int(fields["pol_kind"]),
        pol_order=np.ascontiguousarray(fields["pol_order"], dtype=np.int64),
        pol_i0=int(fields["pol_i0"]),
        pol_cap=np.ascontiguousarray(fields["pol_cap"], dtype=np.int64),
        pol_share=np.ascontiguousarray(fields["pol_share"], dtype=float),
        pol_neff=int(fields["pol_neff"]),
        nrho=np.ascontiguousarray(params.rho * params.n),
        sqrt_n=math.sqrt(params.n),
        pol_thr=float(fields["pol_thr"]),
        pol_R=float(fields["pol_R"]),
        grid_x0=float(fields["grid_x0"]),
        grid_h=float(fields["grid_h"]),
        grid_nx=int(fields["grid_nx"]),
        grid_ny=int(fields["grid_ny"]),
        grid_u1=np.ascontiguousarray(fields["grid_u1"], dtype=float),
        x0=x0,
        t_end=float(t_end), burn_in=float(burn_in), n_batches=int(n_batches),
        alpha=float(alpha), cost_m=float(cost_m), hist_max=int(hist_max),
        record_events=int(bool(record_events)),
        max_events=int(max_events), max_records=int(max_records),
        snap_times=snaps,
        pol_fn=pol_fn or fields.get("pol_fn"),
        arr_samplers=samplers, dt_sampler=dt_sampler,
        python_only=py_only,
    )


# --------------------------------------------------------------------- #
# explicit state and stepping
# --------------------------------------------------------------------- #

@dataclass
class SystemState:
    """Full Markovian state of the pre-limit system.

    Clock fields are engine-internal; policies observe only
    (X, H, psi, K).  The residual downtime R is known to the engine but
    never passed to a policy.
    """

    params: SystemParams
    t: float
    X: np.ndarray
    Z: np.ndarray
    psi: int = 1
    cum_down: float = 0.0
    last_arr: Optional[np.ndarray] = None
    next_arr: Optional[np.ndarray] = None
    env_next: float = math.inf
    down_start: float = 0.0

    @property
    def Q(self) -> np.ndarray:
        return self.X - self.Z

    @property
    def H(self) -> np.ndarray:
        if self.last_arr is None:
            return np.zeros(self.params.d)
        return self.t - self.last_arr

    @property
    def K(self) -> float:
        return (self.t - self.down_start) if self.psi == 0 else 0.0

    @property
    def R(self) -> float:
        return (self.env_next - self.t) if self.psi == 0 else 0.0

    def check_invariants(self) -> None:
        if np.any(self.X < 0) or np.any(self.Z < 0) or np.any(self.Z > self.X):
            raise AssertionError("count invariants violated")
        if int(self.Z.sum()) > self.params.n:
            raise AssertionError("more busy servers than servers")
        if self.psi == 1 and self.K != 0.0:
            raise AssertionError("down-age must vanish while up")

    def snapshot(self) -> dict:
        return {
            "t": self.t, "X": self.X.copy(), "Q": self.Q.copy(),
            "Z": self.Z.copy(), "psi": self.psi, "K": self.K,
            "cum_down": self.cum_down,
        }


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: str
    cls: Optional[int]
    state: dict


def build_system(params: SystemParams, x0, policy: Optional[Policy] = None) -> SystemState:
    """Fresh state at t=0: environment up, zero ages, no pending clocks."""
    params.validate()
    x0 = np.asarray(x0, dtype=np.int64)
    if x0.shape != (params.d,) or np.any(x0 < 0):
        raise ValidationError("x0 must be a nonnegative integer vector of length d")
    if policy is not None:
        z = np.asarray(policy.evaluate(x0, np.zeros(params.d), 1, 0.0, params),
                       dtype=np.int64)
    else:
        z = np.minimum(x0, np.maximum(params.n - np.cumsum(x0) + x0, 0))
        z = np.minimum(x0, z)
    state = SystemState(params=params, t=0.0, X=x0.copy(), Z=z)
    state.check_invariants()
    return state


def _lazy_init_clocks(state: SystemState, rng: np.random.Generator) -> None:
    p = state.params
    state.last_arr = np.zeros(p.d)
    state.next_arr = np.zeros(p.d)
    for i in range(p.d):
        if p.lam_n[i] > 0.0:
            g = p.arrival[i].sample(rng)
            state.next_arr[i] = state.t + g / p.lam_n[i]
        else:
            state.next_arr[i] = math.inf
    if p.has_env:
        state.env_next = state.t + rng.standard_exponential() / p.beta_u_n
    else:
        state.env_next = math.inf


def step(state: SystemState, policy: Policy, rng: np.random.Generator):
    """Advance to the next event; returns its record, or None if no event
    can ever occur.  Mirrors one kernel-loop iteration exactly."""
    p = state.params
    d = p.d
    if state.next_arr is None:
        _lazy_init_clocks(state, rng)

    rtot = 0.0
    if state.psi == 1:
        rtot += float(np.dot(p.mu_n, state.Z))
    rtot += float(np.dot(p.gam_n, state.Q))
    t_sa = state.t + rng.standard_exponential() / rtot if rtot > 0.0 else math.inf

    tnew = state.env_next
    ev = -2
    for i in range(d):
        if state.next_arr[i] < tnew:
            tnew = state.next_arr[i]
            ev = i
    if t_sa < tnew:
        tnew = t_sa
        ev = -1
    if tnew == math.inf:
        return None

    if state.psi == 0:
        state.cum_down += tnew - state.t
    state.t = tnew

    if ev == -2:
        if state.psi == 1:
            state.psi = 0
            state.down_start = state.t
            dur = p.downtime.sample(rng)
            state.env_next = state.t + dur
            kind, cls = "env_down", None
        else:
            state.psi = 1
            state.env_next = state.t + rng.standard_exponential() / p.beta_u_n
            kind, cls = "env_up", None
    elif ev >= 0:
        i = ev
        state.X[i] += 1
        state.last_arr[i] = state.t
        g = p.arrival[i].sample(rng)
        state.next_arr[i] = state.t + g / p.lam_n[i]
        kind, cls = "arrival", i
    else:
        u = rng.random() * rtot
        acc = 0.0
        kind, cls = None, None
        if state.psi == 1:
            for i in range(d):
                acc += p.mu_n[i] * state.Z[i]
                if u < acc:
                    state.X[i] -= 1
                    kind, cls = "service", i
                    break
        if kind is None:
            for i in range(d):
                acc += p.gam_n[i] * state.Q[i]
                if u < acc:
                    state.X[i] -= 1
                    kind, cls = "abandon", i
                    break
            if kind is None:
                for i in range(d - 1, -1, -1):
                    if state.Q[i] > 0 or (state.psi == 1 and state.Z[i] > 0):
                        state.X[i] -= 1
                        kind, cls = "abandon", i
                        break

    state.Z = np.asarray(
        policy.evaluate(state.X, state.H, state.psi, state.K, p), dtype=np.int64)
    state.check_invariants()
    return EventRecord(time=state.t, kind=kind, cls=cls, state=state.snapshot())


# --------------------------------------------------------------------- #
# batch runs
# --------------------------------------------------------------------- #

@dataclass
class TrajectoryStats:
    """Kernel outputs with scaling-aware accessors."""

    params: SystemParams
    plan: QueuePlan
    raw: dict

    @property
    def duration(self) -> float:
        return float(self.raw["batch_dur"].sum())

    def time_avg_X(self) -> np.ndarray:
        return self.raw["batch_sx"].sum(axis=0) / self.duration

    def time_var_X(self) -> np.ndarray:
        m1 = self.time_avg_X()
        m2 = self.raw["batch_sxx"].sum(axis=0) / self.duration
        return m2 - m1**2

    def mean_Xhat(self) -> np.ndarray:
        return (self.time_avg_X() - self.params.n * self.params.rho) / self.plan.sqrt_n

    def var_Xhat(self) -> np.ndarray:
        return self.time_var_X() / self.params.n

    def mean_sq_Xhat(self) -> float:
        """Time average of |Xhat|^2."""
        nrho = self.params.n * self.params.rho
        m2 = self.raw["batch_sxx"].sum(axis=0) / self.duration
        m1 = self.raw["batch_sx"].sum(axis=0) / self.duration
        return float(np.sum(m2 - 2 * nrho * m1 + nrho**2) / self.params.n)

    def batch_cost_rates(self, c: float = 1.0) -> np.ndarray:
        """Per-batch time-averages of the scaled queue cost c|Qhat|^m."""
        scale = c / self.params.n ** (self.plan.cost_m / 2.0)
        dur = self.raw["batch_dur"]
        ok = dur > 0
        return scale * self.raw["batch_cost"][ok] / dur[ok]

    def discounted_cost(self, c: float = 1.0) -> float:
        return float(c / self.params.n ** (self.plan.cost_m / 2.0)
                     * self.raw["disc_cost"])

    def occupancy(self) -> np.ndarray:
        h = self.raw["hist"]
        tot = h.sum()
        return h / tot if tot > 0 else h

    def final_state_augmented(self) -> dict:
        """Final (Xbreve, H, psi, K) with the residual-downtime correction."""
        r = self.raw
        xb = r["X"] + self.params.n * self.params.mu_n * self.params.rho * r["R"]
        return {"X_breve": xb, "H": r["H"], "psi": r["psi"], "K": r["K"],
                "X": r["X"], "R": r["R"]}


def run(
    state: SystemState,
    policy: Policy,
    horizon: float,
    rng: np.random.Generator,
    burn_in: float = 0.0,
    n_batches: int = 1,
    alpha: float = 0.0,
    cost_m: float = 2.0,
    hist_max: int = 0,
    record_events: bool = False,
    max_events: int = 10**9,
    max_records: int = 2 * 10**6,
    snap_times: Optional[Sequence[float]] = None,
) -> TrajectoryStats:
    """Simulate to the horizon and collect batch statistics.

    Fresh states (t=0, no clocks drawn) run through the kernel lane;
    warm states fall back to the explicit step loop.
    """
    if state.t != 0.0 or state.next_arr is not None:
        raise ValidationError("run() requires a fresh state from build_system()")
    if horizon < 0:
        raise ValidationError("horizon must be nonnegative")
    plan = build_plan(
        state.params, policy, state.X, t_end=horizon, burn_in=burn_in,
        n_batches=n_batches, alpha=alpha, cost_m=cost_m, hist_max=hist_max,
        record_events=record_events, max_events=max_events,
        max_records=max_records, snap_times=snap_times,
    )
    if horizon == 0.0:
        raw = _empty_run_result(plan, state)
    else:
        kernel = core_py if plan.python_only else _kernels.impl
        raw = kernel.run_queue(plan, rng)
    return TrajectoryStats(params=state.params, plan=plan, raw=raw)


def _empty_run_result(plan: QueuePlan, state: SystemState) -> dict:
    d = plan.d
    nb = plan.n_batches
    return {
        "t": 0.0, "X": state.X.copy(), "Z": state.Z.copy(), "psi": state.psi,
        "K": 0.0, "R": 0.0, "H": np.zeros(d), "cum_down": 0.0,
        "n_events": 0, "truncated": 0,
        "batch_dur": np.zeros(nb), "batch_sx": np.zeros((nb, d)),
        "batch_sxx": np.zeros((nb, d)), "batch_sq": np.zeros((nb, d)),
        "batch_cost": np.zeros(nb), "batch_down": np.zeros(nb),
        "disc_cost": 0.0, "hist": np.zeros(max(plan.hist_max, 0) + 1),
        "count_arr": np.zeros(d, dtype=np.int64),
        "count_svc": np.zeros(d, dtype=np.int64),
        "count_abd": np.zeros(d, dtype=np.int64),
        "count_env": np.zeros(2, dtype=np.int64),
        "ev_t": np.zeros(1), "ev_kind": np.full(1, -1, dtype=np.int32),
        "ev_X": state.X.copy()[None, :], "ev_Q": state.Q.copy()[None, :],
        "ev_psi": np.array([state.psi], dtype=np.int8),
        "snap_X": np.zeros((0, d), dtype=np.int64),
        "snap_Z": np.zeros((0, d), dtype=np.int64),
        "snap_psi": np.zeros(0, dtype=np.int8), "snap_K": np.zeros(0),
        "snap_R": np.zeros(0), "snap_H": np.zeros((0, d)),
        "snap_cdown": np.zeros(0),
    }


# --------------------------------------------------------------------- #
# scaling transforms
# --------------------------------------------------------------------- #

def diffusion_scale(params: SystemParams, x) -> np.ndarray:
    """(X - n rho) / sqrt(n)."""
    return (np.asarray(x, dtype=float) - params.n * params.rho) / math.sqrt(params.n)


def diffusion_unscale(params: SystemParams, xhat) -> np.ndarray:
    return np.asarray(xhat, dtype=float) * math.sqrt(params.n) + params.n * params.rho


def queue_scale(params: SystemParams, q) -> np.ndarray:
    return np.asarray(q, dtype=float) / math.sqrt(params.n)


def residual_augmented(params: SystemParams, x, residual_down: float) -> np.ndarray:
    """Counts plus the work the pending downtime will defer: X + n mu rho R."""
    return (np.asarray(x, dtype=float)
            + params.n * params.mu_n * params.rho * float(residual_down))


def downtime_scaled(params: SystemParams, stats: TrajectoryStats) -> np.ndarray:
    """sqrt(n) times the cumulative-downtime path at the snapshot epochs."""
    return math.sqrt(params.n) * stats.raw["snap_cdown"]
