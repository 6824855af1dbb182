"""The limiting controlled jump diffusion: drift, simulation, generator.

State follows dX = b(X,U)dt + S dW + jump_dir dL with piecewise-linear
drift, diagonal diffusion, and compound-Poisson jumps along a fixed
direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize, special

from . import _kernels
from ._kernels import core_py
from .errors import ConfigError, DomainError, ValidationError
from .params import SystemParams
from .policies import ControlField
from .renewal import (
    KIND_ERLANG,
    KIND_EXPONENTIAL,
    KIND_HYPEREXP,
    KIND_USER,
    RenewalDist,
)

_TAIL_MASS = 1e-8


# --------------------------------------------------------------------- #
# jump-size measure
# --------------------------------------------------------------------- #

@dataclass(frozen=True)
class JumpMeasure:
    """Compound-Poisson data: rate beta, scalar sizes base/theta."""

    beta: float
    theta: float
    base: RenewalDist

    def sample(self, rng: np.random.Generator) -> float:
        return self.base.sample(rng) / self.theta

    def moment(self, k: int) -> float:
        """E[(base/theta)^k]; raises ConfigError when it does not exist."""
        b = self.base
        if b.kind == KIND_EXPONENTIAL:
            raw = math.factorial(k)
        elif b.kind == KIND_ERLANG:
            m = b.k
            raw = math.prod(m + j for j in range(k)) / m**k
        elif b.kind == KIND_HYPEREXP:
            raw = float(sum(p * math.factorial(k) / r**k
                            for p, r in zip(b.probs, b.rates)))
        else:
            raw = _numeric_moment(b, k)
        return raw / self.theta**k

    def quantile(self, eps: float) -> float:
        """Size s with P(base/theta > s) = eps."""
        b = self.base
        if b.kind == KIND_EXPONENTIAL:
            t = -math.log(eps)
        elif b.kind == KIND_ERLANG:
            t = float(special.gammainccinv(b.k, eps)) / b.k
        else:
            hi = 1.0
            while b.sf(hi) > eps:
                hi *= 2.0
                if hi > 1e12:
                    raise DomainError("quantile search failed")
            t = float(optimize.brentq(lambda s: b.sf(s) - eps, 0.0, hi, xtol=1e-12))
        return t / self.theta

    def quadrature(self, n_nodes: int = 160) -> tuple:
        """Nodes/weights integrating g against the size law to tail 1e-8."""
        smax = self.quantile(_TAIL_MASS)
        panels = 8
        per = max(n_nodes // panels, 4)
        edges = np.linspace(0.0, smax, panels + 1)
        gl_x, gl_w = np.polynomial.legendre.leggauss(per)
        nodes, weights = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            xs = mid + half * gl_x
            pdf = np.array([self.base.pdf(self.theta * s) for s in xs]) * self.theta
            nodes.append(xs)
            weights.append(half * gl_w * pdf)
        return np.concatenate(nodes), np.concatenate(weights)

    def tail_report(self) -> dict:
        s = self.quantile(_TAIL_MASS)
        return {"cutoff": s, "tail_mass": _TAIL_MASS}


def _numeric_moment(base: RenewalDist, k: int) -> float:
    """E[X^k] = k int t^(k-1) sf(t) dt, with a divergence probe."""
    from scipy import integrate

    def part(hi):
        val, _ = integrate.quad(lambda t: k * t ** (k - 1) * base.sf(t), 0, hi,
                                limit=400)
        return val

    a, b = part(1e3), part(1e4)
    if not np.isfinite(b) or (b > 1e-12 and (b - a) > 0.01 * abs(b)):
        raise ConfigError(f"moment of order {k} of the jump size appears infinite")
    return b


# --------------------------------------------------------------------- #
# model
# --------------------------------------------------------------------- #

@dataclass(frozen=True)
class DiffusionModel:
    """Drift/covariance/jump data of the limiting controlled SDE."""

    d: int
    ell: np.ndarray
    mu: np.ndarray
    gam: np.ndarray
    sig: np.ndarray                      # diagonal of the diffusion matrix
    jump_dir: np.ndarray                 # direction vector of the jumps
    jumps: Optional[JumpMeasure] = None

    @staticmethod
    def from_params(params: SystemParams) -> "DiffusionModel":
        sig = np.sqrt(params.lam * (1.0 + params.scv))
        jumps = None
        if params.has_env:
            jumps = JumpMeasure(beta=params.beta, theta=params.vartheta,
                                base=params.downtime.base)
        return DiffusionModel(
            d=params.d,
            ell=np.asarray(params.ell, dtype=float),
            mu=np.asarray(params.mu, dtype=float),
            gam=np.asarray(params.gam, dtype=float),
            sig=sig,
            jump_dir=np.asarray(params.lam, dtype=float),
            jumps=jumps,
        )

    @staticmethod
    def build(ell, mu, gam, sig, jump_dir=None, jumps: Optional[JumpMeasure] = None
              ) -> "DiffusionModel":
        ell = np.atleast_1d(np.asarray(ell, dtype=float))
        d = len(ell)
        return DiffusionModel(
            d=d, ell=ell,
            mu=np.atleast_1d(np.asarray(mu, dtype=float)),
            gam=np.atleast_1d(np.asarray(gam, dtype=float)),
            sig=np.atleast_1d(np.asarray(sig, dtype=float)),
            jump_dir=(np.ones(d) if jump_dir is None
                      else np.atleast_1d(np.asarray(jump_dir, dtype=float))),
            jumps=jumps,
        )

    def validate_moments(self, m: float) -> None:
        """The jump size needs moments up to m+1 for a degree-m cost."""
        if self.jumps is None:
            return
        k = int(math.ceil(m)) + 1
        self.jumps.moment(k)


def drift(x, u, model: DiffusionModel) -> np.ndarray:
    """b(x,u) = ell - M(x - <e,x>^+ u) - <e,x>^+ Gamma u."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(u < -1e-9) or abs(u.sum() - 1.0) > 1e-9:
        raise ValidationError("control must lie on the probability simplex")
    ex = max(float(x.sum()), 0.0)
    return model.ell - model.mu * (x - ex * u) - ex * model.gam * u


# --------------------------------------------------------------------- #
# simulation
# --------------------------------------------------------------------- #

@dataclass
class DiffusionPlan:
    d: int
    ell: np.ndarray
    mu: np.ndarray
    gam: np.ndarray
    sig: np.ndarray
    jump_dir: np.ndarray
    has_jumps: int
    beta: float
    dt_kind: int
    dt_k: int
    dt_nph: int
    dt_p: np.ndarray
    dt_r: np.ndarray
    theta: float
    ctrl_kind: int
    ctrl_u: np.ndarray
    pol_R: float
    grid_x0: float
    grid_h: float
    grid_nx: int
    grid_ny: int
    grid_u1: np.ndarray
    x0: np.ndarray
    t_end: float
    dt: float
    burn_in: float
    n_batches: int
    alpha: float
    cost_m: float
    record_stride: int
    max_records: int
    max_jumps_log: int
    ctrl_fn: object = field(default=None, compare=False)
    dt_sampler: object = field(default=None, compare=False)
    python_only: bool = False


@dataclass
class DiffPath:
    """A simulated path with its batch statistics and jump log."""

    model: DiffusionModel
    plan: DiffusionPlan
    raw: dict

    @property
    def final(self) -> np.ndarray:
        return self.raw["X"]

    @property
    def times(self) -> np.ndarray:
        return self.raw["rec_t"]

    @property
    def states(self) -> np.ndarray:
        return self.raw["rec_X"]

    @property
    def controls(self) -> np.ndarray:
        return self.raw["rec_U"]

    @property
    def jump_log(self) -> tuple:
        return self.raw["jump_t"], self.raw["jump_y"]

    @property
    def n_jumps(self) -> int:
        return int(self.raw["n_jumps"])

    def time_avg_X(self) -> np.ndarray:
        return self.raw["batch_sx"].sum(axis=0) / self.raw["batch_dur"].sum()

    def time_var_X(self) -> np.ndarray:
        dur = self.raw["batch_dur"].sum()
        m1 = self.raw["batch_sx"].sum(axis=0) / dur
        return self.raw["batch_sxx"].sum(axis=0) / dur - m1**2

    def batch_cost_rates(self, c: float = 1.0) -> np.ndarray:
        dur = self.raw["batch_dur"]
        ok = dur > 0
        return c * self.raw["batch_cost"][ok] / dur[ok]

    def discounted_cost(self, c: float = 1.0) -> float:
        return c * float(self.raw["disc_cost"])


def default_dt(model: DiffusionModel) -> float:
    return 1e-3 / max(float(np.max(model.mu)), float(np.max(model.gam)), 1.0)


def build_diffusion_plan(
    model: DiffusionModel,
    x0,
    control,
    t_end: float,
    dt: Optional[float] = None,
    burn_in: float = 0.0,
    n_batches: int = 1,
    alpha: float = 0.0,
    cost_m: float = 2.0,
    record_stride: int = 0,
    max_records: int = 4 * 10**6,
    max_jumps_log: int = 10**6,
) -> DiffusionPlan:
    if dt is None:
        dt = default_dt(model)
    if dt <= 0:
        raise ValidationError("dt must be positive")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))

    ctrl_fn = None
    python_only = False
    ctrl_u = np.zeros(model.d)
    ctrl_u[-1] = 1.0
    pol_R, gx0, gh, gnx, gny = 0.0, 0.0, 1.0, 0, 0
    gu1 = np.zeros(1)
    if isinstance(control, ControlField):
        if control.kind == "constant":
            ctrl_kind = 0
            ctrl_u = control.u_const.copy()
            ed = np.zeros(model.d)
            ed[-1] = 1.0
            if control.radius < math.inf and not np.allclose(ctrl_u, ed):
                # constant only inside a ball: route through the field call
                ctrl_kind = 2
                ctrl_fn = control
                python_only = True
        elif control.kind == "grid2":
            ctrl_kind = 1
            pol_R = control.radius
            gx0, gh = control.grid_x0, control.grid_h
            gnx, gny = control.grid_nx, control.grid_ny
            gu1 = control.grid_u1
        else:
            ctrl_kind = 2
            ctrl_fn = control
            python_only = True
    elif callable(control):
        ctrl_kind = 2
        ctrl_fn = control
        python_only = True
    else:
        ctrl_kind = 0
        ctrl_u = np.asarray(control, dtype=float)
        if abs(ctrl_u.sum() - 1.0) > 1e-9 or np.any(ctrl_u < 0):
            raise ValidationError("constant control must lie on the simplex")

    if model.jumps is not None:
        base = model.jumps.base
        has_jumps = 1
        beta = model.jumps.beta
        theta = model.jumps.theta
        if base.kind == KIND_USER:
            dt_kind, dt_k, dt_nph = KIND_USER, 1, 1
            dt_p, dt_r = np.zeros(1), np.ones(1)
            dt_sampler = base.sample
            python_only = True
        else:
            dt_kind, dt_k = base.kind, base.k
            dt_nph = max(len(base.probs), 1)
            dt_p = np.ascontiguousarray(
                np.asarray(base.probs, dtype=float) if base.probs else np.zeros(1))
            dt_r = np.ascontiguousarray(
                np.asarray(base.rates, dtype=float) if base.rates else np.ones(1))
            dt_sampler = None
    else:
        has_jumps, beta, theta = 0, 0.0, 1.0
        dt_kind, dt_k, dt_nph = 0, 1, 1
        dt_p, dt_r = np.zeros(1), np.ones(1)
        dt_sampler = None

    return DiffusionPlan(
        d=model.d,
        ell=np.ascontiguousarray(model.ell),
        mu=np.ascontiguousarray(model.mu),
        gam=np.ascontiguousarray(model.gam),
        sig=np.ascontiguousarray(model.sig),
        jump_dir=np.ascontiguousarray(model.jump_dir),
        has_jumps=has_jumps, beta=beta,
        dt_kind=dt_kind, dt_k=dt_k, dt_nph=dt_nph, dt_p=dt_p, dt_r=dt_r,
        theta=theta,
        ctrl_kind=ctrl_kind, ctrl_u=np.ascontiguousarray(ctrl_u),
        pol_R=pol_R, grid_x0=gx0, grid_h=gh, grid_nx=gnx, grid_ny=gny,
        grid_u1=np.ascontiguousarray(gu1),
        x0=x0, t_end=float(t_end), dt=float(dt), burn_in=float(burn_in),
        n_batches=int(n_batches), alpha=float(alpha), cost_m=float(cost_m),
        record_stride=int(record_stride), max_records=int(max_records),
        max_jumps_log=int(max_jumps_log),
        ctrl_fn=ctrl_fn, dt_sampler=dt_sampler, python_only=python_only,
    )


def simulate(
    model: DiffusionModel,
    x0,
    control,
    t_end: float,
    rng: np.random.Generator,
    dt: Optional[float] = None,
    **options,
) -> DiffPath:
    """Euler path with exact jump-epoch insertion.

    ``control`` may be a simplex vector, a ControlField, or a callable
    x -> u (python lane).
    """
    plan = build_diffusion_plan(model, x0, control, t_end, dt=dt, **options)
    kernel = core_py if plan.python_only else _kernels.impl
    raw = kernel.run_diffusion(plan, rng)
    return DiffPath(model=model, plan=plan, raw=raw)


# --------------------------------------------------------------------- #
# generator and occupation residuals
# --------------------------------------------------------------------- #

def generator_apply(fn, x, u, model: DiffusionModel,
                    quad: Optional[tuple] = None):
    """Apply the controlled generator to a test function at (x, u).

    Vectorized: x may be (d,) or (N, d); u likewise.  ``fn`` needs value,
    grad, and hess_diag callables.
    """
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    u2 = np.atleast_2d(np.asarray(u, dtype=float))
    if u2.shape[0] == 1 and x2.shape[0] > 1:
        u2 = np.broadcast_to(u2, x2.shape)
    if np.any(u2 < -1e-9) or np.any(np.abs(u2.sum(axis=1) - 1.0) > 1e-9):
        raise ValidationError("control must lie on the probability simplex")
    ex = np.clip(x2.sum(axis=1), 0.0, None)[:, None]
    b = model.ell - model.mu * (x2 - ex * u2) - ex * model.gam * u2
    out = (b * fn.grad(x2)).sum(axis=1)
    out = out + 0.5 * (model.sig**2 * fn.hess_diag(x2)).sum(axis=1)
    if model.jumps is not None:
        if quad is None:
            quad = model.jumps.quadrature()
        nodes, weights = quad
        fx = fn.value(x2)
        shifted = x2[:, None, :] + model.jump_dir[None, None, :] * nodes[:, None]
        vals = fn.value(shifted.reshape(-1, model.d)).reshape(x2.shape[0], len(nodes))
        out = out + model.jumps.beta * ((vals - fx[:, None]) * weights).sum(axis=1)
    return out if np.asarray(x).ndim > 1 else float(out[0])


@dataclass
class ResidualEstimate:
    name: str
    mean: float
    stderr: float
    batches: int

    @property
    def significant(self) -> bool:
        """True when the residual differs from 0 by more than 3 stderr."""
        return abs(self.mean) > 3.0 * self.stderr


def occupation_residual(path: DiffPath, test_fns, model: Optional[DiffusionModel] = None,
                        n_batches: int = 20) -> list:
    """Batch-means time averages of the generator along a recorded path.

    For an ergodic control these should vanish; each entry reports the
    batch-means mean and standard error of one test function.
    """
    model = model or path.model
    xs = path.states
    us = path.controls
    if len(xs) < n_batches * 2:
        raise ValidationError("path too short for batch means; record more points")
    quad = model.jumps.quadrature() if model.jumps is not None else None
    out = []
    edges = np.linspace(0, len(xs), n_batches + 1).astype(int)
    for fn in test_fns:
        vals = generator_apply(fn, xs, us, model, quad=quad)
        means = np.array([vals[a:b].mean() for a, b in zip(edges[:-1], edges[1:])])
        out.append(ResidualEstimate(
            name=fn.name,
            mean=float(means.mean()),
            stderr=float(means.std(ddof=1) / math.sqrt(n_batches)),
            batches=n_batches,
        ))
    return out


def jump_measure(params: SystemParams) -> JumpMeasure:
    """Jump data of the limiting compound Poisson: rate beta, size d1/theta."""
    if not params.has_env:
        raise ConfigError("system has no interruption environment")
    if params.beta <= 0 or params.vartheta <= 0:
        raise ConfigError("need positive limit beta and vartheta")
    return JumpMeasure(beta=params.beta, theta=params.vartheta,
                       base=params.downtime.base)
