"""Scheduling policies: feasible actions, priority rules, and the
queue-ratio parameterization linking allocations to simplex controls."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ._kernels import (
    POL_CAPPED_STATIC,
    POL_MARKOV_FIELD,
    POL_MODIFIED,
    POL_STATIC,
)
from .errors import ValidationError

ENUMERATION_CAP = 10**6


# --------------------------------------------------------------------- #
# feasible action sets
# --------------------------------------------------------------------- #

@dataclass(frozen=True)
class ActionSet:
    """Allocations z with 0 <= z <= x and <e,z> = <e,x> ^ n."""

    x: np.ndarray
    n: int

    @property
    def total(self) -> int:
        return int(min(self.x.sum(), self.n))

    def contains(self, z) -> bool:
        z = np.asarray(z)
        if z.shape != self.x.shape:
            return False
        if np.any(z < 0) or np.any(z > self.x):
            return False
        return int(z.sum()) == self.total

    def enumerate(self):
        """All feasible allocations; only when the state is small enough."""
        bound = 1
        for xi in self.x:
            bound *= int(xi) + 1
            if bound > ENUMERATION_CAP:
                raise ValidationError(
                    f"action set too large to enumerate (> {ENUMERATION_CAP}); "
                    "use the predicate instead")
        d = len(self.x)
        out = []

        def rec(i, remaining, prefix):
            if i == d - 1:
                if remaining <= self.x[i]:
                    out.append(prefix + [remaining])
                return
            hi = min(int(self.x[i]), remaining)
            for zi in range(hi + 1):
                rec(i + 1, remaining - zi, prefix + [zi])

        rec(0, self.total, [])
        return [np.array(z, dtype=np.int64) for z in out]


def admissible_actions(x, n: int) -> ActionSet:
    x = np.asarray(x, dtype=np.int64)
    if np.any(x < 0):
        raise ValidationError("counts must be nonnegative")
    return ActionSet(x=x, n=int(n))


# --------------------------------------------------------------------- #
# priority rules
# --------------------------------------------------------------------- #

def static_priority(x, n: int, order: Sequence[int]) -> np.ndarray:
    """Fill servers greedily in the given class order."""
    x = np.asarray(x, dtype=np.int64)
    d = len(x)
    if sorted(order) != list(range(d)):
        raise ValidationError(f"order must be a permutation of 0..{d - 1}")
    z = np.zeros(d, dtype=np.int64)
    budget = int(n)
    for i in order:
        zi = min(int(x[i]), budget)
        z[i] = zi
        budget -= zi
    return z


def _modified_order(rho, gamma) -> tuple:
    """Allocation order with the zero-abandonment classes first."""
    d = len(rho)
    idx0 = [i for i in range(d) if gamma[i] == 0.0]
    idx1 = [i for i in range(d) if gamma[i] != 0.0]
    return idx0 + idx1, len(idx0)


def modified_priority_caps(n: int, rho, gamma):
    """(order, i0, caps, shares) for the capped-prefix priority rule."""
    order, i0 = _modified_order(rho, gamma)
    rho = np.asarray(rho, dtype=float)
    caps = np.zeros(len(rho), dtype=np.int64)
    shares = np.zeros(len(rho))
    if i0 > 0:
        rho0 = sum(rho[i] for i in order[:i0])
        for pos in range(i0):
            shares[pos] = n * rho[order[pos]] / rho0
            caps[pos] = int(math.floor(shares[pos]))
    return np.array(order, dtype=np.int64), i0, caps, shares


def modified_priority(x, n: int, rho, gamma) -> np.ndarray:
    """Capped allocation for zero-abandonment classes, then static priority.

    Zero-abandonment classes get up to their traffic-proportional share of
    servers (plus spillover), remaining servers flow by class order.  A
    final repair enforces <e,z> = <e,x> ^ n in the edge cases the nested
    floor/positive-part expression leaves ambiguous.
    """
    x = np.asarray(x, dtype=np.int64)
    d = len(x)
    order, i0, caps, shares = modified_priority_caps(n, rho, gamma)
    z = np.zeros(d, dtype=np.int64)
    sum_min = sum(min(int(x[order[p]]), int(caps[p])) for p in range(i0))
    prefix_excess = 0
    for pos in range(i0):
        i = order[pos]
        spill = max(n - sum_min - prefix_excess, 0)
        z[i] = min(int(math.floor(shares[pos] + spill)), int(x[i]))
        prefix_excess += max(int(x[i]) - int(caps[pos]), 0)
    prefix_x = sum(int(x[order[p]]) for p in range(i0))
    for pos in range(i0, d):
        i = order[pos]
        z[i] = min(int(x[i]), max(n - prefix_x, 0))
        prefix_x += int(x[i])
    # repair pass, lowest priority first
    target = min(int(x.sum()), int(n))
    s = int(z.sum())
    if s > target:
        for pos in range(d - 1, -1, -1):
            i = order[pos]
            cut = min(int(z[i]), s - target)
            z[i] -= cut
            s -= cut
            if s == target:
                break
    elif s < target:
        for pos in range(d):
            i = order[pos]
            add = min(int(x[i]) - int(z[i]), target - s)
            z[i] += add
            s += add
            if s == target:
                break
    return z


def quantize(y) -> np.ndarray:
    """Floor all but the last coordinate, push the fractions into the last.

    Preserves the total exactly; the output is integer iff the input total
    is an integer.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValidationError("quantize requires a nonnegative vector")
    out = np.floor(y)
    out[-1] += float(np.sum(y - np.floor(y)))
    return out


# --------------------------------------------------------------------- #
# u <-> z parameterization
# --------------------------------------------------------------------- #

def u_from_z(x, z, n: int) -> np.ndarray:
    """Queue-ratio control of a feasible allocation; e_d when nobody waits."""
    x = np.asarray(x, dtype=np.int64)
    z = np.asarray(z, dtype=np.int64)
    if not admissible_actions(x, n).contains(z):
        raise ValidationError("z is not a feasible allocation for x")
    d = len(x)
    excess = int(x.sum()) - n
    if excess <= 0:
        u = np.zeros(d)
        u[-1] = 1.0
        return u
    return (x - z) / float(excess)


def z_from_u(x, u, n: int) -> np.ndarray:
    """Allocation realizing queue vector (<e,x> - n)^+ u."""
    x = np.asarray(x, dtype=np.int64)
    u = np.asarray(u, dtype=float)
    if np.any(u < -1e-12) or abs(u.sum() - 1.0) > 1e-9:
        raise ValidationError("u must lie on the probability simplex")
    excess = int(x.sum()) - n
    if excess <= 0:
        ed = np.zeros(len(x))
        ed[-1] = 1.0
        if not np.allclose(u, ed, atol=1e-9):
            raise ValidationError("when nobody waits the only feasible control is e_d")
        return x.copy()
    q = excess * u
    if np.any(q - x > 1e-9) or np.any(np.abs(q - np.round(q)) > 1e-9):
        raise ValidationError("u does not correspond to an integer queue split <= x")
    z = x - np.round(q).astype(np.int64)
    return z


# --------------------------------------------------------------------- #
# control fields and charts
# --------------------------------------------------------------------- #

@dataclass(frozen=True)
class ControlField:
    """Map from scaled state to the simplex; identically e_d far out.

    Kinds: "constant" (fixed u), "grid2" (bilinear interpolation of the
    first coordinate on a square two-class grid), "callable" (arbitrary
    function, python lane only).
    """

    d: int
    kind: str
    radius: float = math.inf
    u_const: Optional[np.ndarray] = None
    grid_x0: float = 0.0
    grid_h: float = 1.0
    grid_u1: Optional[np.ndarray] = None     # flattened (nx, ny), row-major
    grid_nx: int = 0
    grid_ny: int = 0
    fn: Optional[Callable] = field(default=None, compare=False)

    @staticmethod
    def constant(u, radius: float = math.inf) -> "ControlField":
        u = np.asarray(u, dtype=float)
        if np.any(u < 0) or abs(u.sum() - 1.0) > 1e-12:
            raise ValidationError("u must lie on the probability simplex")
        return ControlField(d=len(u), kind="constant", radius=radius, u_const=u)

    @staticmethod
    def e_d(d: int) -> "ControlField":
        u = np.zeros(d)
        u[-1] = 1.0
        return ControlField(d=d, kind="constant", radius=0.0, u_const=u)

    @staticmethod
    def from_grid(x0: float, h: float, u1_nodes: np.ndarray,
                  radius: Optional[float] = None) -> "ControlField":
        u1 = np.ascontiguousarray(np.asarray(u1_nodes, dtype=float))
        if u1.ndim != 2:
            raise ValidationError("grid control fields need a 2-d node array")
        nx, ny = u1.shape
        r = radius if radius is not None else abs(x0)
        return ControlField(d=2, kind="grid2", radius=float(r), grid_x0=float(x0),
                            grid_h=float(h), grid_u1=u1.ravel().copy(),
                            grid_nx=nx, grid_ny=ny)

    @staticmethod
    def from_callable(d: int, fn: Callable, radius: float = math.inf) -> "ControlField":
        return ControlField(d=d, kind="callable", radius=radius, fn=fn)

    def __call__(self, xhat) -> np.ndarray:
        xhat = np.asarray(xhat, dtype=float)
        ed = np.zeros(self.d)
        ed[-1] = 1.0
        if float(np.linalg.norm(xhat)) > self.radius:
            return ed
        if self.kind == "constant":
            return self.u_const.copy()
        if self.kind == "callable":
            u = np.asarray(self.fn(xhat), dtype=float)
            u = np.clip(u, 0.0, None)
            s = u.sum()
            return u / s if s > 0 else ed
        # grid2: mirror of the kernel interpolation
        from ._kernels import core_py
        u1 = core_py._field_eval_u1(float(xhat[0]), float(xhat[1]), self.radius,
                                    self.grid_x0, self.grid_h, self.grid_nx,
                                    self.grid_ny, self.grid_u1)
        return np.array([u1, 1.0 - u1])


@dataclass(frozen=True)
class ScaledChart:
    """Centering/scaling charts between raw counts and diffusion scale."""

    n: int
    rho: np.ndarray

    def center(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) - self.rho * self.n

    def scale(self, x) -> np.ndarray:
        return self.center(x) / math.sqrt(self.n)

    def unscale(self, xhat) -> np.ndarray:
        return np.asarray(xhat, dtype=float) * math.sqrt(self.n) + self.rho * self.n

    def in_ball(self, x, R: float) -> bool:
        return float(np.linalg.norm(self.center(x))) <= R * math.sqrt(self.n)


# --------------------------------------------------------------------- #
# policy objects
# --------------------------------------------------------------------- #

@dataclass(frozen=True)
class Policy:
    """A scheduling rule: observable state -> feasible allocation.

    ``evaluate(x, h, psi, k)`` must return z in the action set of x.  The
    ``kernel_fields`` hook supplies the compiled-lane encoding; policies
    without one run through the python lane.
    """

    name: str
    evaluate: Callable = field(compare=False)
    kernel_fields: Callable = field(compare=False, default=lambda params: None)
    requires_priority_order: bool = False
    requires_control_field: bool = False


def _base_kernel_fields(d: int) -> dict:
    return {
        "pol_kind": POL_STATIC,
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
        "pol_fn": None,
    }


def static_priority_policy(order: Sequence[int]) -> Policy:
    order = list(order)

    def ev(x, h, psi, k, params):
        return static_priority(x, params.n, order)

    def kf(params):
        f = _base_kernel_fields(params.d)
        f["pol_kind"] = POL_STATIC
        f["pol_order"] = np.array(order, dtype=np.int64)
        return f

    return Policy(name=f"static_priority{tuple(order)}", evaluate=ev,
                  kernel_fields=kf, requires_priority_order=True)


def work_conserving_policy() -> Policy:
    """Static priority in class-index order; the canonical d=1 policy."""

    def ev(x, h, psi, k, params):
        return static_priority(x, params.n, list(range(params.d)))

    def kf(params):
        return _base_kernel_fields(params.d)

    return Policy(name="work_conserving", evaluate=ev, kernel_fields=kf)


def modified_priority_policy() -> Policy:
    def ev(x, h, psi, k, params):
        return modified_priority(x, params.n, params.rho, params.gam)

    def kf(params):
        f = _base_kernel_fields(params.d)
        order, i0, caps, shares = modified_priority_caps(
            params.n, params.rho, params.gam)
        f["pol_kind"] = POL_MODIFIED
        f["pol_order"] = order
        f["pol_i0"] = i0
        f["pol_cap"] = caps
        f["pol_share"] = shares
        return f

    return Policy(name="modified_priority", evaluate=ev, kernel_fields=kf)


def idling_policy(frac: float = 0.5) -> Policy:
    """Deliberately unstable: serve with only a fraction of the servers."""

    def ev(x, h, psi, k, params):
        neff = int(params.n * frac)
        return static_priority(x, neff, list(range(params.d)))

    def kf(params):
        f = _base_kernel_fields(params.d)
        f["pol_kind"] = POL_CAPPED_STATIC
        f["pol_neff"] = int(params.n * frac)
        return f

    return Policy(name=f"idling({frac})", evaluate=ev, kernel_fields=kf)


def inner_region_threshold(n: int, d: int, rho) -> float:
    return math.sqrt(n) * float(np.min(rho)) / (2.0 * d)


def markov_from_control(v: ControlField, params) -> Policy:
    """Quantized queue-ratio policy driven by a control field.

    Inside the inner region the queue vector is the quantized image of
    (<e,x> - n)^+ v(x_scaled); outside it falls back to modified priority.
    """

    def ev(x, h, psi, k, params=params):
        x = np.asarray(x, dtype=np.int64)
        chart = ScaledChart(n=params.n, rho=np.asarray(params.rho))
        xt = chart.scale(x)
        thr = inner_region_threshold(params.n, params.d, params.rho)
        if float(np.max(np.abs(xt))) > thr:
            return modified_priority(x, params.n, params.rho, params.gam)
        qtot = max(int(x.sum()) - params.n, 0)
        if qtot == 0:
            return x.copy()
        q = quantize(qtot * v(xt)).astype(np.int64)
        # clamp to x and push the shortfall back, last class first
        q = np.minimum(q, x)
        rem = qtot - int(q.sum())
        for i in range(params.d - 1, -1, -1):
            if rem <= 0:
                break
            add = min(int(x[i]) - int(q[i]), rem)
            q[i] += add
            rem -= add
        return x - q

    def kf(params=params):
        if params.d != 2 or v.kind == "callable":
            return None
        f = _base_kernel_fields(params.d)
        order, i0, caps, shares = modified_priority_caps(
            params.n, params.rho, params.gam)
        f["pol_kind"] = POL_MARKOV_FIELD
        f["pol_order"] = order
        f["pol_i0"] = i0
        f["pol_cap"] = caps
        f["pol_share"] = shares
        f["pol_thr"] = inner_region_threshold(params.n, params.d, params.rho)
        f["pol_R"] = v.radius
        if v.kind == "grid2":
            f["grid_x0"] = v.grid_x0
            f["grid_h"] = v.grid_h
            f["grid_nx"] = v.grid_nx
            f["grid_ny"] = v.grid_ny
            f["grid_u1"] = v.grid_u1
        else:
            # constant field encoded as a flat 2x2 grid
            f["grid_x0"] = -1.0
            f["grid_h"] = 2.0
            f["grid_nx"] = 2
            f["grid_ny"] = 2
            f["grid_u1"] = np.full(4, float(v.u_const[0]))
        return f

    return Policy(name=f"markov_control[{v.kind}]", evaluate=ev,
                  kernel_fields=kf, requires_control_field=True)


def callable_policy(name: str, fn: Callable) -> Policy:
    """Wrap an arbitrary (x, h, psi, k, params) -> z rule (python lane)."""

    def ev(x, h, psi, k, params):
        return fn(x, h, psi, k, params)

    return Policy(name=name, evaluate=ev, kernel_fields=lambda params: None)
