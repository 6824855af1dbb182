"""Smooth test functions with analytic derivatives.

Used by the generator-residual checks: compactly supported bumps and
polynomials tapered by a smooth cutoff.  All callables are vectorized
over (N, d) state arrays and expose value, gradient, and the diagonal of
the Hessian (the diffusion matrix is diagonal, so off-diagonal terms are
never needed).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class TestFunction:
    name: str
    value: Callable
    grad: Callable
    hess_diag: Callable
    support_radius: float


def constant(d: int, c: float = 1.0) -> TestFunction:
    return TestFunction(
        name=f"const({c})",
        value=lambda x: np.full(np.atleast_2d(x).shape[0], c),
        grad=lambda x: np.zeros_like(np.atleast_2d(x), dtype=float),
        hess_diag=lambda x: np.zeros_like(np.atleast_2d(x), dtype=float),
        support_radius=np.inf,
    )


def linear_total(d: int) -> TestFunction:
    """f(x) = <e, x>."""
    return TestFunction(
        name="linear_total",
        value=lambda x: np.atleast_2d(x).sum(axis=1),
        grad=lambda x: np.ones_like(np.atleast_2d(x), dtype=float),
        hess_diag=lambda x: np.zeros_like(np.atleast_2d(x), dtype=float),
        support_radius=np.inf,
    )


def quadratic(d: int) -> TestFunction:
    """f(x) = |x|^2."""
    return TestFunction(
        name="quadratic",
        value=lambda x: (np.atleast_2d(x) ** 2).sum(axis=1),
        grad=lambda x: 2.0 * np.atleast_2d(x),
        hess_diag=lambda x: np.full_like(np.atleast_2d(x), 2.0, dtype=float),
        support_radius=np.inf,
    )


def _bump_parts(x, R):
    """phi(r2) = exp(-1/(1 - r2/R^2)) inside |x| < R, 0 outside."""
    x = np.atleast_2d(x)
    r2 = (x**2).sum(axis=1)
    inside = r2 < R * R * (1.0 - 1e-12)
    s = np.where(inside, r2 / (R * R), 0.0)
    g = 1.0 - s
    val = np.where(inside, np.exp(-1.0 / np.where(inside, g, 1.0)), 0.0)
    return x, r2, inside, g, val


def bump(d: int, R: float = 4.0) -> TestFunction:
    """Radial bump supported on the ball of radius R."""

    def value(x):
        return _bump_parts(x, R)[4]

    def grad(x):
        x, r2, inside, g, val = _bump_parts(x, R)
        # d/dxi = val * (-1/g^2) * (2 xi / R^2)
        coef = np.where(inside, -val / np.where(inside, g * g, 1.0), 0.0)
        return coef[:, None] * (2.0 * x / (R * R))

    def hess_diag(x):
        x, r2, inside, g, val = _bump_parts(x, R)
        gg = np.where(inside, g, 1.0)
        a = 2.0 / (R * R)
        # second derivative of exp(-1/g(s)) with s = r2/R^2 via chain rule
        dval = -val / gg**2
        d2val = val / gg**4 - 2.0 * val / gg**3
        out = d2val[:, None] * (a * x) ** 2 + dval[:, None] * a
        return np.where(inside[:, None], out, 0.0)

    return TestFunction(name=f"bump(R={R})", value=value, grad=grad,
                        hess_diag=hess_diag, support_radius=R)


def poly_cutoff(d: int, axis: int, power: int, R: float = 5.0) -> TestFunction:
    """x_axis^power times the radial bump: odd/even polynomial probes."""
    base = bump(d, R)

    def value(x):
        x2 = np.atleast_2d(x)
        return x2[:, axis] ** power * base.value(x2)

    def grad(x):
        x2 = np.atleast_2d(x)
        p = x2[:, axis] ** power
        g = p[:, None] * base.grad(x2)
        dp = power * x2[:, axis] ** (power - 1) if power >= 1 else np.zeros(len(x2))
        g[:, axis] += dp * base.value(x2)
        return g

    def hess_diag(x):
        x2 = np.atleast_2d(x)
        p = x2[:, axis] ** power
        dp = power * x2[:, axis] ** (power - 1) if power >= 1 else np.zeros(len(x2))
        d2p = (power * (power - 1) * x2[:, axis] ** (power - 2)
               if power >= 2 else np.zeros(len(x2)))
        bv = base.value(x2)
        bg = base.grad(x2)
        bh = base.hess_diag(x2)
        out = p[:, None] * bh
        out[:, axis] += 2.0 * dp * bg[:, axis] + d2p * bv
        return out

    return TestFunction(name=f"x{axis}^{power}*bump(R={R})", value=value,
                        grad=grad, hess_diag=hess_diag, support_radius=R)


def default_library(d: int) -> list:
    """Six smooth compactly supported probes."""
    fns = [
        bump(d, R=3.0),
        bump(d, R=6.0),
        poly_cutoff(d, axis=0, power=1, R=5.0),
        poly_cutoff(d, axis=0, power=2, R=5.0),
        poly_cutoff(d, axis=min(1, d - 1), power=1, R=4.0),
        poly_cutoff(d, axis=min(1, d - 1), power=3, R=6.0),
    ]
    return fns
