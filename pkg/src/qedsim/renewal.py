"""Interarrival / downtime distributions and their residual-life kernels.

All distributions are normalized to mean 1.  On top of plain sampling the
module exposes the hazard rate, the first- and second-order residual-life
transforms (``eta``, ``kappa``, ``upalpha``), the mean residual life, and a
finite-difference check of the differential identities these transforms
satisfy.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize

from .errors import DomainError, ValidationError

log = logging.getLogger(__name__)

# integer codes shared with the simulation kernels
KIND_EXPONENTIAL = 0
KIND_ERLANG = 1
KIND_HYPEREXP = 2
KIND_USER = 3

_KIND_NAMES = {
    KIND_EXPONENTIAL: "exponential",
    KIND_ERLANG: "erlang",
    KIND_HYPEREXP: "hyperexponential",
    KIND_USER: "user",
}

#: default bound on the mean residual life used by validation probes
DEFAULT_MRL_BOUND = 100.0


@dataclass(frozen=True)
class RenewalDist:
    """A positive, mean-1 interarrival (or downtime) distribution.

    Built-in kinds carry closed-form survival, density and tail integrals;
    user-defined kinds supply callbacks (cdf, density, first tail integral)
    and the second tail integral is computed by adaptive quadrature.
    """

    kind: int
    scv: float
    k: int = 1                                 # erlang order
    probs: tuple = ()                          # hyperexponential mixing probs
    rates: tuple = ()                          # hyperexponential phase rates
    cdf_fn: Optional[Callable[[float], float]] = None
    pdf_fn: Optional[Callable[[float], float]] = None
    tail1_fn: Optional[Callable[[float], float]] = None
    sampler: Optional[Callable] = field(default=None, compare=False)
    name: str = ""

    # ------------------------------------------------------------------ #
    # constructors
    # ------------------------------------------------------------------ #

    @staticmethod
    def exponential() -> "RenewalDist":
        return RenewalDist(kind=KIND_EXPONENTIAL, scv=1.0, name="exponential")

    @staticmethod
    def erlang(k: int) -> "RenewalDist":
        if k < 1:
            raise ValidationError(f"erlang order must be >= 1, got {k}")
        return RenewalDist(kind=KIND_ERLANG, scv=1.0 / k, k=int(k), name=f"erlang({k})")

    @staticmethod
    def hyperexponential(probs: Sequence[float], rates: Sequence[float]) -> "RenewalDist":
        """Mixture of exponentials, rescaled to mean 1 (scale factor logged)."""
        p = np.asarray(probs, dtype=float)
        r = np.asarray(rates, dtype=float)
        if p.shape != r.shape or p.ndim != 1 or len(p) < 1:
            raise ValidationError("probs and rates must be 1-d arrays of equal length")
        if np.any(p <= 0) or np.any(r <= 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValidationError("probs must be positive and sum to 1; rates positive")
        mean = float(np.sum(p / r))
        if abs(mean - 1.0) > 1e-12:
            log.info("hyperexponential rescaled to mean 1 (scale factor %.6g)", mean)
            r = r * mean
        second = float(np.sum(2.0 * p / r**2))
        return RenewalDist(
            kind=KIND_HYPEREXP,
            scv=second - 1.0,
            probs=tuple(p),
            rates=tuple(r),
            name=f"hyperexponential(scv={second - 1.0:.3g})",
        )

    @staticmethod
    def hyperexponential_scv(scv: float) -> "RenewalDist":
        """Two-phase balanced-means hyperexponential with the given scv > 1."""
        if scv <= 1.0:
            raise ValidationError(f"hyperexponential requires scv > 1, got {scv}")
        delta = math.sqrt((scv - 1.0) / (scv + 1.0))
        p1 = 0.5 * (1.0 + delta)
        p2 = 0.5 * (1.0 - delta)
        return RenewalDist.hyperexponential([p1, p2], [2.0 * p1, 2.0 * p2])

    @staticmethod
    def from_callbacks(
        cdf: Callable[[float], float],
        pdf: Callable[[float], float],
        tail1: Callable[[float], float],
        scv: float,
        sampler: Optional[Callable] = None,
        name: str = "user",
        validate: bool = True,
    ) -> "RenewalDist":
        """User-defined distribution from cdf / density / tail-integral callbacks.

        The callbacks are rescaled to mean 1 automatically; the mean is read
        off the tail integral at 0 and the applied scale factor is logged.
        """
        mean = float(tail1(0.0))
        if not math.isfinite(mean) or mean <= 0:
            raise ValidationError(f"tail integral at 0 must be a positive mean, got {mean}")
        if abs(mean - 1.0) > 1e-9:
            log.info("user distribution rescaled to mean 1 (scale factor %.6g)", mean)
            c = mean
            base_cdf, base_pdf, base_tail1 = cdf, pdf, tail1
            cdf = lambda t: base_cdf(c * t)              # noqa: E731
            pdf = lambda t: c * base_pdf(c * t)          # noqa: E731
            tail1 = lambda t: base_tail1(c * t) / c      # noqa: E731
            if sampler is not None:
                base_sampler = sampler
                sampler = lambda rng: base_sampler(rng) / c  # noqa: E731
        dist = RenewalDist(
            kind=KIND_USER, scv=float(scv),
            cdf_fn=cdf, pdf_fn=pdf, tail1_fn=tail1, sampler=sampler, name=name,
        )
        if validate:
            dist.validate()
        return dist

    @staticmethod
    def from_config(spec: dict) -> "RenewalDist":
        """Build from a config mapping: {"kind": ..., **params}."""
        kind = spec.get("kind")
        if kind == "exponential":
            return RenewalDist.exponential()
        if kind == "erlang":
            return RenewalDist.erlang(int(spec["k"]))
        if kind == "hyperexponential":
            if "scv" in spec:
                return RenewalDist.hyperexponential_scv(float(spec["scv"]))
            return RenewalDist.hyperexponential(spec["probs"], spec["rates"])
        if kind == "deterministic":
            raise ValidationError("deterministic interarrival times are not supported "
                                  "(hazard rate undefined)")
        raise ValidationError(f"unknown distribution kind {kind!r}")

    # ------------------------------------------------------------------ #
    # distribution functions (all mean-1)
    # ------------------------------------------------------------------ #

    def sf(self, t: float) -> float:
        """Survival function 1 - F(t)."""
        if t <= 0.0:
            return 1.0
        if self.kind == KIND_EXPONENTIAL:
            return math.exp(-t)
        if self.kind == KIND_ERLANG:
            kt = self.k * t
            term, acc = 1.0, 1.0
            for j in range(1, self.k):
                term *= kt / j
                acc += term
            return math.exp(-kt) * acc
        if self.kind == KIND_HYPEREXP:
            return float(sum(p * math.exp(-r * t) for p, r in zip(self.probs, self.rates)))
        return 1.0 - float(self.cdf_fn(t))

    def cdf(self, t: float) -> float:
        return 1.0 - self.sf(t)

    def pdf(self, t: float) -> float:
        if t < 0.0:
            return 0.0
        if self.kind == KIND_EXPONENTIAL:
            return math.exp(-t)
        if self.kind == KIND_ERLANG:
            kt = self.k * t
            if kt == 0.0:
                return float(self.k) if self.k == 1 else 0.0
            return self.k * kt ** (self.k - 1) * math.exp(-kt) / math.factorial(self.k - 1)
        if self.kind == KIND_HYPEREXP:
            return float(sum(p * r * math.exp(-r * t) for p, r in zip(self.probs, self.rates)))
        return float(self.pdf_fn(t))

    def tail1(self, t: float) -> float:
        """First tail integral: integral of sf over [t, inf)."""
        if t <= 0.0:
            t = 0.0
        if self.kind == KIND_EXPONENTIAL:
            return math.exp(-t)
        if self.kind == KIND_ERLANG:
            kt = self.k * t
            term, acc = 1.0, float(self.k)
            for j in range(1, self.k):
                term *= kt / j
                acc += (self.k - j) * term
            return math.exp(-kt) * acc / self.k
        if self.kind == KIND_HYPEREXP:
            return float(sum(p / r * math.exp(-r * t) for p, r in zip(self.probs, self.rates)))
        return float(self.tail1_fn(t))

    def tail2(self, t: float) -> float:
        """Second tail integral: integral of tail1 over [t, inf)."""
        if t <= 0.0:
            t = 0.0
        if self.kind == KIND_EXPONENTIAL:
            return math.exp(-t)
        if self.kind == KIND_ERLANG:
            kt = self.k * t
            term, acc = 1.0, self.k * (self.k + 1) / 2.0
            for j in range(1, self.k):
                term *= kt / j
                m = self.k - j
                acc += m * (m + 1) / 2.0 * term
            return math.exp(-kt) * acc / self.k**2
        if self.kind == KIND_HYPEREXP:
            return float(sum(p / r**2 * math.exp(-r * t) for p, r in zip(self.probs, self.rates)))
        val, _ = integrate.quad(self.tail1_fn, t, np.inf, epsrel=1e-9, limit=200)
        return float(val)

    # ------------------------------------------------------------------ #
    # sampling
    # ------------------------------------------------------------------ #

    def sample(self, rng: np.random.Generator) -> float:
        """One draw; consumes the generator in the same order as the kernels."""
        if self.kind == KIND_EXPONENTIAL:
            return float(rng.standard_exponential())
        if self.kind == KIND_ERLANG:
            acc = 0.0
            for _ in range(self.k):
                acc += rng.standard_exponential()
            return acc / self.k
        if self.kind == KIND_HYPEREXP:
            u = rng.random()
            acc = 0.0
            for p, r in zip(self.probs, self.rates):
                acc += p
                if u < acc:
                    return float(rng.standard_exponential() / r)
            return float(rng.standard_exponential() / self.rates[-1])
        if self.sampler is not None:
            return float(self.sampler(rng))
        # numeric inversion fallback for user-defined kinds
        u = rng.random()
        lo, hi = 0.0, 1.0
        while self.cdf(hi) < u:
            hi *= 2.0
            if hi > 1e9:
                raise DomainError("numeric inversion failed: cdf never reaches the target")
        return float(optimize.brentq(lambda t: self.cdf(t) - u, lo, hi, xtol=1e-12))

    def sample_many(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Vectorized draws (law-equivalent to repeated sample())."""
        if self.kind == KIND_EXPONENTIAL:
            return rng.standard_exponential(size)
        if self.kind == KIND_ERLANG:
            return rng.standard_exponential((size, self.k)).sum(axis=1) / self.k
        if self.kind == KIND_HYPEREXP:
            comp = rng.choice(len(self.probs), size=size, p=np.asarray(self.probs))
            return rng.standard_exponential(size) / np.asarray(self.rates)[comp]
        return np.array([self.sample(rng) for _ in range(size)])

    # ------------------------------------------------------------------ #
    # validation / kernel export
    # ------------------------------------------------------------------ #

    def validate(self, mrl_bound: float = DEFAULT_MRL_BOUND) -> None:
        """Probe structural constraints on a grid; warn on a loose MRL bound.

        Probes stay within [0, 30] (in mean units): beyond that 1 - F(t)
        underflows double precision for light-tailed laws and the F < 1
        constraint cannot be distinguished from rounding.
        """
        probes = np.linspace(0.0, 30.0, 301)
        prev = 0.0
        if abs(self.cdf(0.0)) > 1e-12:
            raise ValidationError("cdf(0) must be 0 for interarrival kinds")
        for t in probes[1:]:
            ft = self.cdf(float(t))
            if ft < prev - 1e-12:
                raise ValidationError(f"cdf is decreasing near t={t:.4g}")
            if ft >= 1.0:
                raise ValidationError(f"cdf reaches 1 at finite t={t:.4g}")
            df = self.pdf(float(t))
            if not math.isfinite(df):
                raise ValidationError(f"density is not finite at t={t:.4g}")
            # a jump in the cdf that the density cannot explain means an atom
            step = probes[1] - probes[0]
            bound = (self.pdf(float(t)) + self.pdf(float(t - step))) * step * 5.0 + 1e-6
            if ft - prev > bound:
                raise ValidationError(f"cdf jumps near t={t:.4g} (atoms are not supported)")
            prev = ft
        sup_mrl = max(mrl(self, float(t)) for t in probes if self.sf(float(t)) > 0.0)
        if sup_mrl > mrl_bound:
            log.warning("mean residual life exceeds the configured bound: %.3g > %.3g",
                        sup_mrl, mrl_bound)

    def kernel_code(self):
        """(kind, k, probs, rates) tuple consumed by the simulation kernels."""
        if self.kind == KIND_USER:
            raise ValidationError("user-defined distributions have no compiled kernel code")
        return (
            self.kind,
            self.k,
            np.asarray(self.probs, dtype=np.float64),
            np.asarray(self.rates, dtype=np.float64),
        )


@dataclass(frozen=True)
class DowntimeDist:
    """Downtime distribution: a mean-1 base duration divided by theta_n > 0."""

    base: RenewalDist
    theta_n: float

    def __post_init__(self):
        if self.theta_n <= 0:
            raise ValidationError(f"theta_n must be positive, got {self.theta_n}")

    def sample(self, rng: np.random.Generator) -> float:
        return self.base.sample(rng) / self.theta_n

    def mean(self) -> float:
        return 1.0 / self.theta_n


# ---------------------------------------------------------------------- #
# residual-life kernels
# ---------------------------------------------------------------------- #

def _survival_at(dist: RenewalDist, y: float) -> float:
    s = dist.sf(y)
    if s <= 0.0:
        raise DomainError(f"survival function vanishes at {y:.6g}")
    return s


def hazard_scaled(dist: RenewalDist, rate: float, h: float) -> float:
    """Hazard of the rate-scaled interarrival time at age h."""
    if h < 0 or rate <= 0:
        raise DomainError("need h >= 0 and rate > 0")
    y = rate * h
    return rate * dist.pdf(y) / _survival_at(dist, y)


def eta(dist: RenewalDist, rate: float, h: float) -> float:
    """One minus the mean-residual-life ratio at scaled age rate*h."""
    if h < 0:
        raise DomainError("age must be nonnegative")
    y = rate * h
    return 1.0 - dist.tail1(y) / _survival_at(dist, y)


def kappa(dist: RenewalDist, rate: float, h: float) -> float:
    """Second-order residual life minus (scv+1)/2 times the first order."""
    if h < 0:
        raise DomainError("age must be nonnegative")
    y = rate * h
    s = _survival_at(dist, y)
    return dist.tail2(y) / s - 0.5 * (dist.scv + 1.0) * dist.tail1(y) / s


def upalpha(downtime: DowntimeDist, k: float) -> float:
    """Downtime analogue of eta, evaluated at scaled age theta_n * k."""
    return eta(downtime.base, downtime.theta_n, k)


def mrl(dist: RenewalDist, t: float) -> float:
    """Mean residual life at (unscaled) age t."""
    if t < 0:
        raise DomainError("age must be nonnegative")
    return dist.tail1(t) / _survival_at(dist, t)


# ---------------------------------------------------------------------- #
# identity checks
# ---------------------------------------------------------------------- #

_FD_STEP = 1e-6


def _deriv(f: Callable[[float], float], h: float) -> float:
    """Central finite difference, one-sided at the left boundary."""
    step = _FD_STEP * max(1.0, abs(h))
    if h >= step:
        return (f(h + step) - f(h - step)) / (2.0 * step)
    return (f(h + step) - f(h)) / step


def identity_residuals(dist: RenewalDist, rate: float, h: float) -> tuple:
    """Residuals of the three hazard/residual-life identities at age h.

    The first couples eta with the hazard, the second couples kappa with
    eta, and the third is the downtime analogue (same algebra with the
    given rate playing the role of the downtime scale).
    """
    r = hazard_scaled(dist, rate, h)
    e = eta(dist, rate, h)
    kap = kappa(dist, rate, h)
    de = _deriv(lambda a: eta(dist, rate, a), h)
    dk = _deriv(lambda a: kappa(dist, rate, a), h)
    res1 = de - e * r - (rate - r)
    res2 = dk - r * kap - (e + 0.5 * (dist.scv - 1.0)) * rate
    # downtime analogue: same dist used as the base, scale = rate
    down = DowntimeDist(base=dist, theta_n=rate)
    a = upalpha(down, h)
    da = _deriv(lambda x: upalpha(down, x), h)
    res3 = da - r * a - (rate - r)
    return res1, res2, res3


def check_identities(dist: RenewalDist, rate: float, grid) -> float:
    """Max absolute identity residual over an age grid."""
    worst = 0.0
    for h in np.asarray(grid, dtype=float):
        for res in identity_residuals(dist, rate, float(h)):
            worst = max(worst, abs(res))
    return worst
