"""System primitives: per-system rates, environment, and limit data."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .renewal import DowntimeDist, RenewalDist

_ATOL = 1e-9


@dataclass(frozen=True)
class SystemParams:
    """Parameters of one d-class system plus the limiting regime data.

    The per-system rates (``lam_n``, ``mu_n``, ``gam_n``) describe the
    actual simulated system; the limit fields (``lam``, ``mu``, ``gam``,
    ``beta``, ``vartheta``) describe the regime the system is embedded in
    and feed the diffusion model and the scaling diagnostics.
    """

    n: int
    d: int
    lam_n: np.ndarray
    mu_n: np.ndarray
    gam_n: np.ndarray
    arrival: tuple
    lam: np.ndarray
    mu: np.ndarray
    gam: np.ndarray
    beta_u_n: float = 0.0
    downtime: Optional[DowntimeDist] = None
    beta: float = 0.0
    vartheta: float = 0.0
    ell_limit: Optional[np.ndarray] = None

    @property
    def rho(self) -> np.ndarray:
        return self.lam / self.mu

    @property
    def ell_n(self) -> np.ndarray:
        """Drift offsets of this system: (lam_n - n mu_n rho) / sqrt(n)."""
        return (self.lam_n - self.n * self.mu_n * self.rho) / math.sqrt(self.n)

    @property
    def ell(self) -> np.ndarray:
        return self.ell_limit if self.ell_limit is not None else self.ell_n

    @property
    def scv(self) -> np.ndarray:
        return np.array([a.scv for a in self.arrival])

    @property
    def rho_n(self) -> float:
        """Criticality diagnostic sqrt(n)(1 - sum lam_n / (n mu_n))."""
        return math.sqrt(self.n) * (1.0 - float(np.sum(self.lam_n / (self.n * self.mu_n))))

    @property
    def has_env(self) -> bool:
        return self.downtime is not None and self.beta_u_n > 0.0

    # ------------------------------------------------------------------ #

    def validate(self) -> None:
        problems = []
        if self.n < 1:
            problems.append(f"n must be >= 1, got {self.n}")
        if self.d < 1 or len(self.lam_n) != self.d:
            problems.append("d and rate vector lengths disagree")
        if np.any(self.lam_n < 0) or np.any(self.mu_n <= 0) or np.any(self.gam_n < 0):
            problems.append("per-system rates must satisfy lam_n >= 0, mu_n > 0, gam_n >= 0")
        if np.any(self.lam <= 0) or np.any(self.mu <= 0) or np.any(self.gam < 0):
            problems.append("limit rates must satisfy lam > 0, mu > 0, gam >= 0")
        rho = self.rho
        if abs(float(rho.sum()) - 1.0) > _ATOL:
            problems.append(f"limit traffic intensities must sum to 1, got {rho.sum():.6g}")
        if self.d > 1 and np.any(rho >= 1.0):
            problems.append("each limit traffic intensity must be < 1")
        if self.gam_n[-1] <= 0.0 or self.gam[-1] <= 0.0:
            problems.append("the last class must have positive abandonment rate")
        if len(self.arrival) != self.d:
            problems.append("need one interarrival distribution per class")
        if self.downtime is not None:
            if self.beta_u_n <= 0.0:
                problems.append("environment requires a positive up-time rate")
            if self.beta <= 0.0 or self.vartheta <= 0.0:
                problems.append("environment requires positive limit beta and vartheta")
        if problems:
            raise ValidationError("; ".join(problems))

    # ------------------------------------------------------------------ #

    @staticmethod
    def build(
        n: int,
        lam_n: Sequence[float],
        mu_n: Sequence[float],
        gam_n: Sequence[float],
        lam: Sequence[float],
        mu: Sequence[float],
        gam: Sequence[float],
        arrival: Optional[Sequence[RenewalDist]] = None,
        beta_u_n: float = 0.0,
        downtime: Optional[DowntimeDist] = None,
        beta: float = 0.0,
        vartheta: float = 0.0,
        ell_limit: Optional[Sequence[float]] = None,
        validate: bool = True,
    ) -> "SystemParams":
        d = len(lam_n)
        if arrival is None:
            arrival = tuple(RenewalDist.exponential() for _ in range(d))
        params = SystemParams(
            n=int(n), d=d,
            lam_n=np.asarray(lam_n, dtype=float),
            mu_n=np.asarray(mu_n, dtype=float),
            gam_n=np.asarray(gam_n, dtype=float),
            arrival=tuple(arrival),
            lam=np.asarray(lam, dtype=float),
            mu=np.asarray(mu, dtype=float),
            gam=np.asarray(gam, dtype=float),
            beta_u_n=float(beta_u_n),
            downtime=downtime,
            beta=float(beta),
            vartheta=float(vartheta),
            ell_limit=None if ell_limit is None else np.asarray(ell_limit, dtype=float),
        )
        if validate:
            params.validate()
        return params

    @staticmethod
    def halfin_whitt(
        n: int,
        lam: Sequence[float],
        mu: Sequence[float],
        gam: Sequence[float],
        lam_hat: Optional[Sequence[float]] = None,
        mu_hat: Optional[Sequence[float]] = None,
        arrival: Optional[Sequence[RenewalDist]] = None,
        beta: float = 0.0,
        vartheta: float = 0.0,
        downtime_base: Optional[RenewalDist] = None,
        validate: bool = True,
    ) -> "SystemParams":
        """The n-th member of a critically loaded family.

        lam_n = n lam + sqrt(n) lam_hat, mu_n = mu + mu_hat / sqrt(n),
        up-time rate beta, downtime scale vartheta sqrt(n).
        """
        lam = np.asarray(lam, dtype=float)
        mu = np.asarray(mu, dtype=float)
        gam = np.asarray(gam, dtype=float)
        d = len(lam)
        lam_hat = np.zeros(d) if lam_hat is None else np.asarray(lam_hat, dtype=float)
        mu_hat = np.zeros(d) if mu_hat is None else np.asarray(mu_hat, dtype=float)
        sqn = math.sqrt(n)
        lam_n = n * lam + sqn * lam_hat
        mu_n = mu + mu_hat / sqn
        downtime = None
        if downtime_base is not None:
            downtime = DowntimeDist(base=downtime_base, theta_n=vartheta * sqn)
        ell_limit = lam_hat - (lam / mu) * mu_hat
        return SystemParams.build(
            n=n, lam_n=lam_n, mu_n=mu_n, gam_n=gam,
            lam=lam, mu=mu, gam=gam, arrival=arrival,
            beta_u_n=beta, downtime=downtime, beta=beta, vartheta=vartheta,
            ell_limit=ell_limit, validate=validate,
        )

    def with_n(self, n: int) -> "SystemParams":
        """Rebuild this parameter point at another n along the same family."""
        lam = self.lam
        mu = self.mu
        sq_old = math.sqrt(self.n)
        lam_hat = (self.lam_n - self.n * lam) / sq_old
        mu_hat = (self.mu_n - mu) * sq_old
        sqn = math.sqrt(n)
        downtime = None
        if self.downtime is not None:
            downtime = DowntimeDist(base=self.downtime.base, theta_n=self.vartheta * sqn)
        return replace(
            self,
            n=int(n),
            lam_n=n * lam + sqn * lam_hat,
            mu_n=mu + mu_hat / sqn,
            downtime=downtime,
        )


# --------------------------------------------------------------------- #
# scaling-regime diagnostics
# --------------------------------------------------------------------- #

@dataclass
class ScalingRow:
    n: int
    ell_n: np.ndarray
    rho_n: float
    theta_ratio: float


@dataclass
class ScalingReport:
    rows: list
    ell_converges: bool
    rho_converges: bool
    theta_converges: bool
    flags: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.ell_converges and self.rho_converges and self.theta_converges


def _cauchy_like(values: np.ndarray) -> bool:
    """Crude convergence probe: late differences dominated by early ones."""
    if len(values) < 2:
        return True
    diffs = np.abs(np.diff(values, axis=0))
    if diffs.ndim > 1:
        diffs = diffs.max(axis=1)
    first, last = float(diffs[0]), float(diffs[-1])
    return last <= 0.5 * first + 1e-9


def validate_halfin_whitt(params_sequence: Sequence[SystemParams]) -> ScalingReport:
    """Tabulate the scaling diagnostics across n and flag non-convergence."""
    seq = sorted(params_sequence, key=lambda p: p.n)
    rows = []
    for p in seq:
        ratio = 0.0
        if p.downtime is not None:
            ratio = p.downtime.theta_n / math.sqrt(p.n)
        rows.append(ScalingRow(n=p.n, ell_n=p.ell_n, rho_n=p.rho_n, theta_ratio=ratio))
    ells = np.array([r.ell_n for r in rows])
    rhos = np.array([r.rho_n for r in rows])
    thetas = np.array([r.theta_ratio for r in rows])
    report = ScalingReport(
        rows=rows,
        ell_converges=_cauchy_like(ells),
        rho_converges=_cauchy_like(rhos),
        theta_converges=(not any(p.downtime is not None for p in seq))
        or _cauchy_like(thetas),
    )
    if not report.ell_converges:
        report.flags.append("drift offsets ell_n do not settle: system not critically loaded")
    if not report.rho_converges:
        report.flags.append("criticality diagnostic rho_n diverges")
    if not report.theta_converges:
        report.flags.append("downtime scale theta_n does not grow like sqrt(n)")
    return report
