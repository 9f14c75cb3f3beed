"""Hourly-aggregated M/D/1 alert queue with a degrading service rate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal

import numpy as np
from scipy import stats

from . import _kernels as K
from .rng import ENV, Rng, derive_state

DEFAULT_INITIAL_BACKLOG = 1175


@dataclass(frozen=True)
class DisturbanceModel:
    """Per-hour multiplicative factor on the nominal service rate.

    ``mode="fixed"`` pins the service at the nominal rate.  Factors must lie
    in ``(0, 1]``: the service rate can only degrade.
    """

    mode: Literal["fixed", "hourly"] = "hourly"
    factors: tuple[float, ...] = (1.0, 0.975)
    probs: tuple[float, ...] = (0.95, 0.05)

    def __post_init__(self):
        if self.mode not in ("fixed", "hourly"):
            raise ValueError(f"unknown disturbance mode {self.mode!r}")
        if len(self.factors) != len(self.probs) or not self.factors:
            raise ValueError("factors and probs must be nonempty and of equal length")
        if any(not (0.0 < f <= 1.0) for f in self.factors):
            raise ValueError("service factors must lie in (0, 1]")
        if any(p < 0 for p in self.probs) or not math.isclose(sum(self.probs), 1.0, abs_tol=1e-9):
            raise ValueError("probs must be nonnegative and sum to 1")

    @classmethod
    def fixed(cls) -> "DisturbanceModel":
        return cls(mode="fixed", factors=(1.0,), probs=(1.0,))

    def capacity_table(self, mu: float) -> tuple[np.ndarray, np.ndarray]:
        """Integer hourly capacities and their cumulative probabilities."""
        if self.mode == "fixed":
            return np.array([int(math.floor(mu + 1e-9))], dtype=np.int64), np.ones(1)
        caps = np.array([int(math.floor(mu * f + 1e-9)) for f in self.factors], dtype=np.int64)
        cum = np.cumsum(np.asarray(self.probs, dtype=np.float64))
        cum[-1] = 1.0
        return caps, cum


@dataclass(frozen=True)
class QueueParams:
    lambda_nominal: float = 1919.0
    mu_nominal: float = 1920.0
    disturbance: DisturbanceModel = field(default_factory=DisturbanceModel)

    def __post_init__(self):
        for name in ("lambda_nominal", "mu_nominal"):
            v = getattr(self, name)
            if not math.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be finite and positive, got {v}")
        if self.rho >= 1.0:
            raise ValueError(f"queue is unstable: rho = {self.rho:.6f} >= 1")

    @property
    def rho(self) -> float:
        return self.lambda_nominal / self.mu_nominal

    def with_disturbance(self, disturbance: DisturbanceModel) -> "QueueParams":
        return QueueParams(self.lambda_nominal, self.mu_nominal, disturbance)


@dataclass(frozen=True)
class HourOutcome:
    arrivals: int
    served: int
    backlog_after: int
    capacity: int = 0


def _check_rate(rate: float) -> float:
    rate = float(rate)
    if not math.isfinite(rate) or rate <= 0:
        raise ValueError(f"Poisson rate must be finite and positive, got {rate}")
    return rate


@lru_cache(maxsize=64)
def poisson_tables(rate: float) -> tuple[np.ndarray, np.ndarray]:
    """CDF and survival tables used by the inversion sampler."""
    rate = _check_rate(rate)
    kmax = int(math.ceil(rate + 14.0 * math.sqrt(rate) + 40.0))
    k = np.arange(kmax + 1)
    cdf = stats.poisson.cdf(k, rate).astype(np.float64)
    sf = stats.poisson.sf(k, rate).astype(np.float64)
    cdf.setflags(write=False)
    sf.setflags(write=False)
    return cdf, sf


def poisson_arrivals(rate: float, rng: Rng, size: int | None = None):
    """Exact Poisson(rate) draw(s) by table inversion, advancing ``rng``."""
    cdf, sf = poisson_tables(_check_rate(rate))
    if size is None:
        return int(K.poisson_draw(cdf, sf, rng.state))
    out = np.empty(int(size), dtype=np.int64)
    K.poisson_fill(cdf, sf, rng.state, out)
    return out


def step_backlog(prev_backlog: int, arrivals: int, capacity: int) -> HourOutcome:
    if prev_backlog < 0 or arrivals < 0 or capacity < 0:
        raise ValueError("backlog, arrivals and capacity must be nonnegative")
    total = prev_backlog + arrivals
    served = min(capacity, total)
    return HourOutcome(arrivals=arrivals, served=served, backlog_after=total - served,
                       capacity=capacity)


def transition_pmf(lam: float, mu: int, delta: int) -> float:
    """P(A - Z = delta) for A ~ Poisson(lam), Z = mu.

    Interior kernel only: the zero floor of the backlog is not applied.
    """
    lam = _check_rate(lam)
    if not math.isfinite(mu) or mu < 0 or int(mu) != mu:
        raise ValueError(f"mu must be a nonnegative integer, got {mu}")
    if not math.isfinite(delta):
        raise ValueError("delta must be finite")
    k = int(delta) + int(mu)
    if k < 0:
        return 0.0
    return float(stats.poisson.pmf(k, lam))


def natural_arrays(params: QueueParams, horizon: int, seed: int = 0,
                   initial_backlog: int = DEFAULT_INITIAL_BACKLOG,
                   state: np.ndarray | None = None):
    """Arrays ``(arrivals, served, backlog_after, capacity)`` of a natural trace.

    The stream is the environment stream of run 0 for ``seed`` (or an
    explicit ``state``), so it matches the arrivals of an attack-free episode.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if initial_backlog < 0:
        raise ValueError("initial backlog must be nonnegative")
    cdf, sf = poisson_tables(params.lambda_nominal)
    caps, cum = params.disturbance.capacity_table(params.mu_nominal)
    s = derive_state(seed, 0, ENV) if state is None else np.array(state, dtype=np.int64)
    arr = np.empty(horizon, dtype=np.int64)
    served = np.empty(horizon, dtype=np.int64)
    back = np.empty(horizon, dtype=np.int64)
    cap = np.empty(horizon, dtype=np.int64)
    mode = 0 if params.disturbance.mode == "fixed" else 1
    K.natural_trace(int(initial_backlog), cdf, sf, caps, cum, mode, s, arr, served, back, cap)
    return arr, served, back, cap


def simulate_natural_trace(params: QueueParams, horizon: int, seed: int = 0,
                           initial_backlog: int = DEFAULT_INITIAL_BACKLOG) -> list[HourOutcome]:
    arr, served, back, cap = natural_arrays(params, horizon, seed, initial_backlog)
    return [HourOutcome(int(a), int(s), int(b), int(c))
            for a, s, b, c in zip(arr, served, back, cap)]
