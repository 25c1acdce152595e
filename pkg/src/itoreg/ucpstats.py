"""Empirical ucp distances, tightness reports, and moment estimates.

A limit claim "F^eps -> target in ucp" is operationalized over a finite eps
schedule as: the empirical exceedance probability at the smallest eps is
below a level eta, and exceedance is non-increasing across the schedule up
to confidence-interval overlap.  sup over [0, T] always means the max over
grid nodes; the functionals under study are themselves grid-defined.

Binomial confidence intervals are Wilson score intervals at 95%; moment
confidence intervals are CLT-based (1.96 times the standard error of the
mean).  All reductions use the fixed pairwise summation tree from
``itoreg.numerics``, so results are independent of worker count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence, Union

import numpy as np

from .errors import ContractViolation, DataError
from .numerics import pairwise_mean, pairwise_sum, wilson_halfwidth
from .pathkit import SamplePath

Functional = Union[SamplePath, np.ndarray, float]


def _as_array(f: Functional) -> np.ndarray:
    if isinstance(f, SamplePath):
        return f.series()
    return np.atleast_1d(np.asarray(f, dtype=np.float64))


@dataclass(frozen=True)
class UcpEstimate:
    """Empirical distribution of per-path sup deviations against a threshold.

    ``sup_samples`` is stored sorted ascending, which makes the estimate
    invariant under permutation of the ensemble.
    """

    delta: float
    sup_samples: np.ndarray
    empirical_prob: float
    ci_halfwidth: float

    @property
    def n(self) -> int:
        return self.sup_samples.size

    def __post_init__(self) -> None:
        s = np.sort(np.asarray(self.sup_samples, dtype=np.float64))
        s.flags.writeable = False
        object.__setattr__(self, "sup_samples", s)


def estimate_ucp_distance(
    ensemble: Sequence[Functional], target: Functional, delta: float
) -> UcpEstimate:
    """Per-path sup|functional - target| over grid nodes, with exceedance CI."""
    if len(ensemble) == 0:
        raise ContractViolation("ensemble must be nonempty")
    if not delta > 0:
        raise ContractViolation(f"threshold delta must be positive, got {delta}")
    tgt = _as_array(target)
    sups = np.empty(len(ensemble))
    for i, f in enumerate(ensemble):
        a = _as_array(f)
        sups[i] = float(np.max(np.abs(a - tgt)))
    exceed = int(np.count_nonzero(sups > delta))
    n = sups.size
    return UcpEstimate(
        delta=delta,
        sup_samples=sups,
        empirical_prob=exceed / n,
        ci_halfwidth=wilson_halfwidth(exceed, n),
    )


def ucp_verdict(estimates: Sequence[UcpEstimate], eta: float = 0.05) -> bool:
    """Finite-schedule stand-in for a ucp limit (see module docstring).

    ``estimates`` must be ordered from the largest eps to the smallest.
    """
    if not estimates:
        raise ContractViolation("no estimates to judge")
    for prev, cur in zip(estimates, estimates[1:]):
        if cur.empirical_prob - cur.ci_halfwidth > prev.empirical_prob + prev.ci_halfwidth:
            return False
    return estimates[-1].empirical_prob <= eta


@dataclass(frozen=True)
class UcpSeries:
    """Ucp estimates across an eps schedule plus the operational verdict."""

    eps_values: tuple[float, ...]
    estimates: tuple[UcpEstimate, ...]
    eta: float = 0.05
    verdict: bool = field(init=False, default=False)

    def __post_init__(self) -> None:
        if len(self.eps_values) != len(self.estimates):
            raise ContractViolation("one estimate per eps expected")
        object.__setattr__(self, "eps_values", tuple(float(e) for e in self.eps_values))
        object.__setattr__(self, "estimates", tuple(self.estimates))
        object.__setattr__(self, "verdict", ucp_verdict(self.estimates, self.eta))

    def to_json_dict(self) -> dict:
        return {
            "records": [
                {
                    "epsilon": e,
                    "delta": est.delta,
                    "prob": est.empirical_prob,
                    "ci": est.ci_halfwidth,
                    "n": est.n,
                }
                for e, est in zip(self.eps_values, self.estimates)
            ],
            "eta": self.eta,
            "verdict": bool(self.verdict),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)


@dataclass(frozen=True)
class TightnessReport:
    """Exceedance probabilities over thresholds M, per eps family.

    ``exceedance[i][j]`` is the fraction of |samples| above ``thresholds[j]``
    in family ``eps_values[i]``; rows are non-increasing in M by
    construction.  The family is flagged tight at level eta when some
    threshold keeps every family's exceedance below eta.
    """

    eps_values: tuple[float, ...]
    thresholds: tuple[float, ...]
    exceedance: np.ndarray
    eta: float = 0.05

    @property
    def tight(self) -> bool:
        return self.tight_at(self.eta)

    def tight_at(self, eta: float) -> bool:
        worst_per_threshold = self.exceedance.max(axis=0)
        return bool(np.any(worst_per_threshold < eta))

    def to_json_dict(self) -> dict:
        return {
            "records": [
                {"epsilon": e, "M": m, "prob": float(self.exceedance[i, j])}
                for i, e in enumerate(self.eps_values)
                for j, m in enumerate(self.thresholds)
            ],
            "eta": self.eta,
            "verdict": self.tight,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)


def boundedness_in_probability(
    samples_by_eps: Mapping[float, Sequence[float]],
    m_grid: Sequence[float],
    eta: float = 0.05,
) -> TightnessReport:
    """Empirical sup_eps P(|sample| > M) table over an ascending M grid."""
    thresholds = [float(m) for m in m_grid]
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ContractViolation("threshold grid must be strictly ascending")
    eps_values = list(samples_by_eps.keys())
    probs = np.empty((len(eps_values), len(thresholds)))
    for i, e in enumerate(eps_values):
        arr = np.abs(np.asarray(samples_by_eps[e], dtype=np.float64))
        if arr.size == 0:
            raise ContractViolation(f"empty sample array for eps={e}")
        for j, m in enumerate(thresholds):
            probs[i, j] = np.count_nonzero(arr > m) / arr.size
    probs.flags.writeable = False
    return TightnessReport(tuple(float(e) for e in eps_values), tuple(thresholds), probs, eta)


class MomentEstimate(NamedTuple):
    value: float
    ci_halfwidth: float


def moment_estimate(samples: Sequence[float], p: float) -> MomentEstimate:
    """Empirical mean of |sample|^p with a CLT confidence half-width."""
    a = np.asarray(samples, dtype=np.float64).ravel()
    if a.size == 0:
        raise ContractViolation("samples must be nonempty")
    if not np.all(np.isfinite(a)):
        raise DataError("samples contain non-finite values")
    if p < 1:
        raise ContractViolation(f"moment order must be >= 1, got {p}")
    powered = np.abs(a) ** p
    mean = pairwise_mean(powered)
    if a.size == 1:
        return MomentEstimate(mean, 0.0)
    var = pairwise_sum((powered - mean) ** 2) / (a.size - 1)
    return MomentEstimate(mean, 1.959963984540054 * float(np.sqrt(var / a.size)))
