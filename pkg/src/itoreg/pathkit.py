"""Time grids, sampled paths, and seeded process generators.

Paths live on a uniform grid over ``[0, T]`` and are *constantly continued*
on ``(T, T + eps_max]``: every accessor that is asked for a time beyond the
horizon returns the terminal value.  Between nodes the declared
interpolation rule is left-constant; no accessor interpolates otherwise.

Randomness discipline
---------------------
All generators are pure functions of ``(spec, grid, seed)``.  The bit
generator is numpy's counter-based Philox.  Ensembles derive the stream of
path ``i`` from a master seed as ``SeedSequence(master_seed, spawn_key=(i,))``,
a pure function of ``(master_seed, i)``, so ensemble results do not depend
on execution order or worker count.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, NamedTuple, Union

import numpy as np

from .errors import ConfigurationError, ContractViolation, SimulationError

PATH_LABELS = ("martingale", "zero-energy", "composite", "deterministic", "driver", "derived")

_ALIGN_RTOL = 1e-9

SeedLike = Union[int, np.random.SeedSequence]


def as_seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def ensemble_seeds(master_seed: int, n_paths: int) -> list[np.random.SeedSequence]:
    """Per-path seeds: ``SeedSequence(master_seed, spawn_key=(i,))`` for path i."""
    return [np.random.SeedSequence(int(master_seed), spawn_key=(i,)) for i in range(n_paths)]


def _rng(seed: SeedLike) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(as_seed_sequence(seed)))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform discretization of ``[0, T + eps_max]``.

    Parameters
    ----------
    t_horizon : float
        Observation horizon ``T``; strictly positive.
    n_steps : int
        Number of steps on ``[0, T]``; ``dt = T / n_steps``.
    continuation_margin : float
        Width ``eps_max >= 0`` of the constant-continuation domain beyond
        ``T``; must be an integer multiple of ``dt`` so that every shifted
        index ``r + eps`` lands on a node.
    """

    t_horizon: float
    n_steps: int
    continuation_margin: float = 0.0

    def __post_init__(self) -> None:
        if not (self.t_horizon > 0 and math.isfinite(self.t_horizon)):
            raise ConfigurationError(f"horizon must be positive and finite, got {self.t_horizon}")
        if self.n_steps < 1:
            raise ConfigurationError(f"n_steps must be >= 1, got {self.n_steps}")
        if not (self.continuation_margin >= 0 and math.isfinite(self.continuation_margin)):
            raise ConfigurationError(f"continuation margin must be >= 0, got {self.continuation_margin}")
        dt = self.t_horizon / self.n_steps
        m = round(self.continuation_margin / dt)
        if abs(m * dt - self.continuation_margin) > _ALIGN_RTOL * max(dt, self.continuation_margin):
            raise ConfigurationError(
                f"continuation margin {self.continuation_margin} is not an integer multiple of dt={dt}"
            )
        # t_{n_steps} must reproduce T within ordinary rounding.
        if abs(self.n_steps * dt - self.t_horizon) > 4 * np.finfo(float).eps * self.t_horizon:
            raise ConfigurationError("n_steps * dt does not reproduce the horizon")

    @property
    def dt(self) -> float:
        return self.t_horizon / self.n_steps

    @property
    def n_nodes(self) -> int:
        """Nodes in [0, T], horizon included."""
        return self.n_steps + 1

    @property
    def n_continuation_steps(self) -> int:
        return round(self.continuation_margin / self.dt)

    @property
    def total_nodes(self) -> int:
        return self.n_nodes + self.n_continuation_steps

    @cached_property
    def times(self) -> np.ndarray:
        """All node times, continuation nodes included; read-only."""
        t = np.arange(self.total_nodes, dtype=np.float64) * self.dt
        t.flags.writeable = False
        return t

    @property
    def node_times(self) -> np.ndarray:
        """Node times in [0, T] only."""
        return self.times[: self.n_nodes]

    def index_of(self, t: float, allow_continuation: bool = False) -> int:
        """Index of a node-aligned time; raises for off-node times."""
        k = round(t / self.dt)
        if abs(k * self.dt - t) > _ALIGN_RTOL * max(self.dt, abs(t)):
            raise ConfigurationError(f"time {t} is not aligned with the grid (dt={self.dt})")
        hi = self.total_nodes - 1 if allow_continuation else self.n_steps
        if not 0 <= k <= hi:
            raise ConfigurationError(f"time {t} outside the evaluation domain")
        return k

    def eps_to_steps(self, eps: float) -> int:
        """Number of grid steps in a regularization width; warns when eps < 8 dt.

        The width must be a positive integer multiple of dt.  Widths below
        8 dt leave the quadrature error comparable to the regularization
        error, so they are allowed but flagged.
        """
        if not eps > 0:
            raise ConfigurationError(f"regularization width must be positive, got {eps}")
        e = round(eps / self.dt)
        if e < 1 or abs(e * self.dt - eps) > _ALIGN_RTOL * max(self.dt, eps):
            raise ConfigurationError(f"width {eps} is not an integer multiple of dt={self.dt}")
        if e < 8:
            warnings.warn(
                f"regularization width {eps} is below 8*dt; the eps-limit is under-resolved",
                stacklevel=2,
            )
        return e

    def same_axis(self, other: "TimeGrid") -> bool:
        """Same horizon and step count; continuation margins may differ."""
        return self.n_steps == other.n_steps and self.t_horizon == other.t_horizon


@dataclass(frozen=True)
class SamplePath:
    """One realization of a d-dimensional process sampled on a grid.

    ``values`` holds one row per node in ``[0, T]``; evaluation beyond the
    horizon returns the terminal row (constant continuation).  Instances are
    immutable; the value array is marked read-only.
    """

    grid: TimeGrid
    values: np.ndarray
    label: str = "composite"

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ContractViolation(f"values must be 1- or 2-dimensional, got ndim={v.ndim}")
        if v.shape[0] != self.grid.n_nodes:
            raise ContractViolation(
                f"value count {v.shape[0]} != number of grid nodes {self.grid.n_nodes} in [0, T]"
            )
        if self.label not in PATH_LABELS:
            raise ContractViolation(f"unknown path label {self.label!r}")
        v = np.ascontiguousarray(v)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_series(cls, grid: TimeGrid, series, label: str = "composite") -> "SamplePath":
        return cls(grid, np.asarray(series, dtype=np.float64), label)

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    def series(self) -> np.ndarray:
        """1-D view of a scalar path's values on [0, T]."""
        if self.dimension != 1:
            raise ContractViolation(f"path is {self.dimension}-dimensional, not scalar")
        return self.values[:, 0]

    def padded_series(self) -> np.ndarray:
        """Scalar values on the full axis [0, T + eps_max], constantly continued."""
        s = self.series()
        m = self.grid.n_continuation_steps
        if m == 0:
            return s
        return np.concatenate([s, np.full(m, s[-1])])

    def value_at(self, t):
        """Value(s) at node-aligned time(s) in [0, T + eps_max].

        Scalar paths return floats/1-D arrays shaped like ``t``; vector paths
        gain a trailing axis of length d.
        """
        ts = np.asarray(t, dtype=np.float64)
        idx = np.rint(ts / self.grid.dt).astype(np.int64)
        if not np.all(np.abs(idx * self.grid.dt - ts) <= _ALIGN_RTOL * np.maximum(self.grid.dt, np.abs(ts))):
            raise ConfigurationError("evaluation time not aligned with the grid")
        if idx.size and (idx.min() < 0 or idx.max() > self.grid.total_nodes - 1):
            raise ConfigurationError("evaluation time outside [0, T + eps_max]")
        idx = np.minimum(idx, self.grid.n_steps)  # constant continuation
        out = self.values[idx]
        if self.dimension == 1:
            out = out[..., 0]
        return out if out.ndim else float(out)

    def with_label(self, label: str) -> "SamplePath":
        return SamplePath(self.grid, self.values, label)


def nodewise_sum(a: SamplePath, b: SamplePath, label: str = "composite") -> SamplePath:
    if not a.grid.same_axis(b.grid):
        raise ContractViolation("paths live on different grids")
    return SamplePath(a.grid, a.values + b.values, label)


def deterministic_path(grid: TimeGrid, f: Callable[[np.ndarray], np.ndarray], label: str = "deterministic") -> SamplePath:
    """Sample a deterministic function of time exactly at the nodes."""
    return SamplePath.from_series(grid, np.asarray(f(grid.node_times), dtype=np.float64), label)


# ---------------------------------------------------------------------------
# Process specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BrownianMotion:
    """Standard Brownian motion; as a martingale spec it reuses the driver."""

    d: int = 1


@dataclass(frozen=True)
class ItoProcess:
    """Euler-Maruyama process dX = mu(t, X) dt + sigma(t, X) dW."""

    drift: Callable[[float, float], float]
    diffusion: Callable[[float, float], float]
    x0: float = 0.0


@dataclass(frozen=True)
class FiniteVariation:
    """A(t) = integral of a rate, or an exact deterministic profile.

    Exactly one of ``rate`` and ``profile`` must be given.  ``rate(t, w)``
    receives the node time and, when ``path_dependent`` is false, the driver
    value at that node (vectorized over nodes); when true it receives the
    driver history up to the node and is evaluated node by node.  ``profile``
    maps node times directly to A values (A(0) must be 0).
    """

    rate: Callable | None = None
    profile: Callable[[np.ndarray], np.ndarray] | None = None
    path_dependent: bool = False

    def __post_init__(self) -> None:
        if (self.rate is None) == (self.profile is None):
            raise ConfigurationError("specify exactly one of rate= and profile=")


@dataclass(frozen=True)
class ZeroEnergyCandidate:
    """Heuristic non-semimartingale candidate: a convolved Brownian functional.

    Realized as a Riemann-Liouville moving average of the driver increments
    with kernel (t - s)^(hurst - 1/2).  For hurst > 1/2 the paths are smoother
    than Brownian motion at scale eps and the zero-energy property holds
    empirically; it is checked, not proven, which is why this spec is tagged
    heuristic.
    """

    hurst: float = 0.75
    scale: float = 1.0

    def __post_init__(self) -> None:
        if not 0.5 < self.hurst <= 1.0:
            raise ConfigurationError("heuristic candidate requires hurst in (1/2, 1]")


@dataclass(frozen=True)
class Composite:
    martingale: "MartingaleSpec"
    zero_energy: "ZeroEnergySpec | None"


MartingaleSpec = Union[BrownianMotion, ItoProcess]
ZeroEnergySpec = Union[FiniteVariation, ZeroEnergyCandidate]
ProcessSpec = Union[BrownianMotion, ItoProcess, FiniteVariation, ZeroEnergyCandidate, Composite]


class PathBundle(NamedTuple):
    """A weak Dirichlet realization X = M + A together with its driver W."""

    x: SamplePath
    m: SamplePath
    a: SamplePath
    w: SamplePath


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def simulate_brownian(grid: TimeGrid, seed: SeedLike, d: int = 1) -> SamplePath:
    """Brownian path with W(0) = 0 and independent N(0, dt) increments.

    Fully determined by ``(seed, grid, d)``; see the module docstring for the
    stream identity.
    """
    if not isinstance(grid, TimeGrid):
        raise ConfigurationError("grid must be a TimeGrid")
    if d < 1:
        raise ConfigurationError(f"dimension must be >= 1, got {d}")
    rng = _rng(seed)
    increments = rng.standard_normal((grid.n_steps, d)) * math.sqrt(grid.dt)
    values = np.vstack([np.zeros((1, d)), np.cumsum(increments, axis=0)])
    return SamplePath(grid, values, "driver")


def simulate_ito_process(
    grid: TimeGrid,
    mu: Callable[[float, float], float],
    sigma: Callable[[float, float], float],
    x0: float,
    driver: SamplePath | None = None,
    seed: SeedLike | None = None,
) -> SamplePath:
    """Euler-Maruyama realization of dX = mu dt + sigma dW on the grid.

    ``driver`` supplies the Brownian increments; when omitted it is simulated
    from ``seed``.  Raises :class:`SimulationError` naming the node if mu or
    sigma returns a non-finite value.
    """
    if driver is None:
        if seed is None:
            raise ConfigurationError("either driver or seed must be provided")
        driver = simulate_brownian(grid, seed)
    if not driver.grid.same_axis(grid):
        raise ContractViolation("driver path lives on a different grid")
    w = driver.series()
    dt = grid.dt
    times = grid.node_times
    x = np.empty(grid.n_nodes)
    x[0] = float(x0)
    for k in range(grid.n_steps):
        m = float(mu(times[k], x[k]))
        s = float(sigma(times[k], x[k]))
        if not (math.isfinite(m) and math.isfinite(s)):
            raise SimulationError(
                f"non-finite coefficient at node k={k}, t={times[k]}: mu={m}, sigma={s}"
            )
        x[k + 1] = x[k] + m * dt + s * (w[k + 1] - w[k])
    return SamplePath.from_series(grid, x, "composite")


def _realize_martingale(spec: MartingaleSpec, grid: TimeGrid, driver: SamplePath) -> SamplePath:
    if isinstance(spec, BrownianMotion):
        return driver.with_label("martingale")
    if isinstance(spec, ItoProcess):
        path = simulate_ito_process(grid, spec.drift, spec.diffusion, spec.x0, driver=driver)
        return path.with_label("martingale")
    raise ContractViolation(f"{type(spec).__name__} cannot realize a martingale part")


def _realize_zero_energy(spec: ZeroEnergySpec | None, grid: TimeGrid, driver: SamplePath) -> SamplePath:
    if spec is None:
        return SamplePath.from_series(grid, np.zeros(grid.n_nodes), "zero-energy")
    if isinstance(spec, FiniteVariation):
        if spec.profile is not None:
            a = np.asarray(spec.profile(grid.node_times), dtype=np.float64)
        else:
            w = driver.series()
            times = grid.node_times
            if spec.path_dependent:
                rates = np.array([float(spec.rate(times[k], w[: k + 1])) for k in range(grid.n_steps)])
            else:
                rates = np.asarray(spec.rate(times[:-1], w[:-1]), dtype=np.float64)
                rates = np.broadcast_to(rates, (grid.n_steps,))
            a = np.concatenate([[0.0], np.cumsum(rates * grid.dt)])
        if abs(a[0]) > 0:
            raise ContractViolation(f"zero-energy part must start at 0, got A(0)={a[0]}")
        return SamplePath.from_series(grid, a, "zero-energy")
    if isinstance(spec, ZeroEnergyCandidate):
        return _riemann_liouville(spec, grid, driver)
    raise ContractViolation(f"{type(spec).__name__} cannot realize a zero-energy part")


def _riemann_liouville(spec: ZeroEnergyCandidate, grid: TimeGrid, driver: SamplePath) -> SamplePath:
    from scipy.signal import fftconvolve

    dw = np.diff(driver.series())
    lags = np.arange(1, grid.n_steps + 1) * grid.dt
    kernel = spec.scale * math.sqrt(2.0 * spec.hurst) * lags ** (spec.hurst - 0.5)
    conv = fftconvolve(dw, kernel)[: grid.n_steps]
    a = np.concatenate([[0.0], conv])
    return SamplePath.from_series(grid, a, "zero-energy")


def simulate_weak_dirichlet(
    grid: TimeGrid,
    m_spec: MartingaleSpec,
    a_spec: ZeroEnergySpec | None,
    seed: SeedLike,
) -> PathBundle:
    """Realize X = M + A and the driving Brownian motion as one bundle.

    M and A are both functionals of the same driver so that the whole bundle
    is adapted to one Brownian filtration.
    """
    if not isinstance(m_spec, (BrownianMotion, ItoProcess)):
        raise ContractViolation("martingale spec must be BrownianMotion or ItoProcess")
    if a_spec is not None and not isinstance(a_spec, (FiniteVariation, ZeroEnergyCandidate)):
        raise ContractViolation("zero-energy spec must be FiniteVariation or ZeroEnergyCandidate")
    driver = simulate_brownian(grid, seed)
    m = _realize_martingale(m_spec, grid, driver)
    a = _realize_zero_energy(a_spec, grid, driver)
    if abs(a.series()[0]) > 0:
        raise ContractViolation("A(0) != 0")
    x = nodewise_sum(m, a, "composite")
    return PathBundle(x=x, m=m, a=a, w=driver)


def build_weak_dirichlet(
    grid: TimeGrid,
    m_spec: MartingaleSpec,
    a_spec: ZeroEnergySpec | None,
    seed: SeedLike,
) -> tuple[SamplePath, SamplePath, SamplePath]:
    """X = M + A nodewise; all three paths returned for separate integration."""
    bundle = simulate_weak_dirichlet(grid, m_spec, a_spec, seed)
    return bundle.x, bundle.m, bundle.a


def simulate_brownian_ensemble(grid: TimeGrid, master_seed: int, n_paths: int, d: int = 1) -> list[SamplePath]:
    return [simulate_brownian(grid, s, d) for s in ensemble_seeds(master_seed, n_paths)]


def simulate_weak_dirichlet_ensemble(
    grid: TimeGrid,
    m_spec: MartingaleSpec,
    a_spec: ZeroEnergySpec | None,
    master_seed: int,
    n_paths: int,
) -> list[PathBundle]:
    return [simulate_weak_dirichlet(grid, m_spec, a_spec, s) for s in ensemble_seeds(master_seed, n_paths)]


def extend_constant(path: SamplePath, continuation_margin: float) -> SamplePath:
    """Widen a path's continuation domain; values on [0, T] are unchanged.

    A no-op (the same object) when the requested margin does not exceed the
    current one.
    """
    dt = path.grid.dt
    m = round(continuation_margin / dt)
    if continuation_margin < 0 or abs(m * dt - continuation_margin) > _ALIGN_RTOL * max(dt, continuation_margin):
        raise ConfigurationError(
            f"continuation margin {continuation_margin} is not a nonnegative multiple of dt={dt}"
        )
    if continuation_margin <= path.grid.continuation_margin:
        return path
    grid = TimeGrid(path.grid.t_horizon, path.grid.n_steps, continuation_margin)
    return SamplePath(grid, path.values, path.label)


def realized_qv(path: SamplePath) -> float:
    """Sum of squared increments over [0, T] at grid resolution.

    For Brownian paths this is dt times a chi-square(n_steps) variable, so it
    concentrates around T with standard deviation sqrt(2 dt T); the FQV
    invariant tests lean on that oracle.
    """
    d = np.diff(path.series())
    return float(np.sum(d * d))
