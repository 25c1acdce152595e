"""Stochastic flows represented by local characteristics (beta, gamma).

A flow F(t, x) is the random field

    F(t, x) = F(0, x) + int_0^t beta(r, x) dr + int_0^t gamma(r, x) dW_r

driven by the single Brownian motion that generates the filtration.  The
characteristics are realized omega-wise as functions of the driver path:
every characteristic has the signature ``c(view, t, x)`` where ``view`` is a
:class:`DriverView` exposing the driver's past, and ``t``/``x`` broadcast as
numpy arrays.  The view raises when a field tries to read driver values
beyond its declared horizon, which is how progressive measurability is
enforced in tests.

Flows whose characteristics factor as ``a(t) * b(x)`` (the whole built-in
catalog) carry exact closed forms for F and its spatial derivatives, built
from the same left-point quadrature prefixes the generic evaluator uses, so
analytic and quadrature evaluations agree to rounding.  Custom expression
flows fall back to per-point quadrature, which costs O(n) per evaluation.

Spatial dimension d = 1 is supported end to end; d > 1 is restricted to
flow evaluation (no decomposition checks) because the contraction
convention for gamma_x d[X, W] in higher dimension is not pinned down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import (
    AdaptednessError,
    CapabilityError,
    ConfigurationError,
    ContractViolation,
    EvaluationError,
)
from .numerics import pairwise_sum
from .pathkit import SamplePath, TimeGrid

_ALIGN_RTOL = 1e-9

CATALOG_NAMES = ("frozen", "drift-only", "additive-noise", "linear-noise", "c01-kink")


# ---------------------------------------------------------------------------
# Driver access guard
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DriverView:
    """Read access to a driver path, limited to times <= ``limit``.

    All reads funnel through :meth:`value_at`, so wrapping a path in a view
    with a tight limit turns any anticipating read into an
    :class:`AdaptednessError`.
    """

    path: SamplePath
    limit: float

    def __post_init__(self) -> None:
        if isinstance(self.path, DriverView):
            inner = self.path
            object.__setattr__(self, "path", inner.path)
            object.__setattr__(self, "limit", min(self.limit, inner.limit))

    @property
    def grid(self) -> TimeGrid:
        return self.path.grid

    def _check(self, t_max: float) -> None:
        if t_max > self.limit + _ALIGN_RTOL * max(1.0, abs(self.limit)):
            raise AdaptednessError(
                f"driver read at t={t_max} beyond the declared horizon {self.limit}"
            )

    def value_at(self, t):
        ts = np.asarray(t, dtype=np.float64)
        if ts.size:
            self._check(float(ts.max()))
        return self.path.value_at(t)

    def series_up_to(self, k: int) -> np.ndarray:
        """Driver values at nodes 0..k (continuation applies past T)."""
        return self.value_at(self.grid.times[: k + 1])

    def increments_up_to(self, k: int) -> np.ndarray:
        return np.diff(self.series_up_to(k), axis=0)


DriverLike = Union[SamplePath, DriverView]


def as_driver_view(driver: DriverLike, limit: float | None = None) -> DriverView:
    if isinstance(driver, DriverView):
        return driver if limit is None else DriverView(driver, limit)
    if limit is None:
        limit = driver.grid.t_horizon + driver.grid.continuation_margin
    return DriverView(driver, limit)


# ---------------------------------------------------------------------------
# Spatial profiles and separable characteristic terms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Profile:
    """A spatial function with optional first and second derivatives."""

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    dx: Callable[[np.ndarray], np.ndarray] | None = None
    dxx: Callable[[np.ndarray], np.ndarray] | None = None


def _const_profile(c: float, name: str) -> Profile:
    return Profile(
        name,
        lambda x, c=c: np.full_like(np.asarray(x, dtype=np.float64), c),
        lambda x: np.zeros_like(np.asarray(x, dtype=np.float64)),
        lambda x: np.zeros_like(np.asarray(x, dtype=np.float64)),
    )


PROFILES: dict[str, Profile] = {
    "x": Profile(
        "x",
        lambda x: np.asarray(x, dtype=np.float64),
        lambda x: np.ones_like(np.asarray(x, dtype=np.float64)),
        lambda x: np.zeros_like(np.asarray(x, dtype=np.float64)),
    ),
    "x**2": Profile(
        "x**2",
        lambda x: np.asarray(x, dtype=np.float64) ** 2,
        lambda x: 2.0 * np.asarray(x, dtype=np.float64),
        lambda x: np.full_like(np.asarray(x, dtype=np.float64), 2.0),
    ),
    # C1 but not C2: value x|x|/2, derivative |x|, no second derivative at 0.
    "x*abs(x)/2": Profile(
        "x*abs(x)/2",
        lambda x: np.asarray(x, dtype=np.float64) * np.abs(np.asarray(x, dtype=np.float64)) / 2.0,
        lambda x: np.abs(np.asarray(x, dtype=np.float64)),
        None,
    ),
    "1": _const_profile(1.0, "1"),
    "0": _const_profile(0.0, "0"),
}


def parse_profile(expr: str) -> Profile:
    """Parse a spatial expression in x; derivatives come from sympy.

    A derivative that degenerates to a distribution (DiracDelta from
    differentiating abs or sign) is dropped rather than lambdified.
    """
    if expr in PROFILES:
        return PROFILES[expr]
    import sympy

    x = sympy.Symbol("x", real=True)
    tree = sympy.sympify(expr, locals={"x": x, "abs": sympy.Abs, "min": sympy.Min, "max": sympy.Max})
    extra = tree.free_symbols - {x}
    if extra:
        raise ConfigurationError(f"profile {expr!r} uses unknown symbols {sorted(map(str, extra))}")
    funcs = []
    for order, node in enumerate([tree, sympy.diff(tree, x), sympy.diff(tree, x, 2)]):
        if node.has(sympy.DiracDelta):
            funcs.append(None)
            continue
        funcs.append(_vectorized_lambdify(sympy.lambdify(x, node, modules=["numpy"])))
    # A missing derivative makes every higher one unusable too.
    if funcs[1] is None:
        funcs[2] = None
    return Profile(expr, funcs[0], funcs[1], funcs[2])


def _vectorized_lambdify(fn: Callable) -> Callable:
    def wrapped(v):
        arr = np.asarray(v, dtype=np.float64)
        out = np.asarray(fn(arr), dtype=np.float64)
        if out.shape != arr.shape:
            out = np.broadcast_to(out, arr.shape)
        return out

    return wrapped


def as_profile(f0: Union[str, Profile, Callable]) -> Profile:
    if isinstance(f0, Profile):
        return f0
    if isinstance(f0, str):
        return parse_profile(f0)
    if callable(f0):
        return Profile(getattr(f0, "__name__", "custom"), _vectorized_lambdify(f0))
    raise ConfigurationError(f"cannot interpret {f0!r} as a spatial profile")


@dataclass(frozen=True)
class SeparableTerm:
    """Characteristic of product form c(s, x) = time_profile(s) * space(x)."""

    time_profile: Callable[[np.ndarray], np.ndarray]
    space: Profile

    def __call__(self, view: DriverView, t, x) -> np.ndarray:
        tt, xx = np.broadcast_arrays(np.asarray(t, dtype=np.float64), np.asarray(x, dtype=np.float64))
        return self.time_values(tt) * self.space.value(xx)

    def time_values(self, t: np.ndarray) -> np.ndarray:
        out = np.asarray(self.time_profile(np.asarray(t, dtype=np.float64)), dtype=np.float64)
        if out.shape != np.shape(t):
            out = np.broadcast_to(out, np.shape(t))
        return out


def sep_zero() -> SeparableTerm:
    return SeparableTerm(lambda s: np.zeros_like(s), PROFILES["0"])


def sep_constant(c: float) -> SeparableTerm:
    return SeparableTerm(lambda s, c=c: np.full_like(s, c), PROFILES["1"])


def sep_space(profile: Union[str, Profile]) -> SeparableTerm:
    return SeparableTerm(lambda s: np.ones_like(s), as_profile(profile))


def sep_time(fn: Callable[[np.ndarray], np.ndarray]) -> SeparableTerm:
    return SeparableTerm(fn, PROFILES["1"])


# ---------------------------------------------------------------------------
# Flow data types
# ---------------------------------------------------------------------------


CharField = Callable[[DriverView, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DeclaredBounds:
    """Author-declared moment/sup bounds used by assumption spot checks.

    ``gamma_sup`` plays the role of the a.s. bound in the bounded-noise
    assumption; ``gamma_moment`` is the (2+rho)-moment bound; ``beta_sup``
    and ``beta_mean_integral`` are the drift analogues.
    """

    beta_sup: float | None = None
    beta_mean_integral: float | None = None
    gamma_sup: float | None = None
    gamma_moment: float | None = None


@dataclass(frozen=True)
class LocalCharacteristics:
    beta: CharField
    gamma: CharField
    holder_alpha: float = 1.0
    holder_const: float = 1.0
    d: int = 1
    beta_separable: SeparableTerm | None = None
    gamma_separable: SeparableTerm | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.holder_alpha <= 1.0:
            raise ConfigurationError("holder_alpha must lie in (0, 1]")
        if self.d < 1:
            raise ConfigurationError("spatial dimension must be >= 1")


@dataclass(frozen=True)
class AnalyticForms:
    """Optional closed forms; each takes (driver, t, x) and broadcasts."""

    f: Callable
    f_x: Callable | None = None
    f_xx: Callable | None = None
    gamma_x: Callable | None = None


@dataclass(frozen=True)
class StochasticFlow:
    name: str
    f0: Profile
    chars: LocalCharacteristics
    smoothness: str = "C01"  # spatial class of F: "C01" or "C02"
    gamma_smoothness: str = "C0"  # "C1alpha" when gamma_x exists with Holder derivative
    analytic: AnalyticForms | None = None
    box: tuple[float, float] = (-3.0, 3.0)
    declared_bounds: DeclaredBounds = field(default_factory=DeclaredBounds)

    def __post_init__(self) -> None:
        if self.smoothness not in ("C01", "C02"):
            raise ConfigurationError(f"unknown smoothness class {self.smoothness!r}")
        if self.gamma_smoothness not in ("C0", "C1alpha"):
            raise ConfigurationError(f"unknown gamma smoothness {self.gamma_smoothness!r}")


# ---------------------------------------------------------------------------
# Construction helpers
# ---------------------------------------------------------------------------


def flow_from_separable(
    name: str,
    f0: Union[str, Profile],
    beta: SeparableTerm,
    gamma: SeparableTerm,
    holder_alpha: float = 1.0,
    holder_const: float = 1.0,
    box: tuple[float, float] = (-3.0, 3.0),
    declared_bounds: DeclaredBounds | None = None,
    force_smoothness: str | None = None,
) -> StochasticFlow:
    """Build a flow with exact analytic forms from separable characteristics.

    F(t, x) = F0(x) + b_beta(x) * B(t) + b_gamma(x) * P(t) where B and P are
    the left-point quadrature prefixes of a_beta(s) ds and a_gamma(s) dW_s.
    """
    prof = as_profile(f0)
    chars = LocalCharacteristics(
        beta=beta,
        gamma=gamma,
        holder_alpha=holder_alpha,
        holder_const=holder_const,
        beta_separable=beta,
        gamma_separable=gamma,
    )

    def _prefix_values(driver: DriverLike, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        view = as_driver_view(driver)
        grid = view.grid
        idx = np.minimum(_node_indices(grid, t), grid.n_steps)
        j_max = int(idx.max()) if idx.size else 0
        w = view.series_up_to(j_max)
        left = grid.times[:j_max]
        b_prefix = np.concatenate([[0.0], np.cumsum(beta.time_values(left) * grid.dt)])
        p_prefix = np.concatenate([[0.0], np.cumsum(gamma.time_values(left) * np.diff(w))])
        return b_prefix[idx], p_prefix[idx]

    def f(driver, t, x):
        tt, xx = np.broadcast_arrays(np.asarray(t, dtype=np.float64), np.asarray(x, dtype=np.float64))
        bp, pp = _prefix_values(driver, tt)
        return prof.value(xx) + beta.space.value(xx) * bp + gamma.space.value(xx) * pp

    def _deriv(space_fn_getter):
        def fn(driver, t, x):
            tt, xx = np.broadcast_arrays(np.asarray(t, dtype=np.float64), np.asarray(x, dtype=np.float64))
            bp, pp = _prefix_values(driver, tt)
            p0, pb, pg = space_fn_getter()
            return p0(xx) + pb(xx) * bp + pg(xx) * pp

        return fn

    f_x = None
    if prof.dx and beta.space.dx and gamma.space.dx:
        f_x = _deriv(lambda: (prof.dx, beta.space.dx, gamma.space.dx))
    f_xx = None
    if prof.dxx and beta.space.dxx and gamma.space.dxx:
        f_xx = _deriv(lambda: (prof.dxx, beta.space.dxx, gamma.space.dxx))

    gamma_x = None
    if gamma.space.dx is not None:
        def gamma_x(view, t, x):  # noqa: F811
            tt, xx = np.broadcast_arrays(np.asarray(t, dtype=np.float64), np.asarray(x, dtype=np.float64))
            return gamma.time_values(tt) * gamma.space.dx(xx)

    smoothness = force_smoothness or ("C02" if f_xx is not None else "C01")
    return StochasticFlow(
        name=name,
        f0=prof,
        chars=chars,
        smoothness=smoothness,
        gamma_smoothness="C1alpha" if gamma_x is not None else "C0",
        analytic=AnalyticForms(f=f, f_x=f_x, f_xx=f_xx, gamma_x=gamma_x),
        box=box,
        declared_bounds=declared_bounds or DeclaredBounds(),
    )


def builtin_flow(name: str, f0: Union[str, Profile, None] = None) -> StochasticFlow:
    """Catalog flows addressable by name from the CLI.

    frozen          beta = gamma = 0, F(t, x) = F0(x)
    drift-only      beta = 1,         F(t, x) = F0(x) + t
    additive-noise  gamma = 1,        F(t, x) = F0(x) + W_t
    linear-noise    gamma(r, x) = x,  F(t, x) = F0(x) + x W_t
    c01-kink        F0(x) = x|x|/2 with beta = gamma = 0; F_x = |x| is
                    continuous but F_xx does not exist at 0.
    """
    if name == "c01-kink":
        prof = PROFILES["x*abs(x)/2"] if f0 is None else as_profile(f0)
        if prof.dxx is not None:
            raise ConfigurationError("c01-kink requires a profile without a second derivative")
        return flow_from_separable(
            name, prof, sep_zero(), sep_zero(),
            declared_bounds=DeclaredBounds(beta_sup=0.0, gamma_sup=0.0, gamma_moment=0.0),
        )
    prof = as_profile("x" if f0 is None else f0)
    if name == "frozen":
        return flow_from_separable(
            name, prof, sep_zero(), sep_zero(),
            declared_bounds=DeclaredBounds(beta_sup=0.0, gamma_sup=0.0, gamma_moment=0.0),
        )
    if name == "drift-only":
        return flow_from_separable(
            name, prof, sep_constant(1.0), sep_zero(),
            declared_bounds=DeclaredBounds(beta_sup=1.0, beta_mean_integral=1.0, gamma_sup=0.0, gamma_moment=0.0),
        )
    if name == "additive-noise":
        return flow_from_separable(
            name, prof, sep_zero(), sep_constant(1.0),
            declared_bounds=DeclaredBounds(beta_sup=0.0, gamma_sup=1.0, gamma_moment=1.0),
        )
    if name == "linear-noise":
        # gamma(r, x) = x is bounded only on the declared box; the sup bound
        # is the author's declaration for spot checks, not a global fact.
        box = (-3.0, 3.0)
        return flow_from_separable(
            name, prof, sep_zero(), sep_space("x"),
            box=box,
            declared_bounds=DeclaredBounds(beta_sup=0.0, gamma_sup=max(abs(box[0]), abs(box[1]))),
        )
    raise ConfigurationError(f"unknown catalog flow {name!r}; choose from {CATALOG_NAMES}")


def expression_flow(
    name: str,
    f0: str = "x",
    beta: str = "0",
    gamma: str = "0",
    smoothness: str = "C01",
    gamma_smoothness: str = "C0",
    holder_alpha: float = 1.0,
    holder_const: float = 1.0,
    box: tuple[float, float] = (-3.0, 3.0),
    declared_bounds: DeclaredBounds | None = None,
) -> StochasticFlow:
    """Flow from declarative expressions over t, x, and W (the driver at t).

    Expressions support arithmetic, powers, abs, min, max, and references to
    W(t) through the bare symbol ``W``.  Expression flows carry no closed
    forms: F and its derivatives are obtained by quadrature and finite
    differences, so full-grid evaluations cost O(n) per point.
    """
    return StochasticFlow(
        name=name,
        f0=parse_profile(f0),
        chars=LocalCharacteristics(
            beta=_char_from_expression(beta),
            gamma=_char_from_expression(gamma),
            holder_alpha=holder_alpha,
            holder_const=holder_const,
        ),
        smoothness=smoothness,
        gamma_smoothness=gamma_smoothness,
        analytic=None,
        box=box,
        declared_bounds=declared_bounds or DeclaredBounds(),
    )


def _char_from_expression(expr: str) -> CharField:
    import sympy

    t = sympy.Symbol("t", real=True)
    x = sympy.Symbol("x", real=True)
    w = sympy.Symbol("W", real=True)
    tree = sympy.sympify(expr, locals={"t": t, "x": x, "W": w, "abs": sympy.Abs, "min": sympy.Min, "max": sympy.Max})
    extra = tree.free_symbols - {t, x, w}
    if extra:
        raise ConfigurationError(f"expression {expr!r} uses unknown symbols {sorted(map(str, extra))}")
    fn = sympy.lambdify((t, x, w), tree, modules=["numpy"])
    reads_driver = w in tree.free_symbols

    def char(view: DriverView, tt, xx):
        ta, xa = np.broadcast_arrays(np.asarray(tt, dtype=np.float64), np.asarray(xx, dtype=np.float64))
        wa = view.value_at(ta) if reads_driver else 0.0
        out = np.asarray(fn(ta, xa, wa), dtype=np.float64)
        if out.shape != ta.shape:
            out = np.broadcast_to(out, ta.shape)
        return out

    return char


def make_flow(
    name: str,
    f0: Union[str, Profile],
    beta: Union[SeparableTerm, CharField],
    gamma: Union[SeparableTerm, CharField],
    smoothness: str = "C01",
    gamma_smoothness: str = "C0",
    holder_alpha: float = 1.0,
    holder_const: float = 1.0,
    box: tuple[float, float] = (-3.0, 3.0),
    declared_bounds: DeclaredBounds | None = None,
    force_smoothness: str | None = None,
) -> StochasticFlow:
    """Generic constructor; separable terms get exact analytic forms for free."""
    if isinstance(beta, SeparableTerm) and isinstance(gamma, SeparableTerm):
        return flow_from_separable(
            name, f0, beta, gamma,
            holder_alpha=holder_alpha,
            holder_const=holder_const,
            box=box,
            declared_bounds=declared_bounds,
            force_smoothness=force_smoothness,
        )
    return StochasticFlow(
        name=name,
        f0=as_profile(f0),
        chars=LocalCharacteristics(
            beta=beta,
            gamma=gamma,
            holder_alpha=holder_alpha,
            holder_const=holder_const,
        ),
        smoothness=force_smoothness or smoothness,
        gamma_smoothness=gamma_smoothness,
        analytic=None,
        box=box,
        declared_bounds=declared_bounds or DeclaredBounds(),
    )


def combine_flows(a: StochasticFlow, b: StochasticFlow, name: str | None = None) -> StochasticFlow:
    """Pointwise sum of two flows; used to exercise linearity properties."""

    def add_profiles(p: Profile, q: Profile) -> Profile:
        return Profile(
            f"{p.name}+{q.name}",
            lambda v: p.value(v) + q.value(v),
            (lambda v: p.dx(v) + q.dx(v)) if p.dx and q.dx else None,
            (lambda v: p.dxx(v) + q.dxx(v)) if p.dxx and q.dxx else None,
        )

    def add_fields(f: CharField, g: CharField) -> CharField:
        return lambda view, t, x: f(view, t, x) + g(view, t, x)

    analytic = None
    if a.analytic and b.analytic:
        def paired(fa, fb):
            if fa is None or fb is None:
                return None
            return lambda driver, t, x: fa(driver, t, x) + fb(driver, t, x)

        analytic = AnalyticForms(
            f=paired(a.analytic.f, b.analytic.f),
            f_x=paired(a.analytic.f_x, b.analytic.f_x),
            f_xx=paired(a.analytic.f_xx, b.analytic.f_xx),
            gamma_x=paired(a.analytic.gamma_x, b.analytic.gamma_x),
        )
    return StochasticFlow(
        name=name or f"{a.name}+{b.name}",
        f0=add_profiles(a.f0, b.f0),
        chars=LocalCharacteristics(
            beta=add_fields(a.chars.beta, b.chars.beta),
            gamma=add_fields(a.chars.gamma, b.chars.gamma),
            holder_alpha=min(a.chars.holder_alpha, b.chars.holder_alpha),
            holder_const=a.chars.holder_const + b.chars.holder_const,
        ),
        smoothness="C02" if a.smoothness == b.smoothness == "C02" else "C01",
        gamma_smoothness="C1alpha" if a.gamma_smoothness == b.gamma_smoothness == "C1alpha" else "C0",
        analytic=analytic,
        box=a.box,
    )


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _node_indices(grid: TimeGrid, t: np.ndarray) -> np.ndarray:
    ts = np.asarray(t, dtype=np.float64)
    idx = np.rint(ts / grid.dt).astype(np.int64)
    if not np.all(np.abs(idx * grid.dt - ts) <= _ALIGN_RTOL * np.maximum(grid.dt, np.abs(ts))):
        raise ConfigurationError("evaluation time not aligned with the grid")
    if idx.size and (idx.min() < 0 or idx.max() > grid.total_nodes - 1):
        raise ConfigurationError("evaluation time outside [0, T + eps_max]")
    return idx


def evaluate_flow(flow: StochasticFlow, driver: DriverLike, t: float, x) -> float:
    """F(t, x) by left-point quadrature of the defining dynamics.

    Always integrates the characteristics; flows with analytic forms are
    checked for agreement with this evaluator in tests, not replaced by it.
    Times beyond the horizon evaluate at T (constant continuation).
    """
    view = as_driver_view(driver)
    grid = view.grid
    j = min(int(_node_indices(grid, np.asarray(t))), grid.n_steps)
    view = DriverView(view, limit=grid.times[j])
    left = grid.times[:j]
    xs = np.asarray(x, dtype=np.float64)
    b = np.asarray(flow.chars.beta(view, left, xs), dtype=np.float64)
    g = np.asarray(flow.chars.gamma(view, left, xs), dtype=np.float64)
    for label, arr in (("beta", b), ("gamma", g)):
        if not np.all(np.isfinite(arr)):
            flat = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr[:, None]
            k = int(np.flatnonzero(~np.all(np.isfinite(flat), axis=1))[0])
            raise EvaluationError(f"{label} non-finite at t={left[k]}, x={x}")
    dw = view.increments_up_to(j)
    if g.ndim > 1:  # d > 1: contract gamma against vector increments
        noise = pairwise_sum((g * dw).ravel())
    else:
        noise = pairwise_sum(g * dw)
    base_arr = np.asarray(flow.f0.value(xs), dtype=np.float64)
    if base_arr.size != 1:
        raise ContractViolation(
            "f0 must be scalar-valued at one point; for d > 1 supply a profile mapping R^d to R"
        )
    return float(base_arr.ravel()[0]) + pairwise_sum(b) * grid.dt + noise


def evaluate_flow_along(flow: StochasticFlow, driver: DriverLike, times, xs) -> np.ndarray:
    """F(t_i, x_i) for paired arrays; analytic when available, else quadrature."""
    tt, xx = np.broadcast_arrays(np.asarray(times, dtype=np.float64), np.asarray(xs, dtype=np.float64))
    if flow.analytic is not None:
        return np.asarray(flow.analytic.f(driver, tt, xx), dtype=np.float64)
    return np.array([evaluate_flow(flow, driver, float(t), float(v)) for t, v in zip(tt.ravel(), xx.ravel())]).reshape(tt.shape)


_FD_ATOL = 1e-6
_FD_RTOL = 1e-4


def flow_spatial_derivative(
    flow: StochasticFlow,
    driver: DriverLike,
    t: float,
    x: float,
    order: int = 1,
    h_scale: float = 1e-4,
) -> float:
    """Spatial derivative of F at (t, x): analytic form or central differences.

    Finite differences use step h = h_scale * max(1, |x|) and must agree
    with the half-step estimate within max(1e-6, 1e-4 |value|); disagreement
    raises, since it signals a derivative that does not exist at x.
    """
    if order not in (1, 2):
        raise ConfigurationError("order must be 1 or 2")
    if order == 2 and flow.smoothness != "C02":
        raise CapabilityError(f"flow {flow.name!r} is declared {flow.smoothness}; no second derivative")
    if flow.analytic is not None:
        form = flow.analytic.f_x if order == 1 else flow.analytic.f_xx
        if form is not None:
            return float(np.asarray(form(driver, np.asarray(t), np.asarray(x))))
    h = h_scale * max(1.0, abs(x))

    def fd(step: float) -> float:
        if order == 1:
            return (evaluate_flow(flow, driver, t, x + step) - evaluate_flow(flow, driver, t, x - step)) / (2 * step)
        return (
            evaluate_flow(flow, driver, t, x + step)
            - 2 * evaluate_flow(flow, driver, t, x)
            + evaluate_flow(flow, driver, t, x - step)
        ) / (step * step)

    coarse, fine = fd(h), fd(h / 2)
    if abs(coarse - fine) > max(_FD_ATOL, _FD_RTOL * abs(fine)):
        raise EvaluationError(
            f"finite-difference derivative inconsistent at (t={t}, x={x}): {coarse} vs {fine}"
        )
    return coarse


def flow_dx_along(flow: StochasticFlow, driver: DriverLike, times, xs, order: int = 1) -> np.ndarray:
    """Vectorized spatial derivative along paired (t, x) arrays."""
    tt, xx = np.broadcast_arrays(np.asarray(times, dtype=np.float64), np.asarray(xs, dtype=np.float64))
    if order == 2 and flow.smoothness != "C02":
        raise CapabilityError(f"flow {flow.name!r} is declared {flow.smoothness}; no second derivative")
    if flow.analytic is not None:
        form = flow.analytic.f_x if order == 1 else flow.analytic.f_xx
        if form is not None:
            return np.asarray(form(driver, tt, xx), dtype=np.float64)
    return np.array(
        [flow_spatial_derivative(flow, driver, float(t), float(v), order) for t, v in zip(tt.ravel(), xx.ravel())]
    ).reshape(tt.shape)


# ---------------------------------------------------------------------------
# Random-point substitution and window integrals
# ---------------------------------------------------------------------------


def substitute_random_point(
    flow: StochasticFlow, driver: DriverLike, r: float, t: float, g
) -> tuple[float, float]:
    """(int_r^t beta(s, G) ds, int_r^t gamma(s, G) dW_s) with x frozen at G.

    Substitution commutes with the grid quadratures by construction; this is
    the single code path the decomposition and proof-term modules share.
    Windows truncate at the horizon, where the flow is constantly continued.
    """
    view = as_driver_view(driver)
    grid = view.grid
    j_r = int(_node_indices(grid, np.asarray(r)))
    j_t = int(_node_indices(grid, np.asarray(t)))
    if j_r > j_t:
        raise ContractViolation(f"window start {r} exceeds end {t}")
    g_arr = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g_arr)):
        raise ContractViolation(f"substitution point must be finite, got {g}")
    j_r = min(j_r, grid.n_steps)
    j_t = min(j_t, grid.n_steps)
    view = DriverView(view, limit=grid.times[j_t])
    s = grid.times[j_r:j_t]
    b = np.asarray(flow.chars.beta(view, s, g_arr), dtype=np.float64)
    gam = np.asarray(flow.chars.gamma(view, s, g_arr), dtype=np.float64)
    dw = np.diff(view.series_up_to(j_t)[j_r:])
    if gam.ndim > 1:
        noise = pairwise_sum((gam * dw).ravel())
    else:
        noise = pairwise_sum(gam * dw)
    return pairwise_sum(b) * grid.dt, noise


_CHUNK_ELEMENTS = 4_000_000


def window_integrals(
    flow: StochasticFlow, driver: DriverLike, frozen_x: np.ndarray, eps_steps: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-node substitution integrals over [r, r + eps], truncated at T.

    Returns arrays (B, G) of length n_steps where, with e = eps_steps and
    x frozen at ``frozen_x[r]``,

        B[r] = sum_{j = r}^{min(r+e, n)-1} beta(t_j, x_r) dt
        G[r] = sum_{j = r}^{min(r+e, n)-1} gamma(t_j, x_r) dW_j.

    Separable characteristics use O(n) prefix sums; generic ones fall back
    to a chunked (r, s) broadcast.
    """
    view = as_driver_view(driver)
    grid = view.grid
    n = grid.n_steps
    x = np.asarray(frozen_x, dtype=np.float64)
    if x.shape != (n,):
        raise ContractViolation(f"frozen_x must have one value per left node ({n})")
    e = int(eps_steps)
    if e < 1:
        raise ConfigurationError("eps_steps must be >= 1")
    w = view.series_up_to(n)
    dw = np.diff(w)
    left = grid.times[:n]
    hi = np.minimum(np.arange(n) + e, n)
    lo = np.arange(n)

    bsep, gsep = flow.chars.beta_separable, flow.chars.gamma_separable
    if bsep is not None and gsep is not None:
        pb = np.concatenate([[0.0], np.cumsum(bsep.time_values(left) * grid.dt)])
        pg = np.concatenate([[0.0], np.cumsum(gsep.time_values(left) * dw)])
        return (
            bsep.space.value(x) * (pb[hi] - pb[lo]),
            gsep.space.value(x) * (pg[hi] - pg[lo]),
        )

    b_out = np.empty(n)
    g_out = np.empty(n)
    rows = max(1, _CHUNK_ELEMENTS // e)
    offsets = np.arange(e)
    for start in range(0, n, rows):
        stop = min(start + rows, n)
        r_idx = np.arange(start, stop)[:, None]
        s_idx = r_idx + offsets[None, :]
        mask = s_idx < n
        s_safe = np.minimum(s_idx, n - 1)
        s_times = left[s_safe]
        x_col = x[start:stop, None]
        b_vals = np.asarray(flow.chars.beta(view, s_times, x_col), dtype=np.float64)
        g_vals = np.asarray(flow.chars.gamma(view, s_times, x_col), dtype=np.float64)
        b_out[start:stop] = np.sum(np.where(mask, b_vals, 0.0), axis=1) * grid.dt
        g_out[start:stop] = np.sum(np.where(mask, g_vals * dw[s_safe], 0.0), axis=1)
    return b_out, g_out


# ---------------------------------------------------------------------------
# Spot checks for declared regularity
# ---------------------------------------------------------------------------


def spot_check_holder(
    flow: StochasticFlow,
    driver: DriverLike,
    n_points: int = 65,
    scale: float = 1e-3,
    n_times: int = 5,
) -> tuple[float, bool]:
    """Two-point Holder quotients of gamma on the declared box.

    Continuity cannot be certified numerically, only falsified: the check
    fails when the quotient at the given scale exceeds 10x the declared
    constant.  Sample points mix a uniform grid with a geometric cluster
    around the box center, where test singularities usually sit.  Returns
    (max quotient, ok).
    """
    view = as_driver_view(driver)
    grid = view.grid
    lo, hi = flow.box
    mid = 0.5 * (lo + hi)
    cluster = mid + np.concatenate([-np.geomspace(1e-6, (hi - lo) / 4, 8), [0.0], np.geomspace(1e-6, (hi - lo) / 4, 8)])
    xs = np.unique(np.concatenate([np.linspace(lo, hi - scale, n_points), cluster]))
    t_idx = np.linspace(0, grid.n_steps, n_times).astype(int)
    worst = 0.0
    alpha = flow.chars.holder_alpha
    for k in t_idx:
        t = np.full_like(xs, grid.times[k])
        g0 = np.asarray(flow.chars.gamma(view, t, xs), dtype=np.float64)
        g1 = np.asarray(flow.chars.gamma(view, t, xs + scale), dtype=np.float64)
        q = np.max(np.abs(g1 - g0)) / scale**alpha
        worst = max(worst, float(q))
    return worst, worst <= 10.0 * flow.chars.holder_const


def spot_check_integrability(
    flow: StochasticFlow, driver: DriverLike, n_points: int = 33
) -> dict[str, float]:
    """Sampled versions of int_0^T sup_K |beta| dt and int_0^T sup_K |gamma|^2 dt."""
    view = as_driver_view(driver)
    grid = view.grid
    lo, hi = flow.box
    xs = np.linspace(lo, hi, n_points)
    left = grid.times[: grid.n_steps]
    sup_b = np.zeros(grid.n_steps)
    sup_g = np.zeros(grid.n_steps)
    for v in xs:
        sup_b = np.maximum(sup_b, np.abs(np.asarray(flow.chars.beta(view, left, np.asarray(v)), dtype=np.float64)))
        sup_g = np.maximum(sup_g, np.abs(np.asarray(flow.chars.gamma(view, left, np.asarray(v)), dtype=np.float64)))
    return {
        "beta_sup_integral": float(pairwise_sum(sup_b) * grid.dt),
        "gamma_sup_sq_integral": float(pairwise_sum(sup_g**2) * grid.dt),
    }
