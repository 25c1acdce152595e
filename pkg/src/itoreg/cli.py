"""Batch experiment runner: config in, CSV/JSON reports plus a manifest out.

One experiment per invocation, driven by a strict JSON config document
(unknown keys are hard errors at every nesting level: a silently ignored
typo would invalidate a convergence study).  For a fixed effective config
the emitted JSON verdicts are bit-identical across reruns and across worker
counts: per-path work is mapped by index, collected into index order, and
reduced with the fixed pairwise tree.

Exit codes: 0 experiment verdict passed, 1 verdict failed, 2 configuration
error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .errors import ConfigurationError, ContractViolation, ItoregError
from .flowkit import DeclaredBounds, StochasticFlow, builtin_flow, expression_flow, CATALOG_NAMES
from .numerics import fit_loglog_slope, pairwise_mean, sig17
from .pathkit import (
    BrownianMotion,
    FiniteVariation,
    ItoProcess,
    PathBundle,
    TimeGrid,
    ZeroEnergyCandidate,
    ensemble_seeds,
    simulate_weak_dirichlet,
)
from .proofterms import compute_proof_terms, lemma_convergence_check, mao_bound_check
from .regint import eps_covariation, eps_forward_integral, ito_integral_oracle
from .ucpstats import boundedness_in_probability, moment_estimate
from .ventzell import martingale_corollary_check, verify_decomposition, zero_energy_check

log = logging.getLogger("itoreg")

KINDS = (
    "covariation",
    "forward-integral",
    "ventzell-verify",
    "zero-energy",
    "corollary",
    "proof-terms",
    "lemma-check",
    "mao-bound",
)

_DEFAULT_EPS = tuple(2.0**-j for j in range(3, 9))


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    flow: Any = "frozen"
    process: dict | None = None
    t_horizon: float = 1.0
    n_steps: int = 2**14
    eps_max: float | None = None
    eps_schedule: tuple[float, ...] = _DEFAULT_EPS
    n_paths: int = 1000
    master_seed: int = 2023
    delta: float = 0.05
    eta: float = 0.05
    rho: float = 1.0
    m_thresholds: tuple[float, ...] | None = None
    martingales: tuple[str, ...] = ("brownian", "int-w-dw")
    lemma: str | None = None
    z_family: str | None = None
    n_r_nodes: int = 9
    target: float | None = None
    tol: float = 1e-10
    output_dir: str = "itoreg-out"

    @property
    def effective_eps_max(self) -> float:
        return self.eps_max if self.eps_max is not None else max(self.eps_schedule)

    def grid(self) -> TimeGrid:
        return TimeGrid(self.t_horizon, self.n_steps, self.effective_eps_max)

    def canonical_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["eps_schedule"] = list(self.eps_schedule)
        d["martingales"] = list(self.martingales)
        d["m_thresholds"] = None if self.m_thresholds is None else list(self.m_thresholds)
        return d

    def sha256(self) -> str:
        blob = json.dumps(self.canonical_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


_TOP_KEYS = {
    "kind", "flow", "process", "grid", "eps_schedule", "n_paths", "master_seed",
    "delta", "eta", "rho", "m_thresholds", "martingales", "lemma", "z_family",
    "n_r_nodes", "target", "tol", "output_dir",
}
_GRID_KEYS = {"t_horizon", "n_steps", "eps_max"}
_PROCESS_KEYS = {"martingale", "finite_variation", "zero_energy"}
_FLOW_KEYS = {"name", "f0", "beta", "gamma", "smoothness", "gamma_smoothness",
              "holder_alpha", "holder_const", "declared"}
_DECLARED_KEYS = {"beta_sup", "beta_mean_integral", "gamma_sup", "gamma_moment"}
_MART_KEYS = {"drift", "sigma", "x0"}
_FV_KEYS = {"profile", "rate"}
_ZE_KEYS = {"hurst", "scale"}


def _reject_unknown(d: dict, allowed: set, where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigurationError(f"unknown key(s) {sorted(unknown)} in {where}")


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigurationError("config document must be a JSON object")
    _reject_unknown(raw, _TOP_KEYS, "config")
    if "kind" not in raw:
        raise ConfigurationError("config needs a 'kind' field")
    kind = raw["kind"]
    if kind not in KINDS:
        raise ConfigurationError(f"unknown experiment kind {kind!r}; choose from {KINDS}")
    grid_part = raw.get("grid", {})
    if not isinstance(grid_part, dict):
        raise ConfigurationError("'grid' must be an object")
    _reject_unknown(grid_part, _GRID_KEYS, "grid")
    flow_part = raw.get("flow", "frozen")
    if isinstance(flow_part, dict):
        _reject_unknown(flow_part, _FLOW_KEYS, "flow")
        decl = flow_part.get("declared", {})
        if decl:
            _reject_unknown(decl, _DECLARED_KEYS, "flow.declared")
    process = raw.get("process")
    if process is not None:
        if not isinstance(process, dict):
            raise ConfigurationError("'process' must be an object")
        _reject_unknown(process, _PROCESS_KEYS, "process")
        mart = process.get("martingale", "brownian")
        if isinstance(mart, dict):
            _reject_unknown(mart, _MART_KEYS, "process.martingale")
        fv = process.get("finite_variation")
        if fv is not None:
            _reject_unknown(fv, _FV_KEYS, "process.finite_variation")
            if ("profile" in fv) == ("rate" in fv):
                raise ConfigurationError("finite_variation needs exactly one of profile/rate")
        ze = process.get("zero_energy")
        if ze is not None:
            _reject_unknown(ze, _ZE_KEYS, "process.zero_energy")
        if fv is not None and ze is not None:
            raise ConfigurationError("specify at most one of finite_variation and zero_energy")

    def _pos(name: str, value, kind_check=float) -> Any:
        v = kind_check(value)
        if v <= 0:
            raise ConfigurationError(f"{name} must be positive, got {value}")
        return v

    cfg = ExperimentConfig(
        kind=kind,
        flow=flow_part,
        process=process,
        t_horizon=_pos("grid.t_horizon", grid_part.get("t_horizon", 1.0)),
        n_steps=_pos("grid.n_steps", grid_part.get("n_steps", 2**14), int),
        eps_max=None if grid_part.get("eps_max") is None else _pos("grid.eps_max", grid_part["eps_max"]),
        eps_schedule=tuple(float(e) for e in raw.get("eps_schedule", _DEFAULT_EPS)),
        n_paths=_pos("n_paths", raw.get("n_paths", 1000), int),
        master_seed=int(raw.get("master_seed", 2023)),
        delta=_pos("delta", raw.get("delta", 0.05)),
        eta=_pos("eta", raw.get("eta", 0.05)),
        rho=_pos("rho", raw.get("rho", 1.0)),
        m_thresholds=None if raw.get("m_thresholds") is None else tuple(float(m) for m in raw["m_thresholds"]),
        martingales=tuple(raw.get("martingales", ("brownian", "int-w-dw"))),
        lemma=raw.get("lemma"),
        z_family=raw.get("z_family"),
        n_r_nodes=_pos("n_r_nodes", raw.get("n_r_nodes", 9), int),
        target=None if raw.get("target") is None else float(raw["target"]),
        tol=_pos("tol", raw.get("tol", 1e-10)),
        output_dir=str(raw.get("output_dir", "itoreg-out")),
    )
    if not cfg.eps_schedule:
        raise ConfigurationError("eps schedule must be nonempty")
    if any(b >= a for a, b in zip(cfg.eps_schedule, cfg.eps_schedule[1:])):
        raise ConfigurationError("eps schedule must be strictly decreasing")
    grid = cfg.grid()  # validates alignment
    for e in cfg.eps_schedule:
        grid.eps_to_steps(e)
        if e > cfg.effective_eps_max * (1 + 1e-12):
            raise ConfigurationError(f"eps={e} exceeds eps_max={cfg.effective_eps_max}")
    if cfg.kind == "lemma-check" and cfg.lemma not in ("L42", "L45", "L46"):
        raise ConfigurationError("lemma-check needs lemma in {'L42','L45','L46'}")
    if cfg.kind == "lemma-check" and cfg.z_family not in ("sqrt-eps", "unit", "y-eps", "z-eps"):
        raise ConfigurationError("lemma-check needs z_family in {'sqrt-eps','unit','y-eps','z-eps'}")
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(raw)


# ---------------------------------------------------------------------------
# Config -> objects
# ---------------------------------------------------------------------------


def _flow_from_config(cfg: ExperimentConfig) -> StochasticFlow:
    spec = cfg.flow
    if isinstance(spec, str):
        return builtin_flow(spec)
    name = spec.get("name", "custom")
    if name in CATALOG_NAMES and not any(k in spec for k in ("beta", "gamma")):
        return builtin_flow(name, spec.get("f0"))
    declared = spec.get("declared", {})
    return expression_flow(
        name=name,
        f0=spec.get("f0", "x"),
        beta=spec.get("beta", "0"),
        gamma=spec.get("gamma", "0"),
        smoothness=spec.get("smoothness", "C01"),
        gamma_smoothness=spec.get("gamma_smoothness", "C0"),
        holder_alpha=float(spec.get("holder_alpha", 1.0)),
        holder_const=float(spec.get("holder_const", 1.0)),
        declared_bounds=DeclaredBounds(
            beta_sup=declared.get("beta_sup"),
            beta_mean_integral=declared.get("beta_mean_integral"),
            gamma_sup=declared.get("gamma_sup"),
            gamma_moment=declared.get("gamma_moment"),
        ),
    )


def _time_expression(expr: str, with_driver: bool = False) -> Callable:
    import sympy

    t = sympy.Symbol("t", real=True)
    w = sympy.Symbol("W", real=True)
    tree = sympy.sympify(expr, locals={"t": t, "W": w, "abs": sympy.Abs, "min": sympy.Min, "max": sympy.Max})
    allowed = {t, w} if with_driver else {t}
    extra = tree.free_symbols - allowed
    if extra:
        raise ConfigurationError(f"expression {expr!r} uses unknown symbols {sorted(map(str, extra))}")
    if with_driver:
        fn = sympy.lambdify((t, w), tree, modules=["numpy"])

        def call2(tt, ww):
            out = np.asarray(fn(np.asarray(tt, dtype=np.float64), np.asarray(ww, dtype=np.float64)), dtype=np.float64)
            return np.broadcast_to(out, np.shape(tt)) if out.shape != np.shape(tt) else out

        return call2
    fn = sympy.lambdify(t, tree, modules=["numpy"])

    def call(tt):
        out = np.asarray(fn(np.asarray(tt, dtype=np.float64)), dtype=np.float64)
        return np.broadcast_to(out, np.shape(tt)) if out.shape != np.shape(tt) else out

    return call


def _specs_from_config(cfg: ExperimentConfig):
    process = cfg.process or {}
    mart = process.get("martingale", "brownian")
    if mart == "brownian":
        m_spec = BrownianMotion()
    elif isinstance(mart, dict):
        import sympy

        t = sympy.Symbol("t", real=True)
        x = sympy.Symbol("x", real=True)
        drift = sympy.lambdify((t, x), sympy.sympify(mart.get("drift", "0"), locals={"t": t, "x": x}), modules=["numpy"])
        sigma = sympy.lambdify((t, x), sympy.sympify(mart.get("sigma", "1"), locals={"t": t, "x": x}), modules=["numpy"])
        m_spec = ItoProcess(drift=lambda tt, xx: float(drift(tt, xx)),
                            diffusion=lambda tt, xx: float(sigma(tt, xx)),
                            x0=float(mart.get("x0", 0.0)))
    else:
        raise ConfigurationError(f"unknown martingale spec {mart!r}")
    a_spec = None
    fv = process.get("finite_variation")
    if fv is not None:
        if "profile" in fv:
            a_spec = FiniteVariation(profile=_time_expression(fv["profile"]))
        else:
            rate = _time_expression(fv["rate"], with_driver=True)
            a_spec = FiniteVariation(rate=rate)
    ze = process.get("zero_energy")
    if ze is not None:
        a_spec = ZeroEnergyCandidate(hurst=float(ze.get("hurst", 0.75)), scale=float(ze.get("scale", 1.0)))
    return m_spec, a_spec


def _bundles(cfg: ExperimentConfig, workers: int) -> list[PathBundle]:
    grid = cfg.grid()
    m_spec, a_spec = _specs_from_config(cfg)
    seeds = ensemble_seeds(cfg.master_seed, cfg.n_paths)

    def one(i: int) -> PathBundle:
        return simulate_weak_dirichlet(grid, m_spec, a_spec, seeds[i])

    return _map_indexed(one, cfg.n_paths, workers)


def _map_indexed(fn: Callable[[int], Any], n: int, workers: int) -> list:
    """Run fn(0..n-1), collecting results in index order regardless of workers."""
    if workers <= 1:
        return [fn(i) for i in range(n)]
    out: list = [None] * n

    def slot(i: int) -> None:
        out[i] = fn(i)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(slot, range(n)))
    return out


# ---------------------------------------------------------------------------
# Statistics helpers for verdicts
# ---------------------------------------------------------------------------


def _median(values: np.ndarray) -> float:
    return float(np.median(values))


def _median_se(values: np.ndarray) -> float:
    # Normal-approximation standard error of the median; slack for monotone
    # comparisons across the schedule, not a calibrated interval.
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return 0.0
    return float(1.2533 * np.std(v, ddof=1) / np.sqrt(v.size))


def _nonincreasing(values: Sequence[float], slacks: Sequence[float]) -> bool:
    for j in range(len(values) - 1):
        if values[j + 1] > values[j] + slacks[j] + slacks[j + 1] + 1e-15:
            return False
    return True


def _json_text(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _fname(cfg: ExperimentConfig, stem: str, eps: float | None = None, ext: str = "csv") -> str:
    flow_name = cfg.flow if isinstance(cfg.flow, str) else cfg.flow.get("name", "custom")
    parts = [cfg.kind, stem, flow_name, f"seed{cfg.master_seed}"]
    if eps is not None:
        parts.append(f"eps{eps:g}")
    parts.append(f"dt{cfg.t_horizon / cfg.n_steps:g}")
    return "_".join(parts) + "." + ext


# ---------------------------------------------------------------------------
# Experiment implementations (verdict, {filename: content})
# ---------------------------------------------------------------------------


def _run_covariation(cfg: ExperimentConfig, workers: int):
    grid = cfg.grid()
    horizon = grid.t_horizon
    bundles = _bundles(cfg, workers)
    target = cfg.target if cfg.target is not None else (
        horizon if isinstance(_specs_from_config(cfg)[0], BrownianMotion) and _specs_from_config(cfg)[1] is None else None
    )

    def one(i: int):
        return [eps_covariation(bundles[i].x, bundles[i].x, e, horizon).value for e in cfg.eps_schedule]

    values = np.asarray(_map_indexed(one, cfg.n_paths, workers))
    lines = ["path,t,eps,value,n_nodes"]
    for i in range(cfg.n_paths):
        for j, e in enumerate(cfg.eps_schedule):
            lines.append(f"{i},{sig17(horizon)},{sig17(e)},{sig17(values[i, j])},{grid.n_steps}")
    records = []
    mads = []
    ses = []
    for j, e in enumerate(cfg.eps_schedule):
        col = values[:, j]
        mean = pairwise_mean(col)
        if target is not None:
            dev = np.abs(col - target)
            mad, mad_ci = moment_estimate(dev, 1.0)
        else:
            mad, mad_ci = moment_estimate(col - pairwise_mean(col), 1.0)
        se = float(np.std(col, ddof=1) / np.sqrt(col.size)) if col.size > 1 else 0.0
        records.append({"epsilon": e, "mean": mean, "se": se, "mad": mad, "mad_ci": mad_ci, "n": int(col.size)})
        mads.append(mad)
        ses.append(mad_ci)
    verdict = _nonincreasing(mads, ses)
    if target is not None:
        last = records[-1]
        verdict = verdict and abs(last["mean"] - target) <= 3 * last["se"]
    report = {
        "experiment": "covariation",
        "target": target,
        "records": records,
        "loglog_slope_mad": fit_loglog_slope(cfg.eps_schedule, mads),
        "verdict": bool(verdict),
    }
    return verdict, {
        _fname(cfg, "samples"): "\n".join(lines) + "\n",
        _fname(cfg, "verdict", ext="json"): _json_text(report),
    }


def _run_forward_integral(cfg: ExperimentConfig, workers: int):
    grid = cfg.grid()
    horizon = grid.t_horizon
    bundles = _bundles(cfg, workers)

    def one(i: int):
        w = bundles[i].w
        oracle = ito_integral_oracle(w, w, horizon)
        row = []
        for e in cfg.eps_schedule:
            row.append((eps_forward_integral(w, w, e, horizon).value, oracle))
        return row

    rows = _map_indexed(one, cfg.n_paths, workers)
    lines = ["path,eps,forward,oracle,abs_diff"]
    devs = np.empty((cfg.n_paths, len(cfg.eps_schedule)))
    for i, row in enumerate(rows):
        for j, (fwd, oracle) in enumerate(row):
            devs[i, j] = abs(fwd - oracle)
            lines.append(
                f"{i},{sig17(cfg.eps_schedule[j])},{sig17(fwd)},{sig17(oracle)},{sig17(devs[i, j])}"
            )
    medians = [_median(devs[:, j]) for j in range(devs.shape[1])]
    slacks = [_median_se(devs[:, j]) for j in range(devs.shape[1])]
    verdict = _nonincreasing(medians, slacks) and medians[-1] <= cfg.delta
    report = {
        "experiment": "forward-integral",
        "records": [
            {"epsilon": e, "median_abs_diff": m, "median_se": s, "n": cfg.n_paths}
            for e, m, s in zip(cfg.eps_schedule, medians, slacks)
        ],
        "delta": cfg.delta,
        "loglog_slope_median": fit_loglog_slope(cfg.eps_schedule, medians),
        "verdict": bool(verdict),
    }
    return verdict, {
        _fname(cfg, "samples"): "\n".join(lines) + "\n",
        _fname(cfg, "verdict", ext="json"): _json_text(report),
    }


def _run_ventzell_verify(cfg: ExperimentConfig, workers: int):
    flow = _flow_from_config(cfg)
    bundles = _bundles(cfg, workers)

    def one(i: int):
        sups = []
        terms_csv = None
        for e in cfg.eps_schedule:
            report = verify_decomposition(flow, bundles[i], e)
            disc = report.discrepancy
            sups.append((float(np.max(np.abs(disc))), float(abs(disc[-1]))))
            if i == 0:
                terms_csv = terms_csv or {}
                terms_csv[e] = report.to_csv()
        return sups, terms_csv

    results = _map_indexed(one, cfg.n_paths, workers)
    files = {}
    lines = ["path,eps,sup_discrepancy,terminal_discrepancy"]
    sup_matrix = np.empty((cfg.n_paths, len(cfg.eps_schedule)))
    for i, (sups, terms_csv) in enumerate(results):
        for j, (sup, term) in enumerate(sups):
            sup_matrix[i, j] = sup
            lines.append(f"{i},{sig17(cfg.eps_schedule[j])},{sig17(sup)},{sig17(term)}")
        if terms_csv:
            for e, csv in terms_csv.items():
                files[_fname(cfg, "terms-path0", eps=e)] = csv
    medians = [_median(sup_matrix[:, j]) for j in range(sup_matrix.shape[1])]
    slacks = [_median_se(sup_matrix[:, j]) for j in range(sup_matrix.shape[1])]
    verdict = _nonincreasing(medians, slacks) and medians[-1] <= cfg.delta
    report = {
        "experiment": "ventzell-verify",
        "flow": flow.name,
        "records": [
            {"epsilon": e, "median_sup_discrepancy": m, "median_se": s, "n": cfg.n_paths}
            for e, m, s in zip(cfg.eps_schedule, medians, slacks)
        ],
        "delta": cfg.delta,
        "loglog_slope_median": fit_loglog_slope(cfg.eps_schedule, medians),
        "verdict": bool(verdict),
    }
    files[_fname(cfg, "samples")] = "\n".join(lines) + "\n"
    files[_fname(cfg, "verdict", ext="json")] = _json_text(report)
    return verdict, files


def _run_zero_energy(cfg: ExperimentConfig, workers: int):
    flow = _flow_from_config(cfg)
    bundles = _bundles(cfg, workers)
    files = {}
    all_ok = True
    for mart in cfg.martingales:
        series = zero_energy_check(flow, bundles, mart, cfg.eps_schedule, cfg.delta, cfg.eta)
        all_ok = all_ok and series.verdict
        doc = series.to_json_dict()
        doc["experiment"] = "zero-energy"
        doc["martingale"] = mart
        doc["flow"] = flow.name
        files[_fname(cfg, f"verdict-{mart}", ext="json")] = _json_text(doc)
    return all_ok, files


def _run_corollary(cfg: ExperimentConfig, workers: int):
    flow = _flow_from_config(cfg)
    bundles = _bundles(cfg, workers)
    report = martingale_corollary_check(flow, bundles, tol=cfg.tol, eps=cfg.eps_schedule[-1])
    lines = ["path,sup_residual"]
    for i, s in enumerate(report.sup_residuals):
        lines.append(f"{i},{sig17(s)}")
    doc = {
        "experiment": "corollary",
        "flow": flow.name,
        "tol": cfg.tol,
        "max_sup_residual": float(report.worst_value),
        "worst_path": report.worst_path,
        "worst_node": report.worst_node,
        "max_self_covariation": float(np.max(np.abs(report.self_covariations))),
        "verdict": report.passed,
    }
    return report.passed, {
        _fname(cfg, "sups"): "\n".join(lines) + "\n",
        _fname(cfg, "verdict", ext="json"): _json_text(doc),
    }


_PROOF_DECAY_TERMS = ("y_sup", "r11", "r12", "r21", "r22")


def _run_proof_terms(cfg: ExperimentConfig, workers: int):
    flow = _flow_from_config(cfg)
    bundles = _bundles(cfg, workers)
    m_is_w = isinstance(_specs_from_config(cfg)[0], BrownianMotion)

    def one(i: int):
        bundle = bundles[i]
        n_path = bundle.w.with_label("martingale")
        per_eps = []
        path0 = {}
        for e in cfg.eps_schedule:
            terms = compute_proof_terms(flow, bundle, n_path, e)
            recon = terms.check_reconstruction()
            stats = {
                "recon_ok": recon.ok,
                "recon_err": recon.max_abs_error,
                "y_sup": float(np.max(np.abs(terms.y_eps))),
                "r11": float(np.max(np.abs(terms.r11))),
                "r12": float(np.max(np.abs(terms.r12))),
                "r21": float(np.max(np.abs(terms.r21))),
                "r22": float(np.max(np.abs(terms.r22))),
            }
            if m_is_w:
                from .flowkit import flow_dx_along

                grid = bundle.x.grid
                fx0 = flow_dx_along(flow, bundle.w, grid.times[: grid.n_steps], bundle.x.series()[:-1], order=1)
                oracle = float(np.sum(fx0) * grid.dt)  # d[M,N] = dt for M = N = W
                stats["i11_vs_oracle"] = abs(float(terms.i11[-1]) - oracle)
            per_eps.append(stats)
            if i == 0:
                path0[e] = terms.to_csv()
        return per_eps, path0

    results = _map_indexed(one, cfg.n_paths, workers)
    files = {}
    lines = ["path,eps,recon_err," + ",".join(_PROOF_DECAY_TERMS) + ",i11_vs_oracle"]
    all_recon = True
    decay = {name: np.empty((cfg.n_paths, len(cfg.eps_schedule))) for name in _PROOF_DECAY_TERMS}
    i11dev = np.full((cfg.n_paths, len(cfg.eps_schedule)), np.nan)
    for i, (per_eps, path0) in enumerate(results):
        for j, stats in enumerate(per_eps):
            all_recon = all_recon and stats["recon_ok"]
            for name in _PROOF_DECAY_TERMS:
                decay[name][i, j] = stats[name]
            cells = [str(i), sig17(cfg.eps_schedule[j]), sig17(stats["recon_err"])]
            cells += [sig17(stats[name]) for name in _PROOF_DECAY_TERMS]
            if "i11_vs_oracle" in stats:
                i11dev[i, j] = stats["i11_vs_oracle"]
                cells.append(sig17(stats["i11_vs_oracle"]))
            else:
                cells.append("")
            lines.append(",".join(cells))
        for e, csv in (path0 or {}).items():
            files[_fname(cfg, "terms-path0", eps=e)] = csv
    records = []
    verdict = all_recon
    for name in _PROOF_DECAY_TERMS:
        med = [_median(decay[name][:, j]) for j in range(len(cfg.eps_schedule))]
        slack = [_median_se(decay[name][:, j]) for j in range(len(cfg.eps_schedule))]
        ok = _nonincreasing(med, slack)
        verdict = verdict and ok
        records.append({"term": name, "medians": med, "nonincreasing": ok})
    if m_is_w:
        med = [_median(i11dev[:, j]) for j in range(len(cfg.eps_schedule))]
        slack = [_median_se(i11dev[:, j]) for j in range(len(cfg.eps_schedule))]
        ok = _nonincreasing(med, slack)
        verdict = verdict and ok
        records.append({"term": "i11_vs_oracle", "medians": med, "nonincreasing": ok})
    doc = {
        "experiment": "proof-terms",
        "flow": flow.name,
        "eps_schedule": list(cfg.eps_schedule),
        "reconstruction_ok": bool(all_recon),
        "decay": records,
        "verdict": bool(verdict),
    }
    files[_fname(cfg, "samples")] = "\n".join(lines) + "\n"
    files[_fname(cfg, "verdict", ext="json")] = _json_text(doc)
    return verdict, files


def _run_lemma_check(cfg: ExperimentConfig, workers: int):
    flow = _flow_from_config(cfg)
    bundles = _bundles(cfg, workers)
    xs = [b.x for b in bundles]
    ys = [b.w for b in bundles] if cfg.lemma == "L46" else None
    grid = xs[0].grid
    n = grid.n_steps

    if cfg.z_family == "sqrt-eps":
        def z_family(i, e):
            return np.full(n, np.sqrt(e))
    elif cfg.z_family == "unit":
        def z_family(i, e):
            return np.ones(n)
    else:
        attr = {"y-eps": "y_eps", "z-eps": "z_eps"}[cfg.z_family]
        cache: dict[tuple[int, float], np.ndarray] = {}

        def z_family(i, e):
            key = (i, e)
            if key not in cache:
                terms = compute_proof_terms(flow, bundles[i], bundles[i].w.with_label("martingale"), e)
                cache[(i, e)] = getattr(terms, attr)
            return cache[key]

    series = lemma_convergence_check(cfg.lemma, xs, z_family, cfg.eps_schedule, ys, cfg.delta, cfg.eta)
    doc = series.to_json_dict()
    doc["experiment"] = "lemma-check"
    doc["lemma"] = cfg.lemma
    doc["z_family"] = cfg.z_family
    files = {_fname(cfg, f"verdict-{cfg.lemma}", ext="json"): _json_text(doc)}
    if cfg.m_thresholds:
        sups = {e: [est for est in series.estimates[j].sup_samples] for j, e in enumerate(cfg.eps_schedule)}
        tight = boundedness_in_probability(sups, cfg.m_thresholds, cfg.eta)
        tdoc = tight.to_json_dict()
        tdoc["experiment"] = "lemma-check-tightness"
        files[_fname(cfg, "tightness", ext="json")] = _json_text(tdoc)
    return series.verdict, files


def _run_mao_bound(cfg: ExperimentConfig, workers: int):
    flow = _flow_from_config(cfg)
    bundles = _bundles(cfg, workers)
    report = mao_bound_check(flow, bundles, cfg.eps_schedule, rho=cfg.rho, n_r_nodes=cfg.n_r_nodes)
    lines = ["r,eps,moment2,moment2_ci,momentp,momentp_ci,flagged"]
    for j, e in enumerate(cfg.eps_schedule):
        for i, r in enumerate(report.r_times):
            lines.append(
                ",".join([
                    sig17(r), sig17(e),
                    sig17(report.moment2[i, j]), sig17(report.moment2_ci[i, j]),
                    sig17(report.momentp[i, j]), sig17(report.momentp_ci[i, j]),
                    str(bool(report.flagged[i, j])),
                ])
            )
    doc = report.to_json_dict()
    doc["experiment"] = "mao-bound"
    doc["flow"] = flow.name
    return report.passed, {
        _fname(cfg, "moments"): "\n".join(lines) + "\n",
        _fname(cfg, "verdict", ext="json"): _json_text(doc),
    }


_RUNNERS = {
    "covariation": _run_covariation,
    "forward-integral": _run_forward_integral,
    "ventzell-verify": _run_ventzell_verify,
    "zero-energy": _run_zero_energy,
    "corollary": _run_corollary,
    "proof-terms": _run_proof_terms,
    "lemma-check": _run_lemma_check,
    "mao-bound": _run_mao_bound,
}


def run_experiment(cfg: ExperimentConfig, output_dir: str | Path | None = None, workers: int = 1) -> int:
    """Run one experiment; write reports and a manifest; return the exit code."""
    out = Path(output_dir) if output_dir is not None else Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if not out.is_dir():
            raise ConfigurationError(f"output directory {out} is not writable")
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {out}: {exc}") from exc
    log.info("running %s (N=%d, n_steps=%d, seed=%d)", cfg.kind, cfg.n_paths, cfg.n_steps, cfg.master_seed)
    verdict, files = _RUNNERS[cfg.kind](cfg, workers)
    entries = []
    for name in sorted(files):
        payload = files[name].encode("utf-8")
        (out / name).write_bytes(payload)
        entries.append({"name": name, "sha256": hashlib.sha256(payload).hexdigest()})
    manifest = {
        "config_sha256": cfg.sha256(),
        "tool_version": __version__,
        "files": entries,
    }
    (out / "manifest.json").write_text(_json_text(manifest), encoding="utf-8")
    log.info("verdict: %s; %d file(s) in %s", "pass" if verdict else "FAIL", len(entries) + 1, out)
    return 0 if verdict else 1


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="itoreg",
        description="Run one regularization-calculus experiment from a JSON config.",
    )
    parser.add_argument("config", help="path to the experiment config (JSON)")
    parser.add_argument("-o", "--output-dir", default=None, help="override the config's output directory")
    parser.add_argument("-w", "--workers", type=int, default=1, help="worker threads across ensemble paths")
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")
    parser.add_argument("--log-level", default="info", choices=["debug", "info", "warning", "error"])
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, master_seed=args.seed)
        return run_experiment(cfg, args.output_dir, max(1, args.workers))
    except (ConfigurationError, ContractViolation) as exc:
        log.error("configuration error: %s", exc)
        return 2
    except ItoregError as exc:
        log.error("runtime error: %s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
