"""Simulation harness: synthetic cohorts, scenarios and replicate metrics.

Each scenario fixes the design (exposures, covariates, group labels) once
from the master seed and then redraws intercepts, covariate coefficients and
residuals for every replicate.  Everything is a deterministic function of
``(scenario, models, config, master_seed)``.

Metrics are reported on the mean-square scale: the weight function is
rescaled to unit mean square over the grid and ``beta`` absorbs the
reciprocal factor, so a true ``w^1`` with ``beta = 0.1`` is reported as
``beta = 0.1``.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import beta as beta_fn

from .basis import ExposureMatrix, build_basis
from .errors import BdlimError, ParameterError
from .model import BdlimData, BdlimSpec, Family, Pattern
from .posterior import average_cumulative_effect, dic, mlppd, project_weight_mean
from .samplers import ChainConfig, PosteriorSample, run_chains

__all__ = [
    "WEIGHT_KINDS",
    "weight_fn",
    "weight_curve",
    "generate_exposures",
    "generate_covariates",
    "Scenario",
    "SCENARIOS",
    "get_scenario",
    "SimulationDesign",
    "make_design",
    "simulate_outcome",
    "simulate_binary_outcome",
    "window_weight",
    "true_effects",
    "ReplicateResult",
    "MetricsTable",
    "run_replicate",
    "run_scenario",
]

WEIGHT_KINDS = ("w1", "w2", "w3")
MODELS = ("n", "b", "w", "bw")


# ---------------------------------------------------------------- weights

def weight_fn(kind: str, t_scaled, T: int):
    """Evaluate a test weight function at ``t_scaled`` in [0, 1].

    ``w1`` is a symmetric bump, ``w2`` a shifted sine scaled to unit mean
    square over the grid ``k/T`` (``k = 1..T``) and ``w3`` is flat.
    """
    t = np.asarray(t_scaled, dtype=float)
    if np.any((t < 0) | (t > 1)):
        raise ParameterError("t_scaled must lie in [0, 1]")
    if kind == "w1":
        out = np.sqrt(t ** 4 * (1 - t) ** 4 / beta_fn(5, 5))
    elif kind == "w2":
        tk = np.arange(1, T + 1) / T
        rms = math.sqrt(np.mean(np.sin(tk * np.pi - np.pi / 4) ** 2))
        out = np.sin(t * np.pi - np.pi / 4) / rms
    elif kind == "w3":
        out = np.ones_like(t)
    else:
        raise ParameterError(f"unknown weight function {kind!r}; expected one of {WEIGHT_KINDS}")
    return out if out.ndim else float(out)


def weight_curve(kind: str, T: int) -> np.ndarray:
    """``weight_fn`` on the grid ``k/T``, ``k = 1..T``."""
    return weight_fn(kind, np.arange(1, T + 1) / T, T)


# ---------------------------------------------------------------- data

def generate_exposures(n: int, T: int, rho: float = 0.9, sd: float = 1.0,
                       seasonal_amp: float = 1.0, rng=None, period: float = 52.0
                       ) -> ExposureMatrix:
    """Stationary AR(1) rows plus a seasonal sine with a random phase per row.

    The AR(1) part has marginal standard deviation ``sd`` and lag-one
    correlation ``rho``; the seasonal term is
    ``seasonal_amp * sin(2 pi t / period + phase_i)``.
    """
    if n < 1 or T < 1:
        raise ParameterError("n and T must be positive")
    if not 0 <= rho < 1:
        raise ParameterError("rho must lie in [0, 1)")
    if sd <= 0:
        raise ParameterError("sd must be positive")
    rng = np.random.default_rng(rng)
    e = rng.standard_normal((n, T))
    x = np.empty((n, T))
    x[:, 0] = e[:, 0]
    innov = math.sqrt(1 - rho * rho)
    for t in range(1, T):
        x[:, t] = rho * x[:, t - 1] + innov * e[:, t]
    phase = rng.uniform(0, 2 * np.pi, size=n)
    t = np.arange(1, T + 1)
    values = sd * x + seasonal_amp * np.sin(2 * np.pi * t / period + phase[:, None])
    return ExposureMatrix(values)


def generate_covariates(n: int, n_binary: int = 10, n_continuous: int = 3, rng=None) -> np.ndarray:
    """Bernoulli(0.5) columns followed by standard-normal columns."""
    rng = np.random.default_rng(rng)
    return np.hstack([rng.binomial(1, 0.5, size=(n, n_binary)).astype(float),
                      rng.standard_normal((n, n_continuous))])


# ---------------------------------------------------------------- scenarios

@dataclass(frozen=True)
class Scenario:
    """Data-generating setup for one simulation scenario.

    ``weights`` and ``beta`` have one entry per group.  The exposure term of
    the outcome is ``beta_j * lag_step * sum_t X_i(t) w_j(t)``; the default
    ``lag_step = 1`` treats each grid step as one week, ``1 / T`` gives the
    grid average.  The exposure defaults give a smooth, strongly seasonal
    process whose leading components capture the test weight functions.
    """

    id: str
    weights: tuple
    beta: tuple
    group_sizes: tuple = (239, 267)
    residual_sd: float = 6.0
    n_replicates: int = 100
    T: int = 37
    lag_step: float = 1.0
    rho: float = 0.98
    exposure_sd: float = 1.0
    seasonal_amp: float = 3.0
    period: float = 52.0
    n_binary: int = 10
    n_continuous: int = 3
    knots: int = 15
    variance_threshold: float = 0.99
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(self.weights))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "group_sizes", tuple(int(g) for g in self.group_sizes))
        J = len(self.group_sizes)
        if len(self.weights) != J or len(self.beta) != J:
            raise ParameterError("weights, beta and group_sizes need one entry per group")
        for w in self.weights:
            if w not in WEIGHT_KINDS:
                raise ParameterError(f"unknown weight function {w!r}")
        if self.n_replicates < 1:
            raise ParameterError("n_replicates must be at least 1")
        if self.residual_sd < 0:
            raise ParameterError("residual_sd must be nonnegative")
        p = self.n_binary + self.n_continuous
        if min(self.group_sizes) < p + 2:
            raise ParameterError("every group needs at least p + 2 members")

    @property
    def n(self) -> int:
        return sum(self.group_sizes)

    @property
    def J(self) -> int:
        return len(self.group_sizes)

    @property
    def p(self) -> int:
        return self.n_binary + self.n_continuous

    def weight_matrix(self) -> np.ndarray:
        return np.stack([weight_curve(w, self.T) for w in self.weights])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ParameterError(f"unknown scenario keys: {sorted(extra)}")
        return cls(**d)


def _b(id_, w2, b2, desc):
    return Scenario(id_, ("w1", w2), (0.1, b2), description=desc)


def _a(id_, w, desc):
    return Scenario(id_, (w,), (0.1,), group_sizes=(506,), description=desc)


SCENARIOS = {
    "B.1": _b("B.1", "w1", 0.1, "no heterogeneity"),
    "B.2": _b("B.2", "w1", -0.2, "heterogeneity in beta only"),
    "B.3": _b("B.3", "w1", 0.0, "one group with no effect"),
    "B.4": _b("B.4", "w2", 0.2, "heterogeneity in w(t) and beta"),
    "B.5": _b("B.5", "w2", 0.1, "heterogeneity in w(t) only"),
    "A.1": _a("A.1", "w1", "single group, bump-shaped weights"),
    "A.2": _a("A.2", "w2", "single group, sine-shaped weights"),
    "A.3": _a("A.3", "w3", "single group, flat weights"),
}


def get_scenario(name: str, **overrides) -> Scenario:
    try:
        base = SCENARIOS[name.upper()]
    except KeyError:
        raise ParameterError(f"unknown scenario {name!r}; known: {sorted(SCENARIOS)}") from None
    return replace(base, **overrides) if overrides else base


@dataclass(frozen=True)
class SimulationDesign:
    """Fixed part of a scenario: exposures, covariates, groups and basis."""

    X: ExposureMatrix
    Z: np.ndarray
    groups: np.ndarray
    basis: object
    scores: np.ndarray


def make_design(scenario: Scenario, rng) -> SimulationDesign:
    rng = np.random.default_rng(rng)
    X = generate_exposures(scenario.n, scenario.T, scenario.rho, scenario.exposure_sd,
                           scenario.seasonal_amp, rng, scenario.period)
    Z = generate_covariates(scenario.n, scenario.n_binary, scenario.n_continuous, rng)
    groups = np.repeat(np.arange(scenario.J), scenario.group_sizes)
    basis, scores = build_basis(X, scenario.knots, scenario.variance_threshold)
    return SimulationDesign(X, Z, groups, basis, scores)


def simulate_outcome(scenario: Scenario, X, Z, groups, rng) -> np.ndarray:
    """Gaussian outcome with group-specific lagged exposure effects.

    Intercepts (one per group) and covariate coefficients are drawn as
    standard normals on every call.
    """
    rng = np.random.default_rng(rng)
    values = X.values if isinstance(X, ExposureMatrix) else np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float).reshape(values.shape[0], -1)
    groups = np.asarray(groups)
    W = scenario.weight_matrix()
    if values.shape[1] != W.shape[1]:
        raise ParameterError(f"exposures have {values.shape[1]} time points, scenario has {W.shape[1]}")
    alpha = rng.standard_normal(scenario.J)
    gamma = rng.standard_normal(Z.shape[1])
    lagged = scenario.lag_step * np.einsum("it,it->i", values, W[groups])
    signal = np.asarray(scenario.beta)[groups] * lagged
    return alpha[groups] + signal + Z @ gamma + scenario.residual_sd * rng.standard_normal(values.shape[0])


def window_weight(T: int, first: int, last: int) -> np.ndarray:
    """Flat weights on weeks ``first..last`` (1-based, inclusive), zero elsewhere."""
    if not 1 <= first <= last <= T:
        raise ParameterError("window must satisfy 1 <= first <= last <= T")
    w = np.zeros(T)
    w[first - 1:last] = 1.0
    return w


def simulate_binary_outcome(X, Z, groups, beta, weights, rng, intercept=-1.0, gamma=None,
                            lag_step: float = 1.0) -> np.ndarray:
    """0/1 outcome from a logistic model with group-specific lagged effects.

    ``weights`` is ``(J, T)``; exposures are centered per time point so the
    intercept sets the baseline prevalence.
    """
    rng = np.random.default_rng(rng)
    values = X.values if isinstance(X, ExposureMatrix) else np.asarray(X, dtype=float)
    values = values - values.mean(axis=0)
    Z = np.asarray(Z, dtype=float).reshape(values.shape[0], -1)
    groups = np.asarray(groups)
    W = np.atleast_2d(np.asarray(weights, dtype=float))
    gamma = np.zeros(Z.shape[1]) if gamma is None else np.asarray(gamma, dtype=float)
    eta = (intercept + np.asarray(beta, dtype=float)[groups] * lag_step
           * np.einsum("it,it->i", values, W[groups]) + Z @ gamma)
    return (rng.random(values.shape[0]) < 1.0 / (1.0 + np.exp(-eta))).astype(float)


def true_effects(scenario: Scenario):
    """Truth on the reporting scale: ``beta`` (J,), ``w`` (J, T), average cumulative (J,)."""
    W = scenario.weight_matrix()
    norms = np.linalg.norm(W, axis=1)
    beta = np.asarray(scenario.beta) * scenario.lag_step * norms / math.sqrt(scenario.T)
    w = W / norms[:, None] * math.sqrt(scenario.T)
    avg = np.asarray(scenario.beta) * scenario.lag_step * W.sum(axis=1) / scenario.T
    return beta, w, avg


# ---------------------------------------------------------------- replicates

@dataclass
class ReplicateResult:
    replicate: int
    ok: bool
    error: str = ""
    # model -> per-group arrays and scalar scores
    models: dict = field(default_factory=dict)


def _fit_metrics(sample: PosteriorSample, data: BdlimData, design: SimulationDesign,
                 truth, level: float) -> dict:
    beta_t, w_t, avg_t = truth
    T = design.basis.T
    a = (1 - level) / 2
    psi = design.basis.psi
    out = {"beta_err": [], "beta_cover": [], "w_sqerr": [], "w_cover": [],
           "avg_err": [], "avg_cover": []}
    for j in range(sample.J):
        b = sample.beta[:, j] / math.sqrt(T)
        lo, hi = np.quantile(b, [a, 1 - a])
        out["beta_err"].append(b.mean() - beta_t[j])
        out["beta_cover"].append(bool(lo < beta_t[j] < hi))
        th = sample.theta[:, j]
        theta_hat, _ = project_weight_mean(th, design.basis.column_sums)
        w_hat = math.sqrt(T) * psi @ theta_hat
        wd = math.sqrt(T) * th @ psi.T
        wl, wu = np.quantile(wd, [a, 1 - a], axis=0)
        out["w_sqerr"].append(float(np.mean((w_hat - w_t[j]) ** 2)))
        out["w_cover"].append(float(np.mean((wl < w_t[j]) & (w_t[j] < wu))))
        c = average_cumulative_effect(sample.beta[:, j], th, design.basis)
        clo, chi = np.quantile(c, [a, 1 - a])
        out["avg_err"].append(c.mean() - avg_t[j])
        out["avg_cover"].append(bool(clo < avg_t[j] < chi))
    d, p = dic(sample, data)
    out["mlppd"] = mlppd(sample)
    out["dic"] = d
    out["p_d"] = p
    return {k: (np.asarray(v, dtype=float) if isinstance(v, list) else v) for k, v in out.items()}


def run_replicate(scenario: Scenario, design: SimulationDesign, models, config: ChainConfig,
                  master_seed: int, replicate: int, level: float = 0.95) -> ReplicateResult:
    """Simulate one outcome vector and fit every requested model to it."""
    rng = np.random.default_rng([master_seed, 1, replicate])
    y = simulate_outcome(scenario, design.X, design.Z, design.groups, rng)
    data = BdlimData(y, design.scores, design.groups, design.Z, design.basis.column_sums)
    truth = true_effects(scenario)
    chain_seed = int(rng.integers(2 ** 32))
    res = ReplicateResult(replicate, True)
    for m in models:
        pattern = Pattern.parse(m)
        spec = BdlimSpec(pattern=pattern, family=Family.GAUSSIAN, n_groups=scenario.J,
                         covariate_count=scenario.p)
        try:
            chains = run_chains(spec, data, replace(config, seed=chain_seed))
        except BdlimError as exc:
            return ReplicateResult(replicate, False, f"{pattern.value}: {exc}")
        sample = PosteriorSample.pool(chains)
        res.models[pattern.value] = _fit_metrics(sample, data, design, truth, level)
    return res


def _run_replicate_args(args):
    return run_replicate(*args)


# ---------------------------------------------------------------- metrics

GROUP_COLUMNS = ("scenario", "model", "group", "bias", "rmse_beta", "coverage_beta",
                 "rmse_w", "coverage_w", "bias_avg_cumulative", "rmse_avg_cumulative",
                 "coverage_avg_cumulative")
MODEL_COLUMNS = ("scenario", "model", "mean_mlppd", "mean_probability", "mlppd_selected",
                 "mean_dic", "dic_selected", "mean_p_d")


@dataclass
class MetricsTable:
    """Aggregated replicate metrics for one scenario.

    ``group_rows`` has one entry per (model, group) with bias, RMSE and
    coverage of ``beta`` and RMSE and coverage of ``w``.  ``model_rows`` has
    one entry per model with the mean MLPPD, the mean normalized probability,
    the proportion of replicates where the model had the highest MLPPD, and
    the same for DIC (lowest wins).
    """

    scenario: str
    models: tuple
    n_replicates: int
    n_failed: int
    group_rows: list
    model_rows: list
    failures: list = field(default_factory=list)
    seconds: float = 0.0
    config: dict = field(default_factory=dict)

    def group(self, model: str, group: int) -> dict:
        for r in self.group_rows:
            if r["model"] == model and r["group"] == group:
                return r
        raise KeyError((model, group))

    def model(self, model: str) -> dict:
        for r in self.model_rows:
            if r["model"] == model:
                return r
        raise KeyError(model)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "models": list(self.models),
            "n_replicates": self.n_replicates,
            "n_failed": self.n_failed,
            "failures": self.failures,
            "seconds": self.seconds,
            "config": self.config,
            "group_rows": self.group_rows,
            "model_rows": self.model_rows,
        }

    def to_json(self, path=None, indent=2) -> str:
        text = json.dumps(self.to_dict(), indent=indent)
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_csv(self, group_path, model_path):
        for path, cols, rows in ((group_path, GROUP_COLUMNS, self.group_rows),
                                 (model_path, MODEL_COLUMNS, self.model_rows)):
            with Path(path).open("w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=cols)
                writer.writeheader()
                writer.writerows(rows)


def _aggregate(scenario: Scenario, models, results) -> tuple:
    ok = [r for r in results if r.ok]
    group_rows, model_rows = [], []
    if not ok:
        return group_rows, model_rows
    models = [Pattern.parse(m).value for m in models]
    for m in models:
        stack = lambda key: np.array([r.models[m][key] for r in ok])  # noqa: E731
        be, bc = stack("beta_err"), stack("beta_cover")
        we, wc = stack("w_sqerr"), stack("w_cover")
        ae, ac = stack("avg_err"), stack("avg_cover")
        for j in range(scenario.J):
            group_rows.append({
                "scenario": scenario.id, "model": m, "group": j,
                "bias": float(be[:, j].mean()),
                "rmse_beta": float(np.sqrt(np.mean(be[:, j] ** 2))),
                "coverage_beta": float(bc[:, j].mean()),
                "rmse_w": float(np.sqrt(we[:, j].mean())),
                "coverage_w": float(wc[:, j].mean()),
                "bias_avg_cumulative": float(ae[:, j].mean()),
                "rmse_avg_cumulative": float(np.sqrt(np.mean(ae[:, j] ** 2))),
                "coverage_avg_cumulative": float(ac[:, j].mean()),
            })
    ml = np.array([[r.models[m]["mlppd"] for m in models] for r in ok])
    dc = np.array([[r.models[m]["dic"] for m in models] for r in ok])
    pd = np.array([[r.models[m]["p_d"] for m in models] for r in ok])
    probs = np.exp(ml - ml.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    ml_sel = np.bincount(np.argmax(ml, axis=1), minlength=len(models)) / len(ok)
    dic_sel = np.bincount(np.argmin(dc, axis=1), minlength=len(models)) / len(ok)
    for i, m in enumerate(models):
        model_rows.append({
            "scenario": scenario.id, "model": m,
            "mean_mlppd": float(ml[:, i].mean()),
            "mean_probability": float(probs[:, i].mean()),
            "mlppd_selected": float(ml_sel[i]),
            "mean_dic": float(dc[:, i].mean()),
            "dic_selected": float(dic_sel[i]),
            "mean_p_d": float(pd[:, i].mean()),
        })
    return group_rows, model_rows


def run_scenario(scenario: Scenario, models=MODELS, config: ChainConfig | None = None,
                 master_seed: int = 0, n_replicates: int | None = None, n_jobs: int = 1,
                 level: float = 0.95, progress=None) -> MetricsTable:
    """Run all replicates of ``scenario`` and aggregate metrics.

    Parameters
    ----------
    models : iterable of str
        Patterns to fit to every replicate.
    config : ChainConfig, optional
        Chain settings; the seed field is replaced per replicate.
    n_replicates : int, optional
        Overrides ``scenario.n_replicates``.
    n_jobs : int
        Worker processes for replicates.
    progress : callable, optional
        Called with each finished :class:`ReplicateResult`.
    """
    config = config or ChainConfig().halved()
    models = tuple(Pattern.parse(m).value for m in models)
    if not models:
        raise ParameterError("no models requested")
    R = scenario.n_replicates if n_replicates is None else int(n_replicates)
    if R < 1:
        raise ParameterError("n_replicates must be at least 1")
    start = time.perf_counter()
    design = make_design(scenario, np.random.default_rng([master_seed, 0]))
    jobs = [(scenario, design, models, config, master_seed, r, level) for r in range(R)]
    results = []
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            for res in pool.map(_run_replicate_args, jobs):
                results.append(res)
                if progress:
                    progress(res)
    else:
        for job in jobs:
            res = _run_replicate_args(job)
            results.append(res)
            if progress:
                progress(res)
    group_rows, model_rows = _aggregate(scenario, models, results)
    failures = [{"replicate": r.replicate, "error": r.error} for r in results if not r.ok]
    return MetricsTable(
        scenario=scenario.id, models=models, n_replicates=R, n_failed=len(failures),
        group_rows=group_rows, model_rows=model_rows, failures=failures,
        seconds=time.perf_counter() - start,
        config={"chain": config.to_dict(), "master_seed": master_seed,
                "scenario": scenario.to_dict(), "K": design.basis.K},
    )
