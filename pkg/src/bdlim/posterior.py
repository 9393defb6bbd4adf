"""Posterior summaries and model comparison.

All functions take plain draw arrays (or a :class:`PosteriorSample`) and are
pure.  Weight functions are reported on the basis scale, ``w = Psi theta``
with unit Euclidean norm over the grid; :func:`to_rms_scale` rescales a
``(beta, w)`` pair so that ``w`` has unit mean square instead.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .basis import BasisSet
from .errors import ParameterError, UnsupportedError
from .model import BdlimData, Family, ModelState, log_likelihood
from .samplers import PosteriorSample

__all__ = [
    "Interval",
    "WeightSummary",
    "ModelScore",
    "FitSummary",
    "project_weight_mean",
    "pointwise_bands",
    "identify_windows",
    "summarize_weight",
    "cumulative_effect",
    "average_cumulative_effect",
    "credible_interval",
    "recompute_loglik",
    "mlppd",
    "normalized_model_probs",
    "dic",
    "score_models",
    "pairwise_posterior_prob",
    "anova_decomposition",
    "split_rhat",
    "effective_sample_size",
    "mcse",
    "to_rms_scale",
    "summarize_fit",
]

NONIDENTIFIED_NORM = 1e-12


@dataclass(frozen=True)
class Interval:
    mean: float
    lower: float
    upper: float
    level: float = 0.95

    @property
    def excludes_zero(self) -> bool:
        return self.lower > 0 or self.upper < 0


def credible_interval(draws, level: float = 0.95) -> Interval:
    """Posterior mean and equal-tailed interval of a 1-d draw vector."""
    d = np.asarray(draws, dtype=float)
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(d, [a, 1.0 - a])
    return Interval(float(d.mean()), float(lo), float(hi), level)


# ---------------------------------------------------------------- weights

@dataclass(frozen=True)
class WeightSummary:
    theta_hat: np.ndarray
    w_hat: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    windows: tuple
    nonidentified: bool = False
    level: float = 0.95

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat.tolist(),
            "w_hat": self.w_hat.tolist(),
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "windows": list(self.windows),
            "nonidentified": self.nonidentified,
            "level": self.level,
        }


def project_weight_mean(theta_draws, basis_colsum=None):
    """Posterior mean of ``theta`` renormalized to unit length.

    Parameters
    ----------
    theta_draws : (S, K) array
        Unit-norm draws.
    basis_colsum : (K,) array, optional
        ``Psi^T 1``; only used to orient the fallback direction.

    Returns
    -------
    theta_hat : (K,) array
    nonidentified : bool
        True when the draw mean is numerically zero.  ``theta_hat`` is then the
        leading eigenvector of the draw second-moment matrix, oriented onto the
        constrained hemisphere.
    """
    th = np.atleast_2d(np.asarray(theta_draws, dtype=float))
    if th.shape[0] < 1:
        raise ParameterError("need at least one draw")
    bar = th.mean(axis=0)
    norm = np.linalg.norm(bar)
    if norm >= NONIDENTIFIED_NORM:
        return bar / norm, False
    warnings.warn("posterior mean of theta is numerically zero; weight function not identified",
                  stacklevel=2)
    _, vecs = np.linalg.eigh(th.T @ th / th.shape[0])
    v = vecs[:, -1]
    if basis_colsum is not None and np.dot(basis_colsum, v) < 0:
        v = -v
    return v / np.linalg.norm(v), True


def pointwise_bands(theta_draws, basis: BasisSet, level: float = 0.95):
    """Pointwise equal-tailed quantiles of ``w(t) = Psi theta`` over draws."""
    if not 0 < level < 1:
        raise ParameterError("level must lie in (0, 1)")
    th = np.atleast_2d(np.asarray(theta_draws, dtype=float))
    a = (1.0 - level) / 2.0
    if th.shape[0] < math.ceil(1.0 / a - 1e-9):
        warnings.warn(f"only {th.shape[0]} draws for a {level:.0%} band; tail quantiles are unreliable",
                      stacklevel=2)
    w = th @ basis.psi.T
    lower, upper = np.quantile(w, [a, 1.0 - a], axis=0)
    return lower, upper


def identify_windows(lower, upper) -> tuple:
    """Indices where the band strictly excludes zero."""
    lower = np.asarray(lower)
    upper = np.asarray(upper)
    return tuple(int(t) for t in np.flatnonzero((lower > 0) | (upper < 0)))


def summarize_weight(theta_draws, basis: BasisSet, level: float = 0.95) -> WeightSummary:
    theta_hat, flag = project_weight_mean(theta_draws, basis.column_sums)
    lower, upper = pointwise_bands(theta_draws, basis, level)
    return WeightSummary(theta_hat=theta_hat, w_hat=basis.psi @ theta_hat, lower=lower,
                         upper=upper, windows=identify_windows(lower, upper),
                         nonidentified=flag, level=level)


def cumulative_effect(beta_draws, theta_draws, basis: BasisSet, dt: float = 1.0):
    """Draws of ``beta * sum_t w(t) dt``.

    The hemisphere constraint makes ``sum_t w(t) >= 0``, so each draw has the
    sign of ``beta`` (or is zero).
    """
    beta = np.asarray(beta_draws, dtype=float)
    th = np.atleast_2d(np.asarray(theta_draws, dtype=float))
    return beta * (th @ basis.column_sums) * dt


def average_cumulative_effect(beta_draws, theta_draws, basis: BasisSet):
    """Draws of ``T^-1 sum_t beta w(t)``."""
    return cumulative_effect(beta_draws, theta_draws, basis) / basis.T


def to_rms_scale(beta, w):
    """Rescale ``(beta, w)`` so ``w`` has unit mean square over the grid.

    The product ``beta * w`` is unchanged.
    """
    w = np.asarray(w, dtype=float)
    c = math.sqrt(w.shape[-1])
    return np.asarray(beta, dtype=float) / c, w * c


# ---------------------------------------------------------------- scores

@dataclass(frozen=True)
class ModelScore:
    mlppd: float
    dic: float
    p_d: float
    normalized_probability: float = float("nan")


def recompute_loglik(sample: PosteriorSample, data: BdlimData) -> np.ndarray:
    """Full-data log-likelihood at every stored draw."""
    return np.array([
        log_likelihood(st, data.y, data.scores, data.Z, data.groups, sample.family)
        for st in sample.states()
    ])


def mlppd(sample: PosteriorSample, data: BdlimData | None = None) -> float:
    """Mean over draws of the full-data log-likelihood.

    Uses the stored per-draw values unless ``data`` is given.
    """
    ll = sample.loglik if data is None else recompute_loglik(sample, data)
    return float(np.mean(ll))


def normalized_model_probs(mlppds):
    """Softmax of MLPPD values.

    Accepts a sequence or a ``{name: value}`` mapping and returns the same
    kind.
    """
    if isinstance(mlppds, dict):
        keys = list(mlppds)
        probs = normalized_model_probs([mlppds[k] for k in keys])
        return dict(zip(keys, probs.tolist()))
    x = np.asarray(mlppds, dtype=float)
    if x.size == 0:
        raise ParameterError("no models to normalize")
    if np.any(np.isnan(x)):
        raise ParameterError("MLPPD values contain NaN")
    if not np.any(np.isfinite(x)):
        raise ParameterError("all MLPPD values are non-finite")
    return np.exp(x - logsumexp(x))


def plugin_state(sample: PosteriorSample) -> ModelState:
    """Posterior-mean parameters with ``theta`` at its projected mean."""
    theta = np.stack([
        project_weight_mean(sample.theta[:, j], None)[0] for j in range(sample.J)
    ])
    return ModelState(
        alpha=sample.alpha.mean(axis=0),
        beta=sample.beta.mean(axis=0),
        theta=theta,
        gamma=sample.gamma.mean(axis=0),
        sigma2=None if sample.sigma2 is None else float(np.mean(sample.sigma2)),
    )


def dic(sample: PosteriorSample, data: BdlimData):
    """Deviance information criterion.

    Returns ``(dic, p_d)`` with ``p_d = 2 (loglik(plug-in) - MLPPD)`` and
    ``dic = -2 MLPPD + p_d``.
    """
    m = mlppd(sample)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        st = plugin_state(sample)
    ll_hat = log_likelihood(st, data.y, data.scores, data.Z, data.groups, sample.family)
    p_d = 2.0 * (ll_hat - m)
    return -2.0 * m + p_d, p_d


def score_models(samples: dict, data: BdlimData) -> dict:
    """MLPPD, DIC and normalized probability for each entry of ``samples``.

    ``samples`` maps a model name to its (pooled) :class:`PosteriorSample`.
    """
    raw = {}
    for name, s in samples.items():
        d, p = dic(s, data)
        raw[name] = (mlppd(s), d, p)
    probs = normalized_model_probs({k: v[0] for k, v in raw.items()})
    return {k: ModelScore(v[0], v[1], v[2], probs[k]) for k, v in raw.items()}


# ---------------------------------------------------------------- contrasts

def pairwise_posterior_prob(beta_j, beta_k) -> float:
    """Fraction of aligned draws with ``beta_j > beta_k`` (strict)."""
    a = np.asarray(beta_j, dtype=float)
    b = np.asarray(beta_k, dtype=float)
    if a.shape != b.shape:
        raise ParameterError("draw vectors must be aligned")
    return float(np.mean(a > b))


def anova_decomposition(beta_draws) -> dict:
    """2x2 factorial contrasts of group effects, per draw.

    Columns of ``beta_draws`` are ordered ``(00, 01, 10, 11)`` where the first
    digit is factor A and the second factor B.
    """
    b = np.atleast_2d(np.asarray(beta_draws, dtype=float))
    if b.shape[1] != 4:
        raise UnsupportedError(f"ANOVA decomposition needs exactly 4 groups, got {b.shape[1]}")
    b00, b01, b10, b11 = b.T
    return {
        "main_a": 0.5 * ((b10 - b00) + (b11 - b01)),
        "main_b": 0.5 * ((b01 - b00) + (b11 - b10)),
        "interaction": b11 - b10 - b01 + b00,
    }


# ---------------------------------------------------------------- diagnostics

def _as_chains(x):
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


def split_rhat(chains) -> float:
    """Split-chain potential scale reduction for a ``(C, S)`` array."""
    x = _as_chains(chains)
    half = x.shape[1] // 2
    if half < 2:
        return float("nan")
    x = np.concatenate([x[:, :half], x[:, -half:]])
    n = x.shape[1]
    W = x.var(axis=1, ddof=1).mean()
    B = n * x.mean(axis=1).var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else float("inf")
    return float(math.sqrt(((n - 1) / n * W + B / n) / W))


def _autocov(x):
    n = x.shape[-1]
    f = np.fft.rfft(x - x.mean(axis=-1, keepdims=True), n=2 * n)
    return np.fft.irfft(f * np.conj(f), n=2 * n)[..., :n] / n


def effective_sample_size(chains) -> float:
    """Multi-chain ESS with Geyer's initial monotone sequence."""
    x = _as_chains(chains)
    C, n = x.shape
    if n < 4:
        return float(C * n)
    acov = _autocov(x)
    W = acov[:, 0].mean() * n / (n - 1)
    if W == 0:
        return float(C * n)
    var_plus = W * (n - 1) / n + (x.mean(axis=1).var(ddof=1) if C > 1 else 0.0)
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    tau = -1.0
    prev = np.inf
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        pair = min(pair, prev)
        prev = pair
        tau += 2.0 * pair
    return float(C * n / max(tau, 1.0 / math.log10(C * n + 10)))


def mcse(chains) -> float:
    """Monte Carlo standard error of the posterior mean."""
    x = _as_chains(chains)
    return float(x.std(ddof=1) / math.sqrt(effective_sample_size(x)))


# ---------------------------------------------------------------- fit summary

@dataclass
class FitSummary:
    """Everything reported for one fitted model."""

    pattern: str
    family: str
    group_labels: tuple
    beta: list
    cumulative: list
    average_cumulative: list
    weights: list
    time_grid: np.ndarray
    score: ModelScore | None = None
    diagnostics: dict = field(default_factory=dict)
    level: float = 0.95

    def to_dict(self) -> dict:
        return {
            "pattern": self.pattern,
            "family": self.family,
            "level": self.level,
            "group_labels": list(self.group_labels),
            "time_grid": self.time_grid.tolist(),
            "groups": [
                {
                    "label": lab,
                    "beta": asdict(self.beta[j]),
                    "cumulative_effect": asdict(self.cumulative[j]),
                    "average_cumulative_effect": asdict(self.average_cumulative[j]),
                    "weight": self.weights[j].to_dict(),
                }
                for j, lab in enumerate(self.group_labels)
            ],
            "score": None if self.score is None else asdict(self.score),
            "diagnostics": self.diagnostics,
        }

    def to_json(self, path=None, indent=2) -> str:
        text = json.dumps(self.to_dict(), indent=indent, default=_json_default)
        if path is not None:
            Path(path).write_text(text)
        return text

    def coefficient_rows(self) -> list:
        rows = []
        for j, lab in enumerate(self.group_labels):
            for name, iv in (("beta", self.beta[j]), ("cumulative", self.cumulative[j]),
                             ("average_cumulative", self.average_cumulative[j])):
                rows.append({"group": lab, "quantity": name, "mean": iv.mean,
                             "lower": iv.lower, "upper": iv.upper,
                             "excludes_zero": iv.excludes_zero})
        return rows

    def plot_rows(self) -> list:
        """One row per (group, time point): estimate, band and window flag."""
        rows = []
        for j, lab in enumerate(self.group_labels):
            ws = self.weights[j]
            win = set(ws.windows)
            for t, tt in enumerate(self.time_grid):
                rows.append({"group": lab, "t": float(tt), "w_hat": ws.w_hat[t],
                             "lower": ws.lower[t], "upper": ws.upper[t],
                             "window": t in win})
        return rows

    def to_csv(self, path):
        _write_rows(path, self.coefficient_rows())

    def plot_data_csv(self, path):
        _write_rows(path, self.plot_rows())


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(type(o).__name__)


def _write_rows(path, rows):
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def _chain_diagnostics(samples) -> dict:
    if not samples:
        return {}
    out = {}
    J = samples[0].J
    for j in range(J):
        x = np.stack([s.beta[:, j] for s in samples])
        out[f"beta_{j + 1}"] = {"rhat": split_rhat(x), "ess": effective_sample_size(x),
                                "mcse": mcse(x)}
    x = np.stack([s.loglik for s in samples])
    out["loglik"] = {"rhat": split_rhat(x), "ess": effective_sample_size(x), "mcse": mcse(x)}
    return out


def summarize_fit(samples, data: BdlimData, basis: BasisSet, level: float = 0.95,
                  score: ModelScore | None = None) -> FitSummary:
    """Summaries for one model from one or more chains."""
    if isinstance(samples, PosteriorSample):
        samples = [samples]
    samples = list(samples)
    pooled = PosteriorSample.pool(samples)
    if score is None:
        d, p = dic(pooled, data)
        score = ModelScore(mlppd(pooled), d, p)
    labels = pooled.group_labels or data.group_labels or tuple(str(j) for j in range(pooled.J))
    beta, cum, avg, weights = [], [], [], []
    for j in range(pooled.J):
        th = pooled.theta[:, j]
        beta.append(credible_interval(pooled.beta[:, j], level))
        cum.append(credible_interval(cumulative_effect(pooled.beta[:, j], th, basis), level))
        avg.append(credible_interval(average_cumulative_effect(pooled.beta[:, j], th, basis), level))
        weights.append(summarize_weight(th, basis, level))
    diag = _chain_diagnostics(samples)
    diag["n_chains"] = len(samples)
    diag["n_draws"] = pooled.n_draws
    diag["engine"] = pooled.engine
    return FitSummary(
        pattern=pooled.pattern.value, family=Family(pooled.family).value,
        group_labels=tuple(str(g) for g in labels), beta=beta, cumulative=cum,
        average_cumulative=avg, weights=weights,
        time_grid=basis.grid,
        score=score, diagnostics=diag, level=level,
    )
