"""MCMC engines.

Two engines cover the four heterogeneity patterns:

``gibbs_linear_reparam``
    Gaussian outcome with pattern N or BW.  The product ``theta* = beta * theta``
    is unconstrained, so ``(alpha, theta*, gamma)`` is one conjugate normal
    block, the scale ``kappa = beta^2 / tau^2`` has a GIG full conditional and
    the residual precision a gamma one.  Each stored draw is split back into
    ``(beta, theta)``.

``ess_constrained``
    Everything else (patterns B and W, and any logistic model).  Each distinct
    ``theta`` is driven by an auxiliary standard-normal vector ``v`` updated by
    elliptical slice sampling, with ``theta = sign(1^T Psi v) v / ||v||``; the
    push-forward of N(0, I) through that map is uniform on the constrained
    hemisphere.  The remaining coefficients are a conjugate normal block in
    the Gaussian case and an elliptical slice step around a Laplace
    approximation in the logistic case.

Gaussian engines work entirely from per-group sufficient statistics, so the
cost of an iteration does not grow with ``n``.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .errors import (
    DispatchError,
    ParameterError,
    SamplerError,
    SamplerStuckError,
    SeparationError,
)
from .gig import sample_gig
from .model import (
    LOG_2PI,
    BdlimData,
    BdlimSpec,
    Family,
    ModelState,
    Pattern,
)

__all__ = [
    "ChainConfig",
    "PosteriorSample",
    "deconvolve_theta_star",
    "elliptical_slice",
    "fold_direction",
    "gibbs_linear_reparam",
    "ess_constrained",
    "run_chains",
    "select_engine",
]

MAX_SHRINK = 1000
SEPARATION_BOUND = 20.0
DEGENERATE_NORM = 1e-14


@dataclass(frozen=True)
class ChainConfig:
    n_iter: int = 10000
    n_burnin: int = 5000
    thin: int = 5
    seed: int = 0
    n_chains: int = 1
    # elliptical slice updates per theta block per iteration
    theta_sweeps: int = 1

    def __post_init__(self):
        if self.n_iter < 1 or self.thin < 1 or self.n_chains < 1 or self.theta_sweeps < 1:
            raise ParameterError("n_iter, thin, n_chains and theta_sweeps must be positive")
        if not 0 <= self.n_burnin < self.n_iter:
            raise ParameterError("n_burnin must satisfy 0 <= n_burnin < n_iter")
        if (self.n_iter - self.n_burnin) % self.thin:
            raise ParameterError("n_iter - n_burnin must be a multiple of thin")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ParameterError("seed must be a 64-bit unsigned integer")
        if self.n_draws < 100:
            warnings.warn(f"only {self.n_draws} stored draws per chain; 100 or more recommended",
                          stacklevel=3)

    @property
    def n_draws(self) -> int:
        return (self.n_iter - self.n_burnin) // self.thin

    def halved(self) -> "ChainConfig":
        return replace(self, n_iter=self.n_iter // 2, n_burnin=self.n_burnin // 2)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class PosteriorSample:
    """Stored draws from one chain.

    Arrays are indexed by draw first: ``alpha``/``beta`` are ``S x J``,
    ``theta`` is ``S x J x K``, ``gamma`` is ``S x p``.  Shared components are
    repeated across groups.  ``theta_star`` holds the raw unconstrained draws
    for reparameterized chains and ``nonidentified`` flags draws whose
    ``theta*`` was numerically zero.
    """

    pattern: Pattern
    family: Family
    alpha: np.ndarray
    beta: np.ndarray
    theta: np.ndarray
    gamma: np.ndarray
    sigma2: np.ndarray | None
    loglik: np.ndarray
    chain_id: int = 0
    seed: int = 0
    engine: str = ""
    iterations: np.ndarray | None = None
    theta_star: np.ndarray | None = None
    nonidentified: np.ndarray | None = None
    group_labels: tuple = ()
    extra: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.beta.shape[0]

    @property
    def J(self) -> int:
        return self.beta.shape[1]

    @property
    def K(self) -> int:
        return self.theta.shape[2]

    def draw(self, s: int) -> ModelState:
        return ModelState(
            alpha=self.alpha[s], beta=self.beta[s], theta=self.theta[s], gamma=self.gamma[s],
            sigma2=None if self.sigma2 is None else float(self.sigma2[s]),
        )

    def states(self):
        for s in range(self.n_draws):
            yield self.draw(s)

    def columns(self) -> dict:
        """Flat column name -> 1-d array mapping (the CSV layout)."""
        S, J, K, p = self.n_draws, self.J, self.K, self.gamma.shape[1]
        cols = {
            "chain": np.full(S, self.chain_id),
            "iter": (np.arange(S) if self.iterations is None else self.iterations),
        }
        for j in range(J):
            cols[f"alpha_{j + 1}"] = self.alpha[:, j]
        for j in range(J):
            cols[f"beta_{j + 1}"] = self.beta[:, j]
        for j in range(J):
            for k in range(K):
                cols[f"theta_{j + 1}_{k + 1}"] = self.theta[:, j, k]
        for q in range(p):
            cols[f"gamma_{q + 1}"] = self.gamma[:, q]
        cols["sigma2"] = np.full(S, np.nan) if self.sigma2 is None else self.sigma2
        cols["loglik"] = self.loglik
        return cols

    def to_csv(self, path, header=True, mode="w"):
        cols = self.columns()
        names = list(cols)
        with Path(path).open(mode, newline="") as fh:
            writer = csv.writer(fh)
            if header:
                writer.writerow(names)
            for s in range(self.n_draws):
                writer.writerow([_fmt(cols[c][s]) for c in names])

    def to_dict(self) -> dict:
        d = {
            "pattern": self.pattern.value,
            "family": self.family.value,
            "chain_id": self.chain_id,
            "seed": int(self.seed),
            "engine": self.engine,
            "group_labels": list(self.group_labels),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "theta": self.theta.tolist(),
            "gamma": self.gamma.tolist(),
            "sigma2": None if self.sigma2 is None else self.sigma2.tolist(),
            "loglik": self.loglik.tolist(),
        }
        if self.iterations is not None:
            d["iterations"] = self.iterations.tolist()
        if self.theta_star is not None:
            d["theta_star"] = self.theta_star.tolist()
        if self.nonidentified is not None:
            d["nonidentified"] = self.nonidentified.tolist()
        return d

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict())
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "PosteriorSample":
        arr = lambda key: None if d.get(key) is None else np.asarray(d[key])  # noqa: E731
        S = len(d["beta"])
        gamma = np.asarray(d["gamma"], dtype=float).reshape(S, -1)
        return cls(
            pattern=Pattern.parse(d["pattern"]),
            family=Family.parse(d["family"]),
            alpha=np.asarray(d["alpha"], dtype=float),
            beta=np.asarray(d["beta"], dtype=float),
            theta=np.asarray(d["theta"], dtype=float),
            gamma=gamma,
            sigma2=arr("sigma2"),
            loglik=np.asarray(d["loglik"], dtype=float),
            chain_id=int(d.get("chain_id", 0)),
            seed=int(d.get("seed", 0)),
            engine=d.get("engine", ""),
            iterations=arr("iterations"),
            theta_star=arr("theta_star"),
            nonidentified=arr("nonidentified"),
            group_labels=tuple(d.get("group_labels", ())),
        )

    @classmethod
    def from_json(cls, text: str) -> "PosteriorSample":
        return cls.from_dict(json.loads(text))

    @staticmethod
    def pool(samples) -> "PosteriorSample":
        """Concatenate chains into one sample (chain id of the first is kept)."""
        samples = list(samples)
        first = samples[0]
        cat = lambda name: (None if getattr(first, name) is None  # noqa: E731
                            else np.concatenate([getattr(s, name) for s in samples]))
        return replace(
            first,
            alpha=cat("alpha"), beta=cat("beta"), theta=cat("theta"), gamma=cat("gamma"),
            sigma2=cat("sigma2"), loglik=cat("loglik"), iterations=cat("iterations"),
            theta_star=cat("theta_star"), nonidentified=cat("nonidentified"),
        )


def _fmt(x):
    if isinstance(x, (np.integer, int)):
        return str(int(x))
    return repr(float(x))


# ---------------------------------------------------------------------------
# small building blocks


def fold_direction(v, colsum):
    """Map a non-zero vector to the unit hemisphere ``{||theta|| = 1, colsum . theta >= 0}``."""
    v = np.asarray(v, dtype=float)
    theta = v / np.linalg.norm(v)
    return -theta if colsum @ theta < 0 else theta


def deconvolve_theta_star(theta_star, basis_colsum):
    """Split ``theta* = beta * theta`` into ``(beta, theta, nonidentified)``.

    ``beta = ||theta*|| sign(1^T Psi theta*)`` with ``sign(0) = +1``.  A
    numerically zero ``theta*`` gives ``beta = 0`` and the first basis
    direction (oriented onto the hemisphere), flagged as non-identified.
    """
    ts = np.asarray(theta_star, dtype=float)
    colsum = np.asarray(basis_colsum, dtype=float)
    norm = float(np.linalg.norm(ts))
    if norm < DEGENERATE_NORM:
        e1 = np.zeros_like(ts)
        e1[0] = 1.0 if colsum[0] >= 0 else -1.0
        return 0.0, e1, True
    sign = -1.0 if colsum @ ts < 0 else 1.0
    return sign * norm, sign * ts / norm, False


def elliptical_slice(x, log_lik, rng, *, mean=None, chol=None, cur_ll=None,
                     max_shrink=MAX_SHRINK):
    """One elliptical slice sampling update.

    Targets ``N(x; mean, L L^T) * exp(log_lik(x))`` where ``chol`` is the
    (lower) factor ``L``; the default reference is standard normal.  ``chol``
    may also be a callable ``rng -> draw`` producing a centred reference draw.
    Returns ``(x_new, log_lik(x_new))``.
    """
    x = np.asarray(x, dtype=float)
    d = x.size
    mu = 0.0 if mean is None else mean
    if chol is None:
        nu = rng.standard_normal(d)
    elif callable(chol):
        nu = chol(rng)
    else:
        nu = chol @ rng.standard_normal(d)
    if cur_ll is None:
        cur_ll = log_lik(x)
    threshold = cur_ll + math.log(rng.random() or np.finfo(float).tiny)
    x0 = x - mu

    phi = rng.uniform(0.0, 2.0 * math.pi)
    lo, hi = phi - 2.0 * math.pi, phi
    for _ in range(max_shrink):
        prop = x0 * math.cos(phi) + nu * math.sin(phi) + mu
        ll = log_lik(prop)
        if ll > threshold:
            return prop, ll
        if phi > 0:
            hi = phi
        else:
            lo = phi
        phi = rng.uniform(lo, hi)
    raise SamplerStuckError(
        f"elliptical slice sampler found no acceptable point after {max_shrink} shrinkage steps",
        state={"x": x.copy(), "cur_ll": cur_ll, "threshold": threshold},
    )


def _draw_mvn_precision(Q, b, rng):
    """Draw from N(Q^{-1} b, Q^{-1}) given a symmetric positive definite ``Q``."""
    L = np.linalg.cholesky(Q)
    mean = cho_solve((L, True), b)
    z = rng.standard_normal(b.size)
    return mean + solve_triangular(L.T, z, lower=False)


def conjugate_normal_draw(DtD, Dty, sigma2, prior_precision, rng):
    """Coefficients of a Gaussian linear model with independent normal priors.

    ``prior_precision`` entries of 0 encode flat priors.  Returns a draw from
    ``N(Q^{-1} D^T y / sigma2, Q^{-1})`` with ``Q = D^T D / sigma2 + diag(prior)``.
    """
    Q = DtD / sigma2 + np.diag(prior_precision)
    return _draw_mvn_precision(Q, Dty / sigma2, rng)


class _GaussianStats:
    """Per-group sufficient statistics for the Gaussian likelihood."""

    def __init__(self, data: BdlimData):
        y, X, Z, g = data.y, data.scores, data.Z, data.groups
        J = data.J
        self.n = data.n
        self.J, self.K, self.p = J, data.K, data.p
        self.n_j = np.bincount(g, minlength=J).astype(float)
        self.ysum = np.array([y[g == j].sum() for j in range(J)])
        self.xisum = np.stack([X[g == j].sum(axis=0) for j in range(J)])
        self.xtx = np.stack([X[g == j].T @ X[g == j] for j in range(J)])
        self.xty = np.stack([X[g == j].T @ y[g == j] for j in range(J)])
        self.ztx = np.stack([Z[g == j].T @ X[g == j] for j in range(J)])
        self.zsum = np.stack([Z[g == j].sum(axis=0) for j in range(J)])
        self.ztz = Z.T @ Z
        self.zty = Z.T @ y
        self.yty = float(y @ y)

    def ssr(self, coef, DtD, Dty):
        return max(self.yty - 2.0 * coef @ Dty + coef @ DtD @ coef, 0.0)


def _gaussian_loglik(n, ssr, sigma2):
    return -0.5 * n * (LOG_2PI + math.log(sigma2)) - 0.5 * ssr / sigma2


def _ols_init(data: BdlimData):
    G = np.eye(data.J)[data.groups]
    D = np.hstack([G, data.Z])
    coef, *_ = np.linalg.lstsq(D, data.y, rcond=None)
    return coef[:data.J], coef[data.J:]


def _initial_theta(colsum):
    norm = np.linalg.norm(colsum)
    if norm < 1e-12:
        e = np.zeros_like(colsum)
        e[0] = 1.0
        return e
    return colsum / norm


def _data_start(spec, data: BdlimData, colsum):
    """Starting ``(theta, beta)`` blocks from unconstrained least squares.

    Per-group coefficients of the scores are estimated jointly with the
    intercepts and covariates.  Each theta block starts at the leading
    eigenvector of the size-weighted outer products of its groups'
    coefficients, oriented onto the hemisphere, and each beta block at the
    size-weighted projection of its groups' coefficients on that direction.
    Starting with consistent signs keeps the sampler out of the sign-flipped
    boundary mode that separate beta and theta updates cannot leave.
    """
    J, K = data.J, data.K
    G = np.eye(J)[data.groups]
    XI = (G[:, :, None] * data.scores[:, None, :]).reshape(len(data.y), J * K)
    D = np.hstack([G, XI, data.Z])
    coef, *_ = np.linalg.lstsq(D, data.y, rcond=None)
    ts = coef[J:J + J * K].reshape(J, K)
    n_j = np.bincount(data.groups, minlength=J)
    tmap = spec.pattern.theta_blocks(J)
    out = np.empty((spec.n_theta, K))
    for t in range(spec.n_theta):
        M = sum(n_j[j] * np.outer(ts[j], ts[j]) for j in np.flatnonzero(tmap == t))
        if not np.all(np.isfinite(M)) or np.allclose(M, 0):
            out[t] = _initial_theta(colsum)
        else:
            out[t] = fold_direction(np.linalg.eigh(M)[1][:, -1], colsum)
    proj = np.einsum("jk,jk->j", ts, out[tmap])
    bmap = spec.pattern.beta_blocks(J)
    beta = np.array([np.average(proj[bmap == b], weights=n_j[bmap == b] + 1e-12)
                     for b in range(spec.n_beta)])
    return out, np.nan_to_num(beta)


def select_engine(spec: BdlimSpec) -> str:
    if spec.family is Family.GAUSSIAN and spec.pattern in (Pattern.N, Pattern.BW):
        return "gibbs"
    return "ess"


def _prepare(spec, data, config):
    if not isinstance(config, ChainConfig):
        raise ParameterError("config must be a ChainConfig")
    data.check_against(spec)


# ---------------------------------------------------------------------------
# reparameterized Gibbs sampler


def gibbs_linear_reparam(spec: BdlimSpec, data: BdlimData, config: ChainConfig,
                         chain_id: int = 0, seed: int | None = None) -> PosteriorSample:
    """Conjugate Gibbs sampler on ``theta* = beta * theta`` (Gaussian, patterns N/BW)."""
    if spec.family is not Family.GAUSSIAN or spec.pattern not in (Pattern.N, Pattern.BW):
        raise DispatchError(
            f"reparameterized Gibbs needs a gaussian N/BW model, got "
            f"{spec.family.value}/{spec.pattern.value}")
    _prepare(spec, data, config)
    seed = config.seed + chain_id if seed is None else seed
    rng = np.random.default_rng(seed)

    st = _GaussianStats(data)
    J, K, p = st.J, st.K, st.p
    tmap = spec.pattern.theta_blocks(J)
    nt = spec.n_theta
    colsum = data.basis_colsum
    tau2 = spec.prior_beta_var
    a0, b0 = spec.prior_sigma_shape, spec.prior_sigma_rate

    # design: [alpha_1..J | theta*_1..nt (K each) | gamma]; D^T D is fixed
    off_t = J
    off_g = J + nt * K
    P = off_g + p
    DtD = np.zeros((P, P))
    Dty = np.zeros(P)
    for j in range(J):
        t = slice(off_t + tmap[j] * K, off_t + (tmap[j] + 1) * K)
        DtD[j, j] = st.n_j[j]
        DtD[j, t] = st.xisum[j]
        DtD[j, off_g:] = st.zsum[j]
        DtD[t, t] += st.xtx[j]
        DtD[t, off_g:] += st.ztx[j].T
        Dty[j] = st.ysum[j]
        Dty[t] += st.xty[j]
    DtD[off_g:, off_g:] = st.ztz
    Dty[off_g:] = st.zty
    DtD = np.triu(DtD) + np.triu(DtD, 1).T

    prior_prec = np.zeros(P)
    prior_prec[off_g:] = 1.0 / spec.prior_gamma_var
    kappa = np.ones(nt)
    sigma2 = float(np.var(data.y)) or 1.0
    lam = -(K - 1) / 2.0

    S = config.n_draws
    out_ts = np.empty((S, nt, K))
    out_coef = np.empty((S, P))
    out_s2 = np.empty(S)
    out_ll = np.empty(S)
    out_it = np.empty(S, dtype=int)
    s = 0
    for it in range(config.n_iter):
        for t in range(nt):
            prior_prec[off_t + t * K: off_t + (t + 1) * K] = 1.0 / (kappa[t] * tau2)
        coef = conjugate_normal_draw(DtD, Dty, sigma2, prior_prec, rng)
        for t in range(nt):
            ts = coef[off_t + t * K: off_t + (t + 1) * K]
            chi = max(float(ts @ ts) / tau2, 1e-300)
            kappa[t] = sample_gig(lam, chi, 1.0, rng)
        ssr = st.ssr(coef, DtD, Dty)
        prec = rng.gamma(a0 + 0.5 * st.n, 1.0 / (b0 + 0.5 * ssr))
        sigma2 = 1.0 / prec
        if it >= config.n_burnin and (it - config.n_burnin) % config.thin == config.thin - 1:
            out_ts[s] = coef[off_t:off_g].reshape(nt, K)
            out_coef[s] = coef
            out_s2[s] = sigma2
            out_ll[s] = _gaussian_loglik(st.n, ssr, sigma2)
            out_it[s] = it
            s += 1

    beta_b = np.empty((S, nt))
    theta_b = np.empty((S, nt, K))
    flags_b = np.zeros((S, nt), dtype=bool)
    for s in range(S):
        for t in range(nt):
            beta_b[s, t], theta_b[s, t], flags_b[s, t] = deconvolve_theta_star(out_ts[s, t], colsum)

    return PosteriorSample(
        pattern=spec.pattern, family=spec.family,
        alpha=out_coef[:, :J], beta=beta_b[:, tmap], theta=theta_b[:, tmap],
        gamma=out_coef[:, off_g:], sigma2=out_s2, loglik=out_ll,
        chain_id=chain_id, seed=seed, engine="gibbs", iterations=out_it,
        theta_star=out_ts[:, tmap], nonidentified=flags_b[:, tmap],
        group_labels=data.group_labels,
    )


# ---------------------------------------------------------------------------
# constrained elliptical slice sampler


def ess_constrained(spec: BdlimSpec, data: BdlimData, config: ChainConfig,
                    chain_id: int = 0, seed: int | None = None,
                    prior_only: bool = False) -> PosteriorSample:
    """Elliptical-slice-within-Gibbs sampler on the constrained parameter space.

    Works for every pattern and both families.  With ``prior_only`` the data
    are ignored: only the weight coefficients move and their draws follow the
    uniform hemisphere prior.
    """
    _prepare(spec, data, config)
    seed = config.seed + chain_id if seed is None else seed
    rng = np.random.default_rng(seed)
    if spec.family is Family.GAUSSIAN:
        runner = _GaussianESS(spec, data, rng, prior_only)
    else:
        runner = _LogitESS(spec, data, rng, prior_only)
    return runner.run(config, chain_id, seed)


class _ESSBase:
    def __init__(self, spec, data, rng, prior_only):
        self.spec, self.data, self.rng = spec, data, rng
        self.prior_only = prior_only
        J = data.J
        self.J, self.K, self.p = J, data.K, data.p
        self.bmap = spec.pattern.beta_blocks(J)
        self.tmap = spec.pattern.theta_blocks(J)
        self.nb, self.nt = spec.n_beta, spec.n_theta
        self.colsum = data.basis_colsum
        if prior_only:
            self.v = np.tile(_initial_theta(self.colsum), (self.nt, 1))
            self.beta = np.zeros(self.nb)
        else:
            self.v, self.beta = _data_start(spec, data, self.colsum)
        self.theta = self.v.copy()
        # coefficient block layout: [alpha_1..J | beta_1..nb | gamma]
        self.off_b = J
        self.off_g = J + self.nb
        self.P = self.off_g + self.p
        self.prior_prec = np.zeros(self.P)
        self.prior_prec[self.off_b:self.off_g] = 1.0 / spec.prior_beta_var
        self.prior_prec[self.off_g:] = 1.0 / spec.prior_gamma_var

    def update_theta(self, t, log_lik):
        colsum = self.colsum

        def ll_v(v):
            return log_lik(fold_direction(v, colsum))

        v, _ = elliptical_slice(self.v[t], ll_v, self.rng)
        self.v[t] = v
        self.theta[t] = fold_direction(v, colsum)

    def run(self, config, chain_id, seed):
        S = config.n_draws
        J, K, p = self.J, self.K, self.p
        out = {
            "alpha": np.empty((S, J)), "beta": np.empty((S, J)), "theta": np.empty((S, J, K)),
            "gamma": np.empty((S, p)), "sigma2": np.empty(S), "loglik": np.empty(S),
            "iter": np.empty(S, dtype=int),
        }
        s = 0
        for it in range(config.n_iter):
            try:
                self.step(config.theta_sweeps)
            except SamplerError as err:
                err.state = {"iteration": it, **(err.state or {}), **self.snapshot()}
                if s:
                    err.partial = self._sample({k: v[:s] for k, v in out.items()},
                                               chain_id, seed)
                raise
            if it >= config.n_burnin and (it - config.n_burnin) % config.thin == config.thin - 1:
                out["alpha"][s] = self.alpha
                out["beta"][s] = self.beta[self.bmap]
                out["theta"][s] = self.theta[self.tmap]
                out["gamma"][s] = self.gamma
                out["sigma2"][s] = self.sigma2_value()
                out["loglik"][s] = self.loglik()
                out["iter"][s] = it
                s += 1
        return self._sample(out, chain_id, seed)

    def _sample(self, out, chain_id, seed):
        gaussian = self.spec.family is Family.GAUSSIAN
        return PosteriorSample(
            pattern=self.spec.pattern, family=self.spec.family,
            alpha=out["alpha"], beta=out["beta"], theta=out["theta"], gamma=out["gamma"],
            sigma2=out["sigma2"] if gaussian else None, loglik=out["loglik"],
            chain_id=chain_id, seed=seed, engine="ess", iterations=out["iter"],
            group_labels=self.data.group_labels,
        )

    def snapshot(self):
        return {"alpha": self.alpha.copy(), "beta": self.beta.copy(),
                "theta": self.theta.copy(), "gamma": self.gamma.copy()}


class _GaussianESS(_ESSBase):
    def __init__(self, spec, data, rng, prior_only):
        super().__init__(spec, data, rng, prior_only)
        self.st = _GaussianStats(data)
        self.alpha, self.gamma = _ols_init(data)
        self.sigma2 = float(np.var(data.y)) or 1.0
        self._cross = None

    def sigma2_value(self):
        return self.sigma2

    def _theta_loglik(self, t):
        st, bmap, tmap = self.st, self.bmap, self.tmap
        A = np.zeros((self.K, self.K))
        b = np.zeros(self.K)
        for j in np.flatnonzero(tmap == t):
            bj = self.beta[bmap[j]]
            A += bj * bj * st.xtx[j]
            b += bj * (st.xty[j] - self.alpha[j] * st.xisum[j] - st.ztx[j].T @ self.gamma)
        s2 = self.sigma2

        def ll(theta):
            return (b @ theta - 0.5 * theta @ A @ theta) / s2

        return ll

    def _cross_products(self):
        st, J, off_b, off_g = self.st, self.J, self.off_b, self.off_g
        DtD = np.zeros((self.P, self.P))
        Dty = np.zeros(self.P)
        for j in range(J):
            th = self.theta[self.tmap[j]]
            b = off_b + self.bmap[j]
            DtD[j, j] = st.n_j[j]
            DtD[j, b] = st.xisum[j] @ th
            DtD[j, off_g:] = st.zsum[j]
            DtD[b, b] += th @ st.xtx[j] @ th
            DtD[b, off_g:] += st.ztx[j] @ th
            Dty[j] = st.ysum[j]
            Dty[b] += st.xty[j] @ th
        DtD[off_g:, off_g:] = st.ztz
        Dty[off_g:] = st.zty
        return np.triu(DtD) + np.triu(DtD, 1).T, Dty

    def step(self, sweeps):
        for t in range(self.nt):
            ll = (lambda theta: 0.0) if self.prior_only else self._theta_loglik(t)
            for _ in range(sweeps):
                self.update_theta(t, ll)
        if self.prior_only:
            return
        DtD, Dty = self._cross_products()
        coef = conjugate_normal_draw(DtD, Dty, self.sigma2, self.prior_prec, self.rng)
        self.alpha = coef[:self.J]
        self.beta = coef[self.off_b:self.off_g]
        self.gamma = coef[self.off_g:]
        ssr = self.st.ssr(coef, DtD, Dty)
        a = self.spec.prior_sigma_shape + 0.5 * self.st.n
        b = self.spec.prior_sigma_rate + 0.5 * ssr
        self.sigma2 = 1.0 / self.rng.gamma(a, 1.0 / b)
        self._cross = (coef, DtD, Dty)

    def loglik(self):
        if self._cross is None:
            DtD, Dty = self._cross_products()
            coef = np.r_[self.alpha, self.beta, self.gamma]
        else:
            coef, DtD, Dty = self._cross
        return _gaussian_loglik(self.st.n, self.st.ssr(coef, DtD, Dty), self.sigma2)


class _LogitESS(_ESSBase):
    def __init__(self, spec, data, rng, prior_only):
        super().__init__(spec, data, rng, prior_only)
        self.alpha = np.zeros(self.J)
        self.gamma = np.zeros(self.p)
        self.y = data.y
        self.G = np.eye(self.J)[data.groups]
        self.rows = [np.flatnonzero(self.tmap[data.groups] == t) for t in range(self.nt)]
        self.mode = np.zeros(self.P)

    def sigma2_value(self):
        return np.nan

    def _eta(self):
        d = self.data
        w = np.einsum("ik,ik->i", d.scores, self.theta[self.tmap[d.groups]])
        return self.alpha[d.groups] + self.beta[self.bmap[d.groups]] * w + d.Z @ self.gamma

    def loglik(self):
        eta = self._eta()
        return float(self.y @ eta - np.logaddexp(0.0, eta).sum())

    def _theta_loglik(self, t):
        d = self.data
        rows = self.rows[t]
        g = d.groups[rows]
        X = d.scores[rows]
        y = self.y[rows]
        offset = self.alpha[g] + d.Z[rows] @ self.gamma
        coef = self.beta[self.bmap[g]]

        def ll(theta):
            eta = offset + coef * (X @ theta)
            return float(y @ eta - np.logaddexp(0.0, eta).sum())

        return ll

    def _design(self):
        d = self.data
        w = np.einsum("ik,ik->i", d.scores, self.theta[self.tmap[d.groups]])
        E = np.zeros((d.n, self.nb))
        E[np.arange(d.n), self.bmap[d.groups]] = w
        return np.hstack([self.G, E, d.Z])

    def _log_post(self, D, c):
        eta = D @ c
        return float(self.y @ eta - np.logaddexp(0.0, eta).sum()
                     - 0.5 * np.sum(self.prior_prec * c * c))

    def _laplace(self, D):
        """Newton iterations to the conditional mode; returns (mode, Hessian)."""
        c = self.mode.copy()
        y, prec = self.y, self.prior_prec
        for _ in range(100):
            eta = D @ c
            pi = 0.5 * (1.0 + np.tanh(0.5 * eta))
            grad = D.T @ (y - pi) - prec * c
            H = (D.T * (pi * (1.0 - pi))) @ D + np.diag(prec)
            try:
                step = cho_solve(cho_factor(H), grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(H, grad, rcond=None)[0]
            c = c + step
            if np.any(np.abs(c[:self.J]) > SEPARATION_BOUND):
                raise SeparationError(
                    "logistic intercept exceeded +/-20 while locating the conditional mode; "
                    "the outcome looks completely separated",
                    state={"mode": c.copy()})
            if np.max(np.abs(step)) < 1e-10:
                break
        eta = D @ c
        pi = 0.5 * (1.0 + np.tanh(0.5 * eta))
        H = (D.T * (pi * (1.0 - pi))) @ D + np.diag(prec)
        return c, H

    def step(self, sweeps):
        for t in range(self.nt):
            ll = (lambda theta: 0.0) if self.prior_only else self._theta_loglik(t)
            for _ in range(sweeps):
                self.update_theta(t, ll)
        if self.prior_only:
            return
        D = self._design()
        m, H = self._laplace(D)
        self.mode = m
        L = np.linalg.cholesky(H)

        def reference(rng):
            return solve_triangular(L.T, rng.standard_normal(m.size), lower=False)

        def ll(c):
            r = L.T @ (c - m)
            return self._log_post(D, c) + 0.5 * r @ r

        c = np.r_[self.alpha, self.beta, self.gamma]
        c, _ = elliptical_slice(c, ll, self.rng, mean=m, chol=reference)
        self.alpha = c[:self.J]
        self.beta = c[self.off_b:self.off_g]
        self.gamma = c[self.off_g:]
        if np.any(np.abs(self.alpha) > SEPARATION_BOUND):
            raise SeparationError("logistic intercept draw exceeded +/-20; outcome looks separated",
                                  state={"alpha": self.alpha.copy()})


# ---------------------------------------------------------------------------
# chains


def _run_one(args):
    spec, data, config, chain_id, engine = args
    try:
        if engine == "gibbs":
            return gibbs_linear_reparam(spec, data, config, chain_id)
        return ess_constrained(spec, data, config, chain_id)
    except SamplerError as err:
        err.chain_id = chain_id
        raise


def run_chains(spec: BdlimSpec, data: BdlimData, config: ChainConfig,
               engine: str | None = None, n_jobs: int = 1) -> list:
    """Run ``config.n_chains`` independent chains with seeds ``seed, seed+1, ...``.

    ``engine`` overrides the automatic choice (``"gibbs"`` for Gaussian N/BW,
    ``"ess"`` otherwise).  With ``n_jobs > 1`` chains run in worker processes.
    """
    engine = engine or select_engine(spec)
    if engine not in ("gibbs", "ess"):
        raise DispatchError(f"unknown engine {engine!r}")
    jobs = [(spec, data, config, c, engine) for c in range(config.n_chains)]
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(job) for job in jobs]
