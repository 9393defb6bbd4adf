"""Model definition: heterogeneity patterns, parameter state, likelihood and prior.

Everything is expressed in PC-score space.  With an orthonormal basis the
functional term ``(Psi xi_i)^T Psi theta`` collapses to ``xi_i^T theta``, so
the linear predictor never touches the time grid.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConstraintError, DataError, InsufficientDataError, ParameterError

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

__all__ = [
    "Pattern",
    "Family",
    "BdlimSpec",
    "BdlimData",
    "ModelState",
    "linear_predictor",
    "log_likelihood",
    "log_prior",
    "check_theta",
]

CONSTRAINT_TOL = 1e-10
LOG_2PI = math.log(2.0 * math.pi)


class Pattern(str, enum.Enum):
    """Which of (effect size, weight function) varies across groups."""

    N = "n"
    B = "b"
    W = "w"
    BW = "bw"

    @classmethod
    def parse(cls, value) -> "Pattern":
        if isinstance(value, Pattern):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ParameterError(f"unknown heterogeneity pattern {value!r}") from None

    @property
    def group_beta(self) -> bool:
        return self in (Pattern.B, Pattern.BW)

    @property
    def group_theta(self) -> bool:
        return self in (Pattern.W, Pattern.BW)

    def beta_blocks(self, J: int) -> np.ndarray:
        """Map group index -> index of the effect size it uses."""
        return np.arange(J) if self.group_beta else np.zeros(J, dtype=int)

    def theta_blocks(self, J: int) -> np.ndarray:
        """Map group index -> index of the weight coefficients it uses."""
        return np.arange(J) if self.group_theta else np.zeros(J, dtype=int)


class Family(str, enum.Enum):
    GAUSSIAN = "gaussian"
    LOGIT = "binomial-logit"

    @classmethod
    def parse(cls, value) -> "Family":
        if isinstance(value, Family):
            return value
        v = str(value).lower()
        if v in ("logit", "binomial", "logistic"):
            v = "binomial-logit"
        try:
            return cls(v)
        except ValueError:
            raise ParameterError(f"unknown outcome family {value!r}") from None


@dataclass(frozen=True)
class BdlimSpec:
    """Model definition.  Defaults: N(0, 10^2) on effect sizes and covariate
    coefficients, gamma(0.01, 0.01) on the residual precision."""

    pattern: Pattern = Pattern.N
    family: Family = Family.GAUSSIAN
    n_groups: int = 1
    covariate_count: int = 0
    prior_beta_var: float = 100.0
    prior_gamma_var: float = 100.0
    prior_sigma_shape: float = 0.01
    prior_sigma_rate: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "pattern", Pattern.parse(self.pattern))
        object.__setattr__(self, "family", Family.parse(self.family))
        if int(self.n_groups) < 1:
            raise ParameterError("n_groups must be >= 1")
        if self.pattern is not Pattern.N and self.n_groups < 2:
            raise ParameterError(f"pattern {self.pattern.value!r} needs at least two groups")
        if self.covariate_count < 0:
            raise ParameterError("covariate_count must be >= 0")
        for name in ("prior_beta_var", "prior_gamma_var", "prior_sigma_shape", "prior_sigma_rate"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")

    @property
    def n_beta(self) -> int:
        return self.n_groups if self.pattern.group_beta else 1

    @property
    def n_theta(self) -> int:
        return self.n_groups if self.pattern.group_theta else 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pattern"] = self.pattern.value
        d["family"] = self.family.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BdlimSpec":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def from_file(cls, path) -> "BdlimSpec":
        cfg = load_config(path)
        return cls.from_dict(cfg.get("model", cfg))


def load_config(path) -> dict:
    """Read a TOML or JSON configuration file into a dict."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return json.loads(text)
    return tomllib.loads(text)


@dataclass(frozen=True)
class BdlimData:
    """Fitting data in score space.

    ``groups`` holds 0-based group indices; ``Z`` may have zero columns.
    ``basis_colsum`` is ``Psi^T 1``, needed for the hemisphere constraint.
    """

    y: np.ndarray
    scores: np.ndarray
    groups: np.ndarray
    Z: np.ndarray
    basis_colsum: np.ndarray
    group_labels: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        scores = np.atleast_2d(np.asarray(self.scores, dtype=float))
        n = y.size
        groups = (np.zeros(n, dtype=int) if self.groups is None
                  else np.asarray(self.groups).astype(int).ravel())
        Z = np.zeros((n, 0)) if self.Z is None else np.asarray(self.Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        colsum = np.asarray(self.basis_colsum, dtype=float).ravel()
        if scores.shape[0] != n or groups.size != n or Z.shape[0] != n:
            raise DataError("y, scores, groups and Z must have the same number of rows")
        if colsum.size != scores.shape[1]:
            raise DataError("basis_colsum must have one entry per score column")
        if groups.min() < 0:
            raise DataError("group indices must be non-negative")
        if np.any(np.bincount(groups) == 0):
            raise DataError("group indices must be contiguous 0..J-1")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(scores)) and np.all(np.isfinite(Z))):
            raise DataError("data contain non-finite values")
        labels = tuple(self.group_labels) or tuple(str(j) for j in range(groups.max() + 1))
        for name, val in (("y", y), ("scores", scores), ("groups", groups), ("Z", Z),
                          ("basis_colsum", colsum), ("group_labels", labels)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def K(self) -> int:
        return self.scores.shape[1]

    @property
    def p(self) -> int:
        return self.Z.shape[1]

    @property
    def J(self) -> int:
        return int(self.groups.max()) + 1

    def check_against(self, spec: BdlimSpec):
        if spec.n_groups != self.J:
            raise DataError(f"spec declares {spec.n_groups} groups but data have {self.J}")
        if spec.covariate_count != self.p:
            raise DataError(f"spec declares {spec.covariate_count} covariates but data have {self.p}")
        n_params = self.J + self.p + self.K
        if self.n <= n_params:
            raise InsufficientDataError(
                f"need more than J + p + K = {n_params} observations, have {self.n}")
        if spec.family is Family.LOGIT and not np.all((self.y == 0) | (self.y == 1)):
            raise DataError("binomial-logit outcomes must be 0/1")


@dataclass(frozen=True)
class ModelState:
    """One parameter configuration.

    ``beta`` and ``theta`` are stored per group (``theta`` has shape ``J x K``);
    shared components are repeated across groups.  ``sigma2`` is ``None`` for
    the logistic family.
    """

    alpha: np.ndarray
    beta: np.ndarray
    theta: np.ndarray
    gamma: np.ndarray
    sigma2: float | None = None

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            arr = np.array(getattr(self, name), dtype=float).ravel()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        theta = np.atleast_2d(np.array(self.theta, dtype=float))
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        if self.alpha.size != self.beta.size or theta.shape[0] != self.beta.size:
            raise ParameterError("alpha, beta and theta must have one entry/row per group")

    @property
    def J(self) -> int:
        return self.alpha.size

    def replace(self, **changes) -> "ModelState":
        return replace(self, **changes)

    def shares(self, pattern: Pattern) -> bool:
        """True when shared components are identical across groups as ``pattern`` dictates."""
        pattern = Pattern.parse(pattern)
        ok = True
        if not pattern.group_beta:
            ok &= bool(np.all(self.beta == self.beta[0]))
        if not pattern.group_theta:
            ok &= bool(np.all(self.theta == self.theta[0]))
        return ok


def check_theta(theta, basis_colsum, tol: float = CONSTRAINT_TOL):
    """Raise :class:`ConstraintError` unless ``||theta|| = 1`` and ``1^T Psi theta >= 0``."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    norms = np.linalg.norm(theta, axis=1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ConstraintError(f"weight coefficients are not unit norm (norms {norms})")
    sums = theta @ np.asarray(basis_colsum, dtype=float)
    if np.any(sums < -tol):
        raise ConstraintError(f"weight function integrates to a negative value ({sums.min():.3e})")


def _check_dims(state: ModelState, scores, Z, groups):
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    n, K = scores.shape
    groups = np.asarray(groups).astype(int).ravel()
    Z = np.zeros((n, 0)) if Z is None else np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if groups.size != n or Z.shape[0] != n:
        raise ParameterError("scores, Z and groups must have the same number of rows")
    if state.theta.shape[1] != K:
        raise ParameterError(f"theta has {state.theta.shape[1]} coefficients, scores have {K}")
    if Z.shape[1] != state.gamma.size:
        raise ParameterError(f"gamma has {state.gamma.size} entries, Z has {Z.shape[1]} columns")
    if n and (groups.min() < 0 or groups.max() >= state.J):
        raise ParameterError("group index out of range")
    return scores, Z, groups


def linear_predictor(state: ModelState, scores, Z, groups) -> np.ndarray:
    """``eta_i = alpha_j + beta_j * xi_i^T theta_j + Z_i^T gamma`` with ``j = groups[i]``."""
    scores, Z, groups = _check_dims(state, scores, Z, groups)
    weighted = np.einsum("ik,ik->i", scores, state.theta[groups])
    return state.alpha[groups] + state.beta[groups] * weighted + Z @ state.gamma


def _log1pexp(x):
    return np.logaddexp(0.0, x)


def log_likelihood(state: ModelState, y, scores, Z, groups, family=Family.GAUSSIAN) -> float:
    family = Family.parse(family)
    eta = linear_predictor(state, scores, Z, groups)
    y = np.asarray(y, dtype=float).ravel()
    if y.size != eta.size:
        raise ParameterError("y has the wrong length")
    if family is Family.GAUSSIAN:
        s2 = state.sigma2
        if s2 is None or not s2 > 0:
            raise ParameterError("sigma2 must be positive for the gaussian family")
        r = y - eta
        return float(-0.5 * y.size * (LOG_2PI + math.log(s2)) - 0.5 * (r @ r) / s2)
    if not np.all((y == 0) | (y == 1)):
        raise DataError("binomial-logit outcomes must be 0/1")
    return float(y @ eta - _log1pexp(eta).sum())


def _log_normal(x, var):
    x = np.asarray(x, dtype=float)
    return float(np.sum(-0.5 * (LOG_2PI + math.log(var)) - 0.5 * x * x / var))


def log_prior(state: ModelState, spec: BdlimSpec, basis_colsum=None) -> float:
    """Log prior density (up to the flat intercept and hemisphere constants).

    Each distinct effect size gets N(0, prior_beta_var); each covariate
    coefficient N(0, prior_gamma_var); the residual precision a gamma
    density; weight coefficients contribute 0 (uniform on the hemisphere).
    """
    if basis_colsum is not None:
        check_theta(state.theta, basis_colsum)
    else:
        check_theta(state.theta, np.zeros(state.theta.shape[1]))
    if not state.shares(spec.pattern):
        raise ConstraintError(f"state does not respect pattern {spec.pattern.value!r}")
    blocks = spec.pattern.beta_blocks(state.J)
    distinct_beta = np.array([state.beta[np.flatnonzero(blocks == b)[0]] for b in range(spec.n_beta)])
    lp = _log_normal(distinct_beta, spec.prior_beta_var)
    lp += _log_normal(state.gamma, spec.prior_gamma_var)
    if spec.family is Family.GAUSSIAN:
        if state.sigma2 is None or not state.sigma2 > 0:
            raise ParameterError("sigma2 must be positive for the gaussian family")
        a, b = spec.prior_sigma_shape, spec.prior_sigma_rate
        prec = 1.0 / state.sigma2
        lp += a * math.log(b) - math.lgamma(a) + (a - 1.0) * math.log(prec) - b * prec
    return float(lp)
