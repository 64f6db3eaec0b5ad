"""Conjugate Bayesian inference for the general linear model with
normal-gamma priors, vectorized across voxels.

One :class:`GlmSpec` holds a session's response matrix (scans x voxels),
its design matrix, and the observation precision. Because the design and
precision are shared across voxels, the posterior coefficient precision and
Gamma shape are computed once per session while coefficient means and Gamma
rates are per-voxel columns; this is what makes the mass-univariate setting
cheap.

The three evidence quantities exposed here satisfy, per voxel and exactly
in the algebra, ``log_model_evidence = accuracy - complexity``: accuracy is
the posterior expected log-likelihood, complexity the KL divergence of the
posterior from the prior.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .distributions import NgParams, _check_symmetric, _cholesky, _logdet_from_chol
from .errors import DecompositionError, DomainError, EstimationError
from .special import digamma, log_gamma

__all__ = [
    "GlmSpec",
    "VoxelWisePosterior",
    "posterior_update",
    "log_model_evidence",
    "accuracy",
    "complexity",
]

_LOG_2PI = float(np.log(2.0 * np.pi))
_RANK_RTOL = 1e-10


@dataclass
class GlmSpec:
    """One session of data: responses ``Y`` (n x V), design ``X`` (n x p),
    and observation precision ``precision``.

    ``precision`` may be ``None`` (identity), a length-n vector (diagonal),
    or a full symmetric positive-definite (n x n) matrix. An ``n = 0`` spec
    is permitted as the no-op input to the conjugate update; otherwise
    ``n >= p + 1`` and ``X`` must have full column rank.
    """

    Y: np.ndarray
    X: np.ndarray
    precision: np.ndarray | None = None

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=float)
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        if self.Y.ndim != 2 or self.X.ndim != 2:
            raise DomainError("Y and X must be 2-D arrays")
        if self.Y.shape[0] != self.X.shape[0]:
            raise DomainError(
                f"Y has {self.Y.shape[0]} scans but X has {self.X.shape[0]}"
            )
        if not (np.all(np.isfinite(self.Y)) and np.all(np.isfinite(self.X))):
            raise DomainError("Y and X must be finite")
        n, p = self.X.shape
        if n > 0:
            if n < p + 1:
                raise DomainError(f"need n >= p + 1 scans, got n={n}, p={p}")
            sv = np.linalg.svd(self.X, compute_uv=False)
            if sv[-1] <= _RANK_RTOL * sv[0]:
                raise EstimationError(
                    "design matrix is rank-deficient (smallest singular value "
                    f"{sv[-1]:.3e} vs largest {sv[0]:.3e}); drop or merge "
                    "collinear regressors"
                )
        if self.precision is not None:
            self.precision = np.asarray(self.precision, dtype=float)
            if not np.all(np.isfinite(self.precision)):
                raise DomainError("precision must be finite")
            if self.precision.ndim == 1:
                if self.precision.shape != (n,):
                    raise DomainError("diagonal precision must have length n")
                if np.any(self.precision <= 0):
                    raise DecompositionError(
                        "precision is not positive definite: non-positive "
                        "diagonal entry"
                    )
            elif self.precision.ndim == 2:
                if self.precision.shape != (n, n):
                    raise DomainError("precision matrix must be (n, n)")
                _check_symmetric(self.precision, "precision")
                _cholesky(self.precision, "precision")
            else:
                raise DomainError("precision must be a vector or a matrix")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_voxels(self) -> int:
        return self.Y.shape[1]

    def apply_precision(self, m: np.ndarray) -> np.ndarray:
        """Left-multiply an (n, .) array by the precision matrix."""
        if self.precision is None:
            return m
        if self.precision.ndim == 1:
            return self.precision[:, None] * m
        return self.precision @ m

    @cached_property
    def logdet_precision(self) -> float:
        if self.precision is None or self.n == 0:
            return 0.0
        if self.precision.ndim == 1:
            return float(np.sum(np.log(self.precision)))
        return _logdet_from_chol(_cholesky(self.precision, "precision"))

    @cached_property
    def xtpx(self) -> np.ndarray:
        return self.X.T @ self.apply_precision(self.X)

    @cached_property
    def xtpy(self) -> np.ndarray:
        return self.X.T @ self.apply_precision(self.Y)

    @cached_property
    def ytpy(self) -> np.ndarray:
        return np.einsum("nv,nv->v", self.Y, self.apply_precision(self.Y))


@dataclass
class VoxelWisePosterior:
    """Voxel-wise normal-gamma posterior: per-voxel ``mu_n`` columns and
    ``b_n`` rates over a shared coefficient precision ``lambda_n`` and
    shared shape ``a_n``."""

    mu_n: np.ndarray
    lambda_n: np.ndarray
    a_n: float
    b_n: np.ndarray
    _chol: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.mu_n = np.asarray(self.mu_n, dtype=float)
        self.lambda_n = np.asarray(self.lambda_n, dtype=float)
        self.b_n = np.atleast_1d(np.asarray(self.b_n, dtype=float))
        self.a_n = float(self.a_n)
        if self.mu_n.ndim == 1:
            self.mu_n = self.mu_n[:, None]
        p = self.mu_n.shape[0]
        if self.lambda_n.shape != (p, p):
            raise DomainError("lambda_n must be (p, p)")
        if self.b_n.shape != (self.mu_n.shape[1],):
            raise DomainError("b_n must have one entry per voxel")
        _check_symmetric(self.lambda_n, "lambda_n")

    @property
    def p(self) -> int:
        return self.mu_n.shape[0]

    @property
    def n_voxels(self) -> int:
        return self.mu_n.shape[1]

    def chol_lambda(self) -> np.ndarray:
        if self._chol is None:
            self._chol = _cholesky(self.lambda_n, "lambda_n")
        return self._chol

    def logdet_lambda(self) -> float:
        return _logdet_from_chol(self.chol_lambda())

    def as_prior(self) -> NgParams:
        """Repackage as a (per-voxel) prior for a subsequent update."""
        return NgParams(mu=self.mu_n, lam=self.lambda_n, a=self.a_n, b=self.b_n)


def _prior_mu_matrix(prior: NgParams, n_voxels: int) -> np.ndarray:
    mu = prior.mu
    if mu.ndim == 1:
        return np.broadcast_to(mu[:, None], (mu.shape[0], n_voxels))
    if mu.shape[1] != n_voxels:
        raise DomainError(
            f"prior carries {mu.shape[1]} voxel columns but data has {n_voxels}"
        )
    return mu


def _prior_b_vector(prior: NgParams, n_voxels: int) -> np.ndarray:
    b = np.atleast_1d(np.asarray(prior.b, dtype=float))
    if b.size == 1:
        return np.broadcast_to(b, (n_voxels,))
    if b.shape != (n_voxels,):
        raise DomainError("prior b must be scalar or one entry per voxel")
    return b


def posterior_update(spec: GlmSpec, prior: NgParams) -> VoxelWisePosterior:
    """Conjugate normal-gamma update for all voxels in one pass.

    The prior may be the non-informative instance (all zeros), any proper
    parameter set, or a per-voxel set produced by a previous update; chained
    updates on disjoint data blocks commute with a single update on the
    concatenated data.
    """
    if prior.dim != spec.p:
        raise DomainError(
            f"prior dimension {prior.dim} does not match design columns {spec.p}"
        )
    V = spec.n_voxels
    if spec.n == 0:
        # no-op update: the posterior is the prior, broadcast per voxel
        return VoxelWisePosterior(
            mu_n=_prior_mu_matrix(prior, V).copy(),
            lambda_n=prior.lam.copy(),
            a_n=prior.a,
            b_n=_prior_b_vector(prior, V).copy(),
        )

    mu0 = _prior_mu_matrix(prior, V)
    b0 = _prior_b_vector(prior, V)
    lam0 = prior.lam

    lambda_n = spec.xtpx + lam0
    try:
        chol = _cholesky(lambda_n, "lambda_n")
    except DecompositionError:
        if prior.is_noninformative:
            raise EstimationError(
                "training data leave the coefficient precision singular under "
                "the non-informative prior; the design is effectively "
                "rank-deficient"
            ) from None
        raise
    rhs = spec.xtpy + lam0 @ mu0
    mu_n = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))

    quad_prior = np.einsum("pv,pv->v", mu0, lam0 @ mu0)
    quad_post = np.einsum("pv,pv->v", mu_n, lambda_n @ mu_n)
    a_n = prior.a + spec.n / 2.0
    b_n = b0 + 0.5 * (spec.ytpy + quad_prior - quad_post)
    if np.any(b_n <= 0):
        raise EstimationError(
            "posterior rate b_n is non-positive for some voxel; this signals "
            "catastrophic cancellation, typically from an ill-conditioned "
            "design matrix"
        )
    return VoxelWisePosterior(
        mu_n=mu_n, lambda_n=lambda_n, a_n=a_n, b_n=b_n, _chol=chol
    )


def _check_consistency(
    spec: GlmSpec, prior: NgParams, post: VoxelWisePosterior
) -> None:
    if post.p != spec.p or post.n_voxels != spec.n_voxels:
        raise DomainError("posterior shape does not match the data spec")
    expected_a = prior.a + spec.n / 2.0
    if abs(post.a_n - expected_a) > 1e-9 * max(1.0, expected_a):
        raise DomainError(
            f"posterior shape a_n={post.a_n} is inconsistent with prior and "
            f"scan count (expected {expected_a})"
        )


def log_model_evidence(
    spec: GlmSpec, prior: NgParams, post: VoxelWisePosterior
) -> np.ndarray:
    """Per-voxel log marginal likelihood of the data under the model.

    Requires a strictly proper prior (the non-informative instance has an
    infinite log-determinant penalty and is rejected).
    """
    prior.require_proper("log_model_evidence")
    _check_consistency(spec, prior, post)
    b0 = _prior_b_vector(prior, spec.n_voxels)
    return (
        0.5 * spec.logdet_precision
        - 0.5 * spec.n * _LOG_2PI
        + 0.5 * prior.logdet_lam()
        - 0.5 * post.logdet_lambda()
        + log_gamma(post.a_n)
        - log_gamma(prior.a)
        + prior.a * np.log(b0)
        - post.a_n * np.log(post.b_n)
    )


def accuracy(spec: GlmSpec, post: VoxelWisePosterior) -> np.ndarray:
    """Per-voxel posterior expected log-likelihood of the data."""
    if post.p != spec.p or post.n_voxels != spec.n_voxels:
        raise DomainError("posterior shape does not match the data spec")
    if post.a_n <= 0 or np.any(post.b_n <= 0):
        raise DomainError("accuracy requires a proper posterior")
    resid = spec.Y - spec.X @ post.mu_n
    quad = np.einsum("nv,nv->v", resid, spec.apply_precision(resid))
    chol = post.chol_lambda()
    w = np.linalg.solve(chol, spec.xtpx)
    trace = float(np.trace(np.linalg.solve(chol.T, w)))
    return (
        -0.5 * (post.a_n / post.b_n) * quad
        - 0.5 * trace
        + 0.5 * spec.logdet_precision
        - 0.5 * spec.n * _LOG_2PI
        + 0.5 * spec.n * (digamma(post.a_n) - np.log(post.b_n))
    )


def complexity(prior: NgParams, post: VoxelWisePosterior) -> np.ndarray:
    """Per-voxel KL divergence of the posterior from the prior.

    Collected-terms form of the expected coefficient KL (over the posterior
    precision) plus the Gamma precision KL; equals ``accuracy - lme`` up to
    round-off.
    """
    prior.require_proper("complexity")
    V = post.n_voxels
    mu0 = _prior_mu_matrix(prior, V)
    b0 = _prior_b_vector(prior, V)
    diff = mu0 - post.mu_n
    quad = np.einsum("pv,pv->v", diff, prior.lam @ diff)
    trace = float(np.trace(np.linalg.solve(post.lambda_n, prior.lam)))
    return (
        0.5 * (post.a_n / post.b_n) * (quad - 2.0 * (post.b_n - b0))
        + 0.5 * trace
        - 0.5 * (prior.logdet_lam() - post.logdet_lambda())
        - 0.5 * post.p
        + prior.a * np.log(post.b_n / b0)
        - (log_gamma(post.a_n) - log_gamma(prior.a))
        + (post.a_n - prior.a) * digamma(post.a_n)
    )
