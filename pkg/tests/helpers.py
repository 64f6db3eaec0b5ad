"""Shared test fixtures: random instance generators and independent
numerical oracles.

The evidence oracle here never touches the package's evidence formulas: it
integrates the likelihood times the prior density over (coefficient,
precision) with nested adaptive quadrature, in log space with explicit
shifts. It is deliberately restricted to single-coefficient designs, where
the data enter only through three scalar reductions.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy import integrate
from scipy.special import gammaln as _oracle_lgamma

from evidencer.distributions import NgParams
from evidencer.glm import GlmSpec


def random_design(rng, n: int, p: int) -> np.ndarray:
    """Well-conditioned design: random columns plus a constant regressor."""
    x = rng.normal(size=(n, p))
    if p >= 1:
        x[:, -1] = 1.0
    return x


def random_spd(rng, p: int, scale: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(p, p))
    return scale * (a @ a.T + p * np.eye(p))


def random_precision(rng, n: int, kind: str):
    """Observation precision in one of the three supported storages."""
    if kind == "identity":
        return None
    if kind == "diagonal":
        return rng.uniform(0.5, 2.0, size=n)
    return random_spd(rng, n, scale=1.0 / n) + 0.5 * np.eye(n)


def random_proper_instance(rng, n=None, p=None, v=None, precision_kind=None):
    """A random GLM spec plus a strictly proper normal-gamma prior."""
    n = int(n if n is not None else rng.integers(8, 65))
    p = int(p if p is not None else rng.integers(1, 7))
    v = int(v if v is not None else rng.integers(1, 33))
    if precision_kind is None:
        precision_kind = ("identity", "diagonal", "full")[int(rng.integers(3))]
    spec = GlmSpec(
        Y=rng.normal(size=(n, v)),
        X=random_design(rng, n, p),
        precision=random_precision(rng, n, precision_kind),
    )
    prior = NgParams(
        mu=rng.normal(size=p),
        lam=random_spd(rng, p, scale=float(rng.uniform(0.2, 2.0))),
        a=float(rng.uniform(0.5, 5.0)),
        b=float(rng.uniform(0.5, 5.0)),
    )
    return spec, prior


def _loglik_terms(y: np.ndarray, x: np.ndarray, precision):
    """Scalar reductions (yPy, xPy, xPx, logdet P, n) for a 1-column design."""
    y = np.asarray(y, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    if precision is None:
        py, px = y, x
        logdet_p = 0.0
    elif np.ndim(precision) == 1:
        py, px = precision * y, precision * x
        logdet_p = float(np.sum(np.log(precision)))
    else:
        py, px = precision @ y, precision @ x
        logdet_p = float(np.linalg.slogdet(precision)[1])
    return float(y @ py), float(x @ py), float(x @ px), logdet_p, y.size


def _log_joint_factory(y, x, precision, log_prior, l0=0.0, mu0=0.0):
    """log[likelihood(b, tau) * prior(b, tau)] for a p=1 model."""
    ypy, xpy, xpx, logdet_p, n = _loglik_terms(y, x, precision)
    half_log_2pi = 0.5 * np.log(2.0 * np.pi)

    def log_joint(b, tau):
        quad = ypy - 2.0 * b * xpy + b * b * xpx
        loglik = (
            0.5 * logdet_p
            + 0.5 * n * np.log(tau)
            - n * half_log_2pi
            - 0.5 * tau * quad
        )
        return loglik + log_prior(b, tau)

    # integration geometry: center and width of the conditional b-bump
    center = (xpy + l0 * mu0) / (xpx + l0)
    width = 1.0 / np.sqrt(xpx + l0)
    return log_joint, center, width


def _log_integral_2d(log_joint, center, width):
    """log of the double integral of exp(log_joint) over b in R, tau > 0."""

    def log_inner(tau):
        scale = width / np.sqrt(tau)
        lo, hi = center - 14.0 * scale, center + 14.0 * scale
        shift = max(log_joint(center, tau), log_joint(0.5 * (lo + hi), tau))
        with warnings.catch_warnings():
            # deep-tail evaluations trip quad's roundoff heuristic; the
            # shifted integrand is fine at the 1e-4 oracle tolerance
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, _ = integrate.quad(
                lambda b: np.exp(log_joint(b, tau) - shift), lo, hi,
                epsabs=1e-12, epsrel=1e-10, limit=100,
            )
        return shift + np.log(val) if val > 0 else -np.inf

    # locate the tau bulk on a log grid, then integrate in u = log(tau)
    u_grid = np.linspace(-18.0, 18.0, 121)
    values = np.array([log_inner(np.exp(u)) + u for u in u_grid])
    u_star = u_grid[int(np.argmax(values))]
    peak = float(values.max())
    keep = values > peak - 45.0
    lo = u_grid[max(int(np.argmax(keep)) - 1, 0)]
    hi = u_grid[min(len(u_grid) - int(np.argmax(keep[::-1])), len(u_grid) - 1)]
    val, _ = integrate.quad(
        lambda u: np.exp(log_inner(np.exp(u)) + u - peak),
        lo, hi, epsabs=1e-12, epsrel=1e-10, limit=200, points=[u_star],
    )
    return peak + np.log(val)


def lme_by_quadrature(y, x, prior: NgParams, precision=None) -> float:
    """Brute-force log evidence for a p=1 model under a proper prior."""
    mu0 = float(np.ravel(prior.mu)[0])
    l0 = float(prior.lam[0, 0])
    a0, b0 = float(prior.a), float(np.ravel(prior.b)[0])
    half_log_2pi = 0.5 * np.log(2.0 * np.pi)

    def log_prior(b, tau):
        return (
            0.5 * np.log(tau * l0)
            - half_log_2pi
            - 0.5 * tau * l0 * (b - mu0) ** 2
            + a0 * np.log(b0)
            - float(_oracle_lgamma(a0))
            + (a0 - 1.0) * np.log(tau)
            - b0 * tau
        )

    log_joint, center, width = _log_joint_factory(
        y, x, precision, log_prior, l0=l0, mu0=mu0
    )
    return _log_integral_2d(log_joint, center, width)


def improper_evidence_by_quadrature(y, x, precision=None) -> float:
    """Brute-force log of the improper-prior marginal, density tau**(-1/2).

    The flat-coefficient, Jeffreys-precision prior limit carries a
    tau**(p/2) factor from the conditional coefficient prior, leaving
    tau**(p/2 - 1); with one coefficient that is tau**(-1/2). Only evidence
    *ratios* under this density are meaningful.
    """

    def log_prior(b, tau):
        return -0.5 * np.log(tau)

    log_joint, center, width = _log_joint_factory(y, x, precision, log_prior)
    return _log_integral_2d(log_joint, center, width)


def build_toy_workspace(
    root,
    seed: int = 123,
    n: int = 24,
    v: int = 12,
    s: int = 2,
    n_subjects: int = 5,
    with_group: bool = True,
    with_betas: bool = True,
    with_families: bool = True,
    extra_config: dict | None = None,
):
    """Write a small two-model analysis (CSV inputs plus config) to disk.

    Returns the config path. Model m1 is the generating model; m2 carries
    one extra noise regressor.
    """
    import json
    from pathlib import Path

    from evidencer.dataio import save_matrix

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for sess in range(1, s + 1):
        task = rng.normal(size=(n, 1))
        extra = rng.normal(size=(n, 1))
        const = np.ones((n, 1))
        x1 = np.hstack([task, const])
        x2 = np.hstack([task, extra, const])
        beta = np.vstack([rng.normal(size=(1, v)) + 2.0, np.ones((1, v))])
        y = x1 @ beta + rng.normal(scale=0.8, size=(n, v))
        save_matrix(root / f"Y_s{sess}.csv", y)
        save_matrix(root / f"X1_s{sess}.csv", x1)
        save_matrix(root / f"X2_s{sess}.csv", x2)
        for name, x in (("m1", x1), ("m2", x2)):
            estimate = np.linalg.lstsq(x, y, rcond=None)[0][0]
            save_matrix(root / f"beta_{name}_s{sess}.csv", estimate[None, :])

    config = {
        "models": [
            {"name": "m1", "design": [f"X1_s{i}.csv" for i in range(1, s + 1)]},
            {"name": "m2", "design": [f"X2_s{i}.csv" for i in range(1, s + 1)]},
        ],
        "data": [f"Y_s{i}.csv" for i in range(1, s + 1)],
        "precision": "identity",
        "sessions": {"kind": "multi"},
    }
    if with_families:
        config["families"] = {"simple": ["m1"], "rich": ["m2"]}
    if with_betas:
        config["betas"] = {
            "regressor": "task",
            "files": [
                [f"beta_m1_s{i}.csv" for i in range(1, s + 1)],
                [f"beta_m2_s{i}.csv" for i in range(1, s + 1)],
            ],
        }
    if with_group:
        for i in range(n_subjects):
            lme = rng.normal(size=(2, v)) * 3 - 40
            lme[0] += 4.0
            save_matrix(root / f"sub{i}_cvLME.csv", lme)
        config["subjects"] = [
            {"name": f"sub{i}", "cvlme": f"sub{i}_cvLME.csv"}
            for i in range(n_subjects)
        ]
    if extra_config:
        config.update(extra_config)
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config, indent=2))
    return config_path
