"""Session partitioning and cross-validated evidence assembly.

Each fold trains a posterior on all sessions but one, starting from the
non-informative prior, and scores the held-out session's evidence under
that trained prior. Summing the per-fold out-of-sample quantities gives the
cross-validated log model evidence and its accuracy/complexity split.

Two shortcuts keep this O(S) rather than O(S^2): per-session sufficient
statistics are additive, so each fold's training statistics are the totals
minus the held-out session's; and the fully-updated posterior (train block
then test block) is the same all-data posterior for every fold, so it is
computed once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EstimationError, LayoutError
from .glm import (
    GlmSpec,
    VoxelWisePosterior,
    accuracy,
    complexity,
    log_model_evidence,
)

__all__ = [
    "SessionLayout",
    "CvResult",
    "split_single_session",
    "split_glm_spec",
    "oos_lme",
    "cv_lme",
    "cv_lme_models",
]

_MIN_SINGLE_SESSION_SCANS = 40
_DISCARD_RANGE = range(10, 20)


@dataclass(frozen=True)
class SessionLayout:
    """Scan-index ranges of the cross-validation folds.

    ``sessions`` holds half-open ``(start, stop)`` ranges over the
    concatenated scan axis; ``discarded`` lists scan indices excluded from
    every fold (non-empty only for the single-session split). Ranges and
    discards are disjoint and together cover ``total_scans`` exactly once.
    """

    sessions: tuple
    discarded: tuple
    total_scans: int

    def __post_init__(self):
        if len(self.sessions) < 2:
            raise LayoutError("a layout needs at least two folds")
        covered = []
        for start, stop in self.sessions:
            if not (0 <= start < stop <= self.total_scans):
                raise LayoutError(f"range ({start}, {stop}) out of bounds")
            covered.extend(range(start, stop))
        covered.extend(self.discarded)
        if sorted(covered) != list(range(self.total_scans)):
            raise LayoutError(
                "session ranges plus discarded indices must cover every scan "
                "exactly once"
            )

    @property
    def n_folds(self) -> int:
        return len(self.sessions)

    @classmethod
    def from_counts(cls, counts) -> "SessionLayout":
        """Contiguous multi-session layout from per-session scan counts."""
        counts = [int(c) for c in counts]
        if any(c <= 0 for c in counts):
            raise LayoutError("every session needs at least one scan")
        edges = np.concatenate([[0], np.cumsum(counts)])
        sessions = tuple(
            (int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])
        )
        return cls(sessions=sessions, discarded=(), total_scans=int(edges[-1]))


def split_single_session(n: int, min_scans: int = _MIN_SINGLE_SESSION_SCANS) -> SessionLayout:
    """Split-half layout for a single session of ``n`` scans.

    Discards the smallest block of 10 to 19 consecutive middle scans that
    leaves an even number, yielding two equal halves; the gap breaks the
    temporal dependence between them. ``min_scans`` guards against halves
    too small to estimate anything.
    """
    n = int(n)
    if min_scans < 22:
        raise LayoutError("min_scans below 22 cannot fit two halves plus the gap")
    if n < min_scans:
        raise LayoutError(
            f"single-session split needs at least {min_scans} scans, got {n}"
        )
    discard = next(d for d in _DISCARD_RANGE if (n - d) % 2 == 0)
    half = (n - discard) // 2
    return SessionLayout(
        sessions=((0, half), (half + discard, n)),
        discarded=tuple(range(half, half + discard)),
        total_scans=n,
    )


def split_glm_spec(spec: GlmSpec, layout: SessionLayout) -> list:
    """Slice one session's spec into per-fold specs along the scan axis."""
    if spec.n != layout.total_scans:
        raise LayoutError(
            f"layout covers {layout.total_scans} scans but spec has {spec.n}"
        )
    out = []
    for start, stop in layout.sessions:
        if spec.precision is None:
            precision = None
        elif spec.precision.ndim == 1:
            precision = spec.precision[start:stop]
        else:
            precision = spec.precision[start:stop, start:stop]
        out.append(GlmSpec(Y=spec.Y[start:stop], X=spec.X[start:stop], precision=precision))
    return out


@dataclass
class CvResult:
    """Cross-validated evidences for a set of models.

    ``cv_*`` are (models x voxels); ``oos_*`` are (folds x models x voxels).
    The cross-validated arrays are the exact fold sums of the out-of-sample
    arrays, and accuracy minus complexity reproduces the evidence.
    """

    model_names: tuple
    cv_lme: np.ndarray
    cv_acc: np.ndarray
    cv_com: np.ndarray
    oos_lme: np.ndarray
    oos_acc: np.ndarray
    oos_com: np.ndarray

    def validate(self, atol: float = 1e-8) -> None:
        if not np.array_equal(self.cv_lme, self.oos_lme.sum(axis=0)):
            raise DomainError("cv_lme must be the exact fold sum of oos_lme")
        if np.max(np.abs(self.cv_acc - self.cv_com - self.cv_lme)) > atol:
            raise DomainError(
                "accuracy minus complexity does not reproduce the evidence"
            )


def _check_sessions(specs, layout: SessionLayout) -> None:
    if len(specs) != layout.n_folds:
        raise DomainError(
            f"layout has {layout.n_folds} folds but {len(specs)} session "
            "specs were given"
        )
    p = specs[0].p
    v = specs[0].n_voxels
    for i, spec in enumerate(specs):
        if spec.n == 0:
            raise DomainError(f"session {i} is empty")
        if spec.p != p or spec.n_voxels != v:
            raise DomainError(
                "per-session specs must share design width and voxel count"
            )
        start, stop = layout.sessions[i]
        if spec.n != stop - start:
            raise LayoutError(
                f"session {i} has {spec.n} scans but its layout range covers "
                f"{stop - start}"
            )


@dataclass
class _Totals:
    xtpx: np.ndarray
    xtpy: np.ndarray
    ytpy: np.ndarray
    n: int


def _totals(specs) -> _Totals:
    return _Totals(
        xtpx=sum(s.xtpx for s in specs),
        xtpy=sum(s.xtpy for s in specs),
        ytpy=sum(s.ytpy for s in specs),
        n=sum(s.n for s in specs),
    )


def _posterior_from_stats(
    xtpx: np.ndarray, xtpy: np.ndarray, ytpy: np.ndarray, n: int, label: str
) -> VoxelWisePosterior:
    """Normal-gamma posterior from non-informative-prior sufficient stats."""
    try:
        chol = np.linalg.cholesky(xtpx)
    except np.linalg.LinAlgError:
        raise EstimationError(
            f"{label} design block is rank-deficient; its coefficient "
            "precision cannot be inverted"
        ) from None
    mu = np.linalg.solve(chol.T, np.linalg.solve(chol, xtpy))
    b = 0.5 * (ytpy - np.einsum("pv,pv->v", mu, xtpx @ mu))
    if np.any(b <= 0):
        raise EstimationError(
            f"{label} block yields a non-positive posterior rate; the design "
            "is numerically ill-conditioned"
        )
    return VoxelWisePosterior(
        mu_n=mu, lambda_n=xtpx, a_n=n / 2.0, b_n=b, _chol=chol
    )


def _oos_fold(specs, fold: int, totals: _Totals, post_all: VoxelWisePosterior):
    held = specs[fold]
    train_post = _posterior_from_stats(
        totals.xtpx - held.xtpx,
        totals.xtpy - held.xtpy,
        totals.ytpy - held.ytpy,
        totals.n - held.n,
        f"fold {fold} training",
    )
    train_prior = train_post.as_prior()
    lme = log_model_evidence(held, train_prior, post_all)
    acc = accuracy(held, post_all)
    com = complexity(train_prior, post_all)
    return lme, acc, com


def oos_lme(specs, layout: SessionLayout, fold: int):
    """Out-of-sample evidence, accuracy, and complexity for one fold.

    Returns per-voxel vectors ``(lme, acc, com)`` with
    ``lme = acc - com`` up to round-off.
    """
    _check_sessions(specs, layout)
    if not (0 <= fold < layout.n_folds):
        raise DomainError(f"fold {fold} out of range for {layout.n_folds} folds")
    totals = _totals(specs)
    post_all = _posterior_from_stats(
        totals.xtpx, totals.xtpy, totals.ytpy, totals.n, "all-data"
    )
    return _oos_fold(specs, fold, totals, post_all)


def cv_lme(specs, layout: SessionLayout, name: str = "model") -> CvResult:
    """Cross-validated evidence for one model given its per-session specs.

    Per-session design matrices may differ across sessions but must share
    the column count; that the columns mean the same regressors in every
    session is the caller's responsibility.
    """
    _check_sessions(specs, layout)
    totals = _totals(specs)
    post_all = _posterior_from_stats(
        totals.xtpx, totals.xtpy, totals.ytpy, totals.n, "all-data"
    )
    folds = [
        _oos_fold(specs, i, totals, post_all) for i in range(layout.n_folds)
    ]
    oos_lme_arr = np.stack([f[0] for f in folds])[:, None, :]
    oos_acc_arr = np.stack([f[1] for f in folds])[:, None, :]
    oos_com_arr = np.stack([f[2] for f in folds])[:, None, :]
    result = CvResult(
        model_names=(name,),
        cv_lme=oos_lme_arr.sum(axis=0),
        cv_acc=oos_acc_arr.sum(axis=0),
        cv_com=oos_com_arr.sum(axis=0),
        oos_lme=oos_lme_arr,
        oos_acc=oos_acc_arr,
        oos_com=oos_com_arr,
    )
    result.validate()
    return result


def cv_lme_models(models, layout: SessionLayout) -> CvResult:
    """Stack :func:`cv_lme` over a name -> per-session-specs mapping."""
    if not models:
        raise DomainError("cv_lme_models needs at least one model")
    parts = {name: cv_lme(specs, layout, name) for name, specs in models.items()}
    names = tuple(parts)
    result = CvResult(
        model_names=names,
        cv_lme=np.concatenate([parts[n].cv_lme for n in names], axis=0),
        cv_acc=np.concatenate([parts[n].cv_acc for n in names], axis=0),
        cv_com=np.concatenate([parts[n].cv_com for n in names], axis=0),
        oos_lme=np.concatenate([parts[n].oos_lme for n in names], axis=1),
        oos_acc=np.concatenate([parts[n].oos_acc for n in names], axis=1),
        oos_com=np.concatenate([parts[n].oos_com for n in names], axis=1),
    )
    result.validate()
    return result
