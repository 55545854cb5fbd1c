"""Integration of block fits into one estimate with full inference.

The block fits supply, per subject, a stacked score vector ``psi_i =
(psi_i1', ..., psi_iJ')'`` (each block's beta-score evaluated at that
block's own estimate) together with block sensitivities ``S_j``. The
integration step weights the stacked mean score by the inverse of

    V_hat = (1/N) sum_i psi_i psi_i'          (uncentered outer products)

and combines the block estimates in closed form:

    beta_combined = (sum_jk S_j W_jk S_k)^(-1) sum_jk S_j W_jk S_k beta_k

where ``W_jk`` is the (j, k) p x p slice of ``V_hat^(-1)``. Its
asymptotic covariance is ``(N sum_jk S_j W_jk S_k)^(-1)``. The quadratic
form ``Q_N(beta) = N Psi_N(beta)' V_hat^(-1) Psi_N(beta)`` doubles as an
over-identification statistic: with J blocks it is asymptotically
chi-square with (J - 1) p degrees of freedom at the combined estimate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy import linalg as sla

from dimm.errors import IntegrationError
from dimm.pairwise import BlockFit, block_score_beta
from dimm.special import chi2_cdf, normal_cdf

if TYPE_CHECKING:
    from collections.abc import Sequence

    from dimm.model import PanelDataset

__all__ = [
    "CoefficientTest",
    "IntegratedFit",
    "StackedScores",
    "WeightMatrix",
    "cef_log_density",
    "dimm_covariance",
    "gof_test",
    "integrate_fits",
    "one_step_estimator",
    "q_from_mean_scores",
    "q_statistic",
    "stack_scores",
    "wald_tests",
    "weight_matrix",
]

# Ridge ladder for a numerically singular weight matrix: lambda starts at
# 1e-8 * trace/dim and escalates tenfold up to 1e-2 * trace/dim.
_RIDGE_START = 1e-8
_RIDGE_STOP = 1e-2


def _check_fits(fits: Sequence[BlockFit]) -> tuple[int, int]:
    """Common-shape validation; returns (n_subjects, p)."""
    if not fits:
        msg = "need at least one block fit"
        raise IntegrationError(msg)
    n = fits[0].n_subjects
    p = fits[0].n_params
    for f in fits:
        if f.n_subjects != n:
            msg = (
                f"block {f.name!r} has {f.n_subjects} subjects, expected {n}: "
                "all blocks must come from the same panel"
            )
            raise IntegrationError(msg)
        if f.n_params != p:
            msg = f"block {f.name!r} has p={f.n_params}, expected {p}"
            raise IntegrationError(msg)
    names = [f.name for f in fits]
    if len(set(names)) != len(names):
        msg = f"duplicate block names in fits: {names}"
        raise IntegrationError(msg)
    return n, p


@dataclass(frozen=True, eq=False)
class StackedScores:
    """Subject-level stacked scores across blocks.

    ``matrix`` has shape (N, J*p); columns ``j*p .. (j+1)*p - 1`` hold
    block j's per-subject scores, in fit order.
    """

    matrix: np.ndarray
    block_names: tuple[str, ...]
    n_params: int

    def __post_init__(self) -> None:
        mat = np.array(self.matrix, dtype=np.float64, copy=True)
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "block_names", tuple(self.block_names))

    @property
    def n_subjects(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_blocks(self) -> int:
        return len(self.block_names)


def stack_scores(fits: Sequence[BlockFit]) -> StackedScores:
    """Column-concatenate the per-subject block scores, in fit order."""
    _, p = _check_fits(fits)
    matrix = np.hstack([f.subject_scores for f in fits])
    return StackedScores(
        matrix=matrix, block_names=tuple(f.name for f in fits), n_params=p
    )


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Empirical second-moment matrix of the stacked scores and its inverse.

    ``ridge_used`` is 0.0 when the plain Cholesky inversion succeeded,
    otherwise the diagonal loading that was added to make it succeed.
    """

    v_hat: np.ndarray
    v_inv: np.ndarray
    ridge_used: float

    def __post_init__(self) -> None:
        v = np.array(self.v_hat, dtype=np.float64, copy=True)
        w = np.array(self.v_inv, dtype=np.float64, copy=True)
        v.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "v_hat", v)
        object.__setattr__(self, "v_inv", w)

    @property
    def dim(self) -> int:
        return self.v_hat.shape[0]


def weight_matrix(scores: StackedScores) -> WeightMatrix:
    """Build V_hat = (1/N) sum_i psi_i psi_i' and invert it.

    The average is uncentered by construction: at the block optima the
    mean scores are already ~0, so centering would only blur the
    estimand. Inversion is by Cholesky; if the factorization fails, a
    diagonal ridge is escalated tenfold from 1e-8*trace/dim up to
    1e-2*trace/dim before giving up.

    Raises
    ------
    IntegrationError
        If even the largest ridge leaves the matrix non-invertible.
    """
    psi = scores.matrix
    n, dim = psi.shape
    if n <= dim:
        warnings.warn(
            f"only N={n} subjects for a {dim}-dimensional stacked score; "
            "the weight matrix is likely ill-conditioned (want N > J*p)",
            stacklevel=2,
        )
    v_hat = psi.T @ psi / n
    v_hat = (v_hat + v_hat.T) / 2.0
    scale = float(np.trace(v_hat)) / dim
    if not math.isfinite(scale) or scale <= 0.0:
        msg = "stacked scores produced a degenerate weight matrix"
        raise IntegrationError(msg)

    lam = 0.0
    while True:
        try:
            chol = sla.cho_factor(v_hat + lam * np.eye(dim), lower=True)
        except sla.LinAlgError:
            lam = _RIDGE_START * scale if lam == 0.0 else lam * 10.0
            if lam > _RIDGE_STOP * scale * (1.0 + 1e-12):
                msg = (
                    "weight matrix is numerically singular even after ridge "
                    f"loading up to {_RIDGE_STOP:g}*trace/dim"
                )
                raise IntegrationError(msg) from None
            continue
        break
    v_inv = sla.cho_solve(chol, np.eye(dim))
    v_inv = (v_inv + v_inv.T) / 2.0
    return WeightMatrix(v_hat=v_hat, v_inv=v_inv, ridge_used=lam)


def _bread_and_target(
    fits: Sequence[BlockFit], weights: WeightMatrix
) -> tuple[np.ndarray, np.ndarray]:
    """Compute (sum_jk S_j W_jk S_k, sum_jk S_j W_jk S_k beta_k)."""
    n, p = _check_fits(fits)
    dim = len(fits) * p
    if weights.dim != dim:
        msg = f"weight matrix dimension {weights.dim} != J*p = {dim}"
        raise IntegrationError(msg)
    stacked_s = np.vstack([f.sensitivity for f in fits])  # (J*p, p)
    stacked_sb = np.concatenate([f.sensitivity @ f.beta_hat for f in fits])  # (J*p,)
    half = stacked_s.T @ weights.v_inv
    bread = half @ stacked_s
    bread = (bread + bread.T) / 2.0
    target = half @ stacked_sb
    return bread, target


def one_step_estimator(fits: Sequence[BlockFit], weights: WeightMatrix) -> np.ndarray:
    """Closed-form combination of the block estimates.

    Returns the p-vector ``(sum_jk S_j W_jk S_k)^(-1) sum_jk S_j W_jk S_k
    beta_hat_k``. With a single block this collapses to that block's
    estimate exactly (up to solve roundoff).

    Raises
    ------
    IntegrationError
        If the bread matrix is not positive definite.
    """
    bread, target = _bread_and_target(fits, weights)
    try:
        chol = sla.cho_factor(bread, lower=True)
    except sla.LinAlgError:
        msg = "bread matrix sum_jk S_j W_jk S_k is not positive definite"
        raise IntegrationError(msg) from None
    return sla.cho_solve(chol, target)


def dimm_covariance(fits: Sequence[BlockFit], weights: WeightMatrix) -> np.ndarray:
    """Asymptotic covariance of the combined estimate: (N * bread)^(-1)."""
    n, _ = _check_fits(fits)
    bread, _ = _bread_and_target(fits, weights)
    try:
        chol = sla.cho_factor(bread, lower=True)
    except sla.LinAlgError:
        msg = "bread matrix sum_jk S_j W_jk S_k is not positive definite"
        raise IntegrationError(msg) from None
    cov = sla.cho_solve(chol, np.eye(bread.shape[0])) / n
    cov = (cov + cov.T) / 2.0
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        msg = "combined covariance is not positive definite"
        raise IntegrationError(msg) from None
    return cov


def q_from_mean_scores(
    mean_scores: np.ndarray, weights: WeightMatrix, n_subjects: int
) -> float:
    """Quadratic form N * Psi' V_hat^(-1) Psi for a stacked mean score."""
    psi = np.asarray(mean_scores, dtype=np.float64).reshape(-1)
    if psi.shape[0] != weights.dim:
        msg = f"mean score length {psi.shape[0]} != weight dimension {weights.dim}"
        raise IntegrationError(msg)
    return float(n_subjects * psi @ weights.v_inv @ psi)


def q_statistic(
    beta: np.ndarray,
    blocks: Sequence[PanelDataset],
    fits: Sequence[BlockFit],
    weights: WeightMatrix,
) -> float:
    """Q_N(beta): re-evaluate every block's mean score at a common beta.

    This is the second data pass: each block's beta-score is recomputed
    at ``beta`` with the working parameters held at that block's fitted
    ``gamma_hat``, the J mean scores are stacked, and the quadratic form
    against ``V_hat^(-1)`` is scaled by N.
    """
    n, p = _check_fits(fits)
    if len(blocks) != len(fits):
        msg = f"got {len(blocks)} block datasets for {len(fits)} fits"
        raise IntegrationError(msg)
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if beta.shape != (p,):
        msg = f"beta has length {beta.shape[0]}, expected p={p}"
        raise IntegrationError(msg)
    parts = []
    for block_data, fit in zip(blocks, fits):
        scores = block_score_beta(beta, fit.gamma_hat, block_data)
        if scores.shape[0] != n:
            msg = f"block {fit.name!r} dataset has {scores.shape[0]} subjects, expected {n}"
            raise IntegrationError(msg)
        parts.append(scores.mean(axis=0))
    return q_from_mean_scores(np.concatenate(parts), weights, n)


def cef_log_density(
    beta: np.ndarray,
    blocks: Sequence[PanelDataset],
    fits: Sequence[BlockFit],
    weights: WeightMatrix,
) -> float:
    """Log of the combined estimating-function density, up to a constant.

    Equals ``-Q_N(beta) / 2``; the combined estimate is its mode.
    """
    return -0.5 * q_statistic(beta, blocks, fits, weights)


def gof_test(q_stat: float, n_blocks: int, n_params: int) -> tuple[int, float]:
    """Over-identification test for the integrated fit.

    Parameters
    ----------
    q_stat : float
        Q_N evaluated at the combined estimate.
    n_blocks, n_params : int
        Number of integrated blocks J and mean-parameter dimension p.

    Returns
    -------
    (df, p_value)
        Degrees of freedom ``(J - 1) * p`` and the upper-tail
        chi-square probability.

    Raises
    ------
    IntegrationError
        With J = 1 there are no over-identifying restrictions (df = 0);
        the test is refused rather than reporting a vacuous p-value.
    """
    if n_blocks < 1 or n_params < 1:
        msg = f"need J >= 1 and p >= 1, got J={n_blocks}, p={n_params}"
        raise IntegrationError(msg)
    df = (n_blocks - 1) * n_params
    if df == 0:
        msg = (
            "goodness-of-fit test is unavailable with a single block: "
            "there are no over-identifying restrictions (df = 0)"
        )
        raise IntegrationError(msg)
    if not math.isfinite(q_stat) or q_stat < 0.0:
        msg = f"q_stat must be finite and >= 0, got {q_stat!r}"
        raise IntegrationError(msg)
    return df, 1.0 - chi2_cdf(q_stat, df)


@dataclass(frozen=True)
class CoefficientTest:
    """Wald inference for one coefficient."""

    estimate: float
    std_error: float
    z_value: float
    p_value: float
    ci_lower: float
    ci_upper: float


def _wald_from(beta: np.ndarray, covariance: np.ndarray) -> tuple[CoefficientTest, ...]:
    out = []
    for q in range(beta.shape[0]):
        se = math.sqrt(covariance[q, q])
        z = beta[q] / se
        # 2 * Phi(-|z|) == 2 * (1 - Phi(|z|)) but keeps the far tail
        # instead of cancelling it against 1.
        p_val = 2.0 * normal_cdf(-abs(z))
        out.append(
            CoefficientTest(
                estimate=float(beta[q]),
                std_error=se,
                z_value=float(z),
                p_value=float(p_val),
                ci_lower=float(beta[q] - 1.96 * se),
                ci_upper=float(beta[q] + 1.96 * se),
            )
        )
    return tuple(out)


@dataclass(frozen=True, eq=False)
class IntegratedFit:
    """Combined estimate across blocks with inference.

    Attributes
    ----------
    beta_dimm : ndarray, shape (p,)
        The integrated estimate.
    covariance : ndarray, shape (p, p)
        Asymptotic covariance of ``beta_dimm`` (already divided by N).
    q_stat : float
        Q_N at ``beta_dimm``.
    gof_df : int
        Over-identification degrees of freedom (0 when J = 1).
    gof_pvalue : float or None
        Upper-tail chi-square probability; None when J = 1 (the test is
        refused, not silently passed).
    wald : tuple of CoefficientTest
        Per-coefficient Wald inference.
    block_names : tuple of str
        Names of the integrated blocks, in order.
    n_subjects : int
        Panel size N.
    ridge_used : float
        Diagonal loading applied to the weight matrix (0.0 if none).
    """

    beta_dimm: np.ndarray
    covariance: np.ndarray
    q_stat: float
    gof_df: int
    gof_pvalue: float | None
    wald: tuple[CoefficientTest, ...]
    block_names: tuple[str, ...]
    n_subjects: int
    ridge_used: float

    def __post_init__(self) -> None:
        beta = np.array(self.beta_dimm, dtype=np.float64, copy=True)
        cov = np.array(self.covariance, dtype=np.float64, copy=True)
        beta.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "beta_dimm", beta)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "block_names", tuple(self.block_names))

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    @property
    def n_blocks(self) -> int:
        return len(self.block_names)


def wald_tests(fit: IntegratedFit) -> tuple[CoefficientTest, ...]:
    """Per-coefficient Wald tests of H0: beta_q = 0 for an integrated fit.

    Recomputes from the stored estimate and covariance; the result is
    identical to ``fit.wald``.
    """
    return _wald_from(fit.beta_dimm, fit.covariance)


def integrate_fits(
    fits: Sequence[BlockFit],
    blocks: Sequence[PanelDataset],
    *,
    subset: Sequence[str] | None = None,
) -> IntegratedFit:
    """Run the full integration step over block fits.

    Parameters
    ----------
    fits : sequence of BlockFit
        Per-block fits, in block order.
    blocks : sequence of PanelDataset
        The matching per-block datasets (needed for the second data pass
        behind Q_N).
    subset : sequence of str, optional
        Integrate only the named blocks (sub-group analysis). Selection
        preserves fit order; integrating a subset is bit-identical to
        running on a panel that contains only those blocks, given the
        same fits.

    Returns
    -------
    IntegratedFit
    """
    fits = list(fits)
    blocks = list(blocks)
    if len(blocks) != len(fits):
        msg = f"got {len(blocks)} block datasets for {len(fits)} fits"
        raise IntegrationError(msg)
    if subset is not None:
        wanted = list(subset)
        names = [f.name for f in fits]
        missing = [w for w in wanted if w not in names]
        if missing:
            msg = f"subset names not found among fits: {missing}; known: {names}"
            raise IntegrationError(msg)
        if len(set(wanted)) != len(wanted):
            msg = f"subset names contain duplicates: {wanted}"
            raise IntegrationError(msg)
        keep = [i for i, name in enumerate(names) if name in set(wanted)]
        fits = [fits[i] for i in keep]
        blocks = [blocks[i] for i in keep]

    n, p = _check_fits(fits)
    scores = stack_scores(fits)
    weights = weight_matrix(scores)
    beta = one_step_estimator(fits, weights)
    cov = dimm_covariance(fits, weights)
    q_val = q_statistic(beta, blocks, fits, weights)
    if len(fits) > 1:
        gof_df, gof_p = gof_test(q_val, len(fits), p)
    else:
        gof_df, gof_p = 0, None
    return IntegratedFit(
        beta_dimm=beta,
        covariance=cov,
        q_stat=q_val,
        gof_df=gof_df,
        gof_pvalue=gof_p,
        wald=_wald_from(beta, cov),
        block_names=tuple(f.name for f in fits),
        n_subjects=n,
        ridge_used=weights.ridge_used,
    )
