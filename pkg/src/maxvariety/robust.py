"""Scatter-matrix estimation and rectification.

Provides the sample covariance, a distribution-free fixed-point M-estimator
of scatter, rectification of an estimate toward Toeplitz structure, and the
inverse-square-root / whitening transforms built on top of them.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (ConvergenceError, DegenerateDataError,
                     EigenvalueFloorWarning, IngestionError,
                     InsufficientSamplesError, ParameterError,
                     SingularMatrixError)

NORMALIZATIONS = ("trace_m", "covariance_scale")


@dataclass
class ScatterMatrix:
    """A symmetric scatter estimate plus its normalization convention.

    ``trace_m`` means the matrix trace equals its dimension (shape-only
    estimators); ``covariance_scale`` means entries are plain covariances.
    """

    values: np.ndarray
    normalization: str = "covariance_scale"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise ParameterError("scatter matrix must be square")
        if self.normalization not in NORMALIZATIONS:
            raise ParameterError(
                f"unknown normalization {self.normalization!r}")

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def validate(self, tol: float = 1e-10) -> None:
        """Check symmetry, and the trace convention when tagged trace_m."""
        scale = max(np.abs(self.values).max(), 1.0)
        asym = np.abs(self.values - self.values.T).max()
        if asym > tol * scale:
            raise ParameterError(
                f"scatter matrix asymmetric: max deviation {asym:.3e}")
        if self.normalization == "trace_m":
            drift = abs(np.trace(self.values) - self.dim)
            if drift > 1e-8 * self.dim:
                raise ParameterError(
                    f"trace_m scatter has trace {np.trace(self.values)!r}, "
                    f"expected {self.dim}")


def save_scatter_csv(scatter: ScatterMatrix, path) -> None:
    """Serialize with a one-line header carrying the dimension and tag."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([scatter.dim, scatter.normalization])
        for row in scatter.values:
            writer.writerow([repr(float(v)) for v in row])


def load_scatter_csv(path) -> ScatterMatrix:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IngestionError(f"cannot read scatter file {path}: {exc}") from exc
    with fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestionError(f"{path}: empty scatter file")
    header = rows[0]
    if len(header) != 2:
        raise IngestionError(f"{path}: malformed scatter header {header!r}")
    try:
        dim = int(header[0])
    except ValueError as exc:
        raise IngestionError(f"{path}: bad dimension {header[0]!r}") from exc
    if len(rows) - 1 != dim:
        raise IngestionError(
            f"{path}: header says {dim} rows, found {len(rows) - 1}")
    try:
        values = np.array([[float(v) for v in row] for row in rows[1:]])
    except ValueError as exc:
        raise IngestionError(f"{path}: non-numeric entry: {exc}") from exc
    return ScatterMatrix(values, normalization=header[1])


def _as_matrix(scatter) -> np.ndarray:
    if isinstance(scatter, ScatterMatrix):
        return scatter.values
    return np.asarray(scatter, dtype=float)


def _check_panel(panel) -> np.ndarray:
    panel = np.asarray(panel, dtype=float)
    if panel.ndim != 2:
        raise ParameterError("panel must be a 2-d array (assets x samples)")
    if panel.shape[1] < 1:
        raise ParameterError("panel has no observations")
    return panel


def demean_rows(panel: np.ndarray) -> np.ndarray:
    """Subtract each asset's sample mean across observations."""
    panel = _check_panel(panel)
    return panel - panel.mean(axis=1, keepdims=True)


def scm(panel, demean: bool = False) -> ScatterMatrix:
    """Sample covariance matrix (raw second moment by default).

    Pass ``demean=True`` to center each asset on its window mean first.
    """
    panel = _check_panel(panel)
    if demean:
        panel = demean_rows(panel)
    n = panel.shape[1]
    cov = (panel @ panel.T) / n
    cov = 0.5 * (cov + cov.T)
    if not np.any(cov):
        raise SingularMatrixError("sample covariance is identically zero")
    return ScatterMatrix(cov, normalization="covariance_scale")


@dataclass(frozen=True)
class TylerConfig:
    """Settings of the fixed-point scatter iteration."""

    max_iter: int = 200
    tol: float = 1e-8
    eigen_floor: float = 1e-10

    def __post_init__(self):
        if self.max_iter < 1:
            raise ParameterError(f"max_iter must be >= 1, got {self.max_iter}")
        if not self.tol > 0.0:
            raise ParameterError(f"tol must be positive, got {self.tol}")
        if self.eigen_floor < 0.0:
            raise ParameterError(
                f"eigen_floor must be >= 0, got {self.eigen_floor}")


def _tyler_step(panel: np.ndarray, current: np.ndarray) -> np.ndarray:
    """One fixed-point sweep: reweight samples by their Mahalanobis norm."""
    m, n = panel.shape
    try:
        solved = np.linalg.solve(current, panel)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(
            "scatter iterate became singular") from exc
    quad = np.einsum("ij,ij->j", panel, solved)
    if not np.all(quad > 0.0):
        raise SingularMatrixError(
            "scatter iterate lost positive definiteness")
    update = (m / n) * ((panel / quad) @ panel.T)
    return 0.5 * (update + update.T)


def tyler(panel, config: TylerConfig | None = None, *,
          demean: bool = False) -> ScatterMatrix:
    """Distribution-free scatter estimate, normalized to trace m.

    Solves ``C = (m/N) * sum_t r_t r_t' / (r_t' C^{-1} r_t)`` by fixed-point
    iteration from the identity, renormalizing the trace to m after every
    sweep.  Per-sample scale factors cancel inside the quadratic form, so the
    estimate ignores any heavy-tailed radial component of the data.

    The estimator assumes observations centered at zero.  Demeaning is off by
    default on purpose: subtracting a plug-in mean gives every small-norm
    observation nearly the same direction, and the estimator then grows a
    spurious spike along it (the effect is strong for heavy-tailed data whose
    radial density piles up near zero).  Only enable ``demean`` for data whose
    per-asset means are believed material and whose observation norms stay
    well away from zero.

    Requires strictly more observations than assets and no all-zero
    observation.  Raises ConvergenceError (carrying the last residual) if the
    relative Frobenius change is still above ``config.tol`` after
    ``config.max_iter`` sweeps.
    """
    cfg = config or TylerConfig()
    panel = _check_panel(panel)
    if demean:
        panel = demean_rows(panel)
    m, n = panel.shape
    if n <= m:
        raise InsufficientSamplesError(
            f"need more observations than assets, got m={m}, N={n}")
    norms = np.linalg.norm(panel, axis=0)
    dead = np.flatnonzero(norms == 0.0)
    if dead.size:
        raise DegenerateDataError(
            f"observation {dead[0]} is identically zero")

    current = np.eye(m)
    residual = np.inf
    for _ in range(cfg.max_iter):
        update = _tyler_step(panel, current)
        update *= m / np.trace(update)
        residual = (np.linalg.norm(update - current)
                    / np.linalg.norm(current))
        current = update
        if residual < cfg.tol:
            return ScatterMatrix(current, normalization="trace_m")
    raise ConvergenceError(
        f"fixed-point iteration stalled at residual {residual:.3e} "
        f"after {cfg.max_iter} sweeps (tol {cfg.tol:.1e})",
        residual=residual, iterate=current)


def fixed_point_residual(panel, scatter, *, demean: bool = False) -> float:
    """Relative Frobenius defect of the scatter fixed-point equation."""
    panel = _check_panel(panel)
    if demean:
        panel = demean_rows(panel)
    values = _as_matrix(scatter)
    step = _tyler_step(panel, values)
    return np.linalg.norm(step - values) / np.linalg.norm(values)


def toeplitzify(matrix, *, biased: bool = True) -> np.ndarray:
    """Average the diagonals of a square matrix into Toeplitz form.

    The input is symmetrized first.  With ``biased=True`` every diagonal sum
    is divided by the full dimension m, which shrinks long lags toward zero
    but keeps the output positive semidefinite whenever the input is.  With
    ``biased=False`` each diagonal is divided by its own length, the
    orthogonal projection onto symmetric Toeplitz matrices; that variant is
    idempotent but can break positive semidefiniteness.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ParameterError("toeplitzify needs a square matrix")
    sym = 0.5 * (matrix + matrix.T)
    m = sym.shape[0]
    lag_means = np.empty(m)
    for lag in range(m):
        diag = np.diagonal(sym, offset=lag)
        if not biased and np.ptp(diag) == 0.0:
            # summing k copies of a float and dividing by k can round, which
            # would break the projection's exact idempotence
            lag_means[lag] = diag[0]
        else:
            lag_means[lag] = diag.sum() / (m if biased else (m - lag))
    idx = np.abs(np.arange(m)[:, None] - np.arange(m)[None, :])
    return lag_means[idx]


def inv_sqrt(scatter, eigen_floor: float = 1e-10) -> np.ndarray:
    """Inverse symmetric square root of a positive definite matrix.

    Eigenvalues below ``eigen_floor`` times the mean eigenvalue are raised to
    that floor before inversion; doing so emits an EigenvalueFloorWarning.
    Raises SingularMatrixError when no strictly positive floor exists.
    """
    if eigen_floor < 0.0:
        raise ParameterError(f"eigen_floor must be >= 0, got {eigen_floor}")
    values = _as_matrix(scatter)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ParameterError("inv_sqrt needs a square matrix")
    sym = 0.5 * (values + values.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    mean = eigvals.mean()
    floor = eigen_floor * mean
    if mean <= 0.0 or floor <= 0.0 and eigvals.min() <= 0.0:
        raise SingularMatrixError(
            "matrix is singular or indefinite; cannot form inverse square root")
    n_floored = int(np.count_nonzero(eigvals < floor))
    if n_floored:
        warnings.warn(
            f"floored {n_floored} eigenvalue(s) below {floor:.3e} "
            f"before inversion", EigenvalueFloorWarning, stacklevel=2)
        eigvals = np.maximum(eigvals, floor)
    return (eigvecs / np.sqrt(eigvals)) @ eigvecs.T


def whiten(panel, scatter, eigen_floor: float = 1e-10) -> np.ndarray:
    """Apply the inverse square root of ``scatter`` to every observation."""
    panel = _check_panel(panel)
    values = _as_matrix(scatter)
    if values.shape[0] != panel.shape[0]:
        raise ParameterError(
            f"scatter dimension {values.shape[0]} does not match "
            f"panel with {panel.shape[0]} assets")
    return inv_sqrt(values, eigen_floor) @ panel
