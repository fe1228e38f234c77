"""Model-order selection and spectrum cleaning for covariance estimates.

The pipeline: estimate a robust scatter, rectify it toward the Toeplitz
structure of the noise, whiten the panel with the rectified estimate, and
re-estimate.  The whitened spectrum then follows the classic random-matrix
bulk law whose upper edge ``(1 + sqrt(m/N))**2`` separates noise eigenvalues
from those carrying common factors.  Eigenvalues below the edge are averaged
away; the result is congruence-mapped back and rescaled to the panel's
sample variances.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (DegenerateDataError, DegenerateSpectrumError,
                     InsufficientSamplesError, ParameterError)
from .robust import (ScatterMatrix, TylerConfig, demean_rows, inv_sqrt,
                     toeplitzify, tyler, _as_matrix, _check_panel)

CLIP_RULES = ("trace_preserving", "literal")


@dataclass
class EigenSpectrum:
    """Eigenvalues in descending order with matching eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def eigen_spectrum(matrix) -> EigenSpectrum:
    """Full symmetric eigendecomposition, sorted largest first."""
    values = _as_matrix(matrix)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ParameterError("eigen_spectrum needs a square matrix")
    eigvals, eigvecs = np.linalg.eigh(0.5 * (values + values.T))
    order = slice(None, None, -1)
    return EigenSpectrum(eigvals[order].copy(), eigvecs[:, order].copy())


def mp_upper_bound(ratio_c: float) -> float:
    """Upper edge of the noise eigenvalue bulk at aspect ratio c = m/N."""
    if not ratio_c > 0.0:
        raise ParameterError(f"aspect ratio must be positive, got {ratio_c}")
    return (1.0 + math.sqrt(ratio_c)) ** 2


def select_order(spectrum, lambda_bar: float) -> int:
    """Number of eigenvalues strictly above the bulk edge."""
    if isinstance(spectrum, EigenSpectrum):
        eigvals = spectrum.eigenvalues
    else:
        eigvals = np.asarray(spectrum, dtype=float)
    if eigvals.ndim != 1:
        raise ParameterError("select_order expects a vector of eigenvalues")
    return int(np.count_nonzero(eigvals > lambda_bar))


def clip_spectrum(eigenvalues, k: int, *,
                  rule: str = "trace_preserving") -> np.ndarray:
    """Replace all but the top ``k`` eigenvalues by a common noise level.

    ``trace_preserving`` (default) spreads the remaining trace uniformly,
    so the total trace is unchanged.  ``literal`` instead spreads the mass of
    the retained top-k eigenvalues over the clipped ones, which inflates the
    trace; it is kept for comparison only.
    """
    eigvals = np.asarray(eigenvalues, dtype=float)
    if eigvals.ndim != 1:
        raise ParameterError("clip_spectrum expects a vector of eigenvalues")
    if np.any(np.diff(eigvals) > 0.0):
        raise ParameterError("eigenvalues must be sorted in descending order")
    m = eigvals.size
    if not 0 <= k <= m:
        raise ParameterError(f"k must lie in [0, {m}], got {k}")
    if rule not in CLIP_RULES:
        raise ParameterError(f"unknown clip rule {rule!r}")
    if k == m:
        return eigvals.copy()
    if rule == "trace_preserving":
        level = (eigvals.sum() - eigvals[:k].sum()) / (m - k)
    else:
        level = eigvals[:k].sum() / (m - k)
    if level <= 0.0:
        raise DegenerateSpectrumError(
            f"clipping produced a non-positive noise level {level!r}")
    out = eigvals.copy()
    out[k:] = level
    return out


@dataclass(frozen=True)
class CleanConfig:
    """Settings of the full cleaning pipeline.

    ``demean`` defaults to on: real returns are not centered.  Turn it off
    for data that is centered by construction (synthetic panels): centering
    on a plug-in mean hands every small-norm observation nearly the same
    direction, which the robust scatter step can amplify into a spurious
    factor (see ``robust.tyler``).
    """

    tyler: TylerConfig = TylerConfig()
    demean: bool = True
    eigen_floor: float = 1e-10
    clip_rule: str = "trace_preserving"

    def __post_init__(self):
        if self.eigen_floor < 0.0:
            raise ParameterError(
                f"eigen_floor must be >= 0, got {self.eigen_floor}")
        if self.clip_rule not in CLIP_RULES:
            raise ParameterError(f"unknown clip rule {self.clip_rule!r}")


@dataclass
class CleaningReport:
    """Everything the cleaning pipeline decided and produced."""

    k_hat: int
    lambda_bar: float
    ratio_c: float
    spectrum: EigenSpectrum
    clipped_spectrum: np.ndarray
    denoised: np.ndarray
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "k_hat": self.k_hat,
            "lambda_bar": self.lambda_bar,
            "ratio_c": self.ratio_c,
            "eigenvalues": [float(v) for v in self.spectrum.eigenvalues],
            "clipped_eigenvalues": [float(v) for v in self.clipped_spectrum],
            "warnings": list(self.warnings),
        }


def _sym_sqrt(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(a)
    return (vecs * np.sqrt(np.maximum(vals, 0.0))) @ vecs.T


def clean_covariance(panel, config: CleanConfig | None = None) -> CleaningReport:
    """Run the full rectify-whiten-clip pipeline on a return panel.

    Returns the denoised covariance (diagonal matching the panel's sample
    variances), the selected model order, the bulk edge used, and both the
    raw and clipped whitened spectra.  Estimation errors propagate; eigenvalue
    flooring is collected into the report's warnings.
    """
    cfg = config or CleanConfig()
    panel = _check_panel(panel)
    m, n = panel.shape
    if n <= m:
        raise InsufficientSamplesError(
            f"need more observations than assets, got m={m}, N={n}")
    work = demean_rows(panel) if cfg.demean else panel

    sample_var = np.var(panel, axis=1, ddof=1)
    flat = np.flatnonzero(sample_var == 0.0)
    if flat.size:
        raise DegenerateDataError(
            f"asset {flat[0]} has zero sample variance over the window")

    notes: list[str] = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        robust_scatter = tyler(work, cfg.tyler, demean=False)
        noise_scatter = toeplitzify(robust_scatter.values)
        noise_scatter *= m / np.trace(noise_scatter)
        whitener = inv_sqrt(noise_scatter, cfg.eigen_floor)
        whitened = whitener @ work
        whitened_scatter = tyler(whitened, cfg.tyler, demean=False)
    notes.extend(str(w.message) for w in caught)

    spectrum = eigen_spectrum(whitened_scatter.values)
    ratio_c = m / n
    lambda_bar = mp_upper_bound(ratio_c)
    k_hat = select_order(spectrum.eigenvalues, lambda_bar)
    clipped = clip_spectrum(spectrum.eigenvalues, k_hat, rule=cfg.clip_rule)

    cleaned_white = (spectrum.eigenvectors * clipped) @ spectrum.eigenvectors.T
    color = _sym_sqrt(noise_scatter)
    scatter_shape = color @ cleaned_white @ color
    scale = np.sqrt(sample_var / np.diag(scatter_shape))
    denoised = scatter_shape * np.outer(scale, scale)
    denoised = 0.5 * (denoised + denoised.T)

    return CleaningReport(k_hat=k_hat, lambda_bar=lambda_bar, ratio_c=ratio_c,
                          spectrum=spectrum, clipped_spectrum=clipped,
                          denoised=denoised, warnings=notes)


def save_eigenvalue_histogram(eigenvalues, path, bins: int = 60,
                              log_scale: bool = True) -> None:
    """Write a binned eigenvalue histogram as CSV for external plotting."""
    eigvals = np.asarray(eigenvalues, dtype=float).ravel()
    if eigvals.size == 0:
        raise ParameterError("no eigenvalues to histogram")
    if log_scale:
        if np.any(eigvals <= 0.0):
            raise ParameterError(
                "log-scale histogram needs strictly positive eigenvalues")
        data = np.log(eigvals)
    else:
        data = eigvals
    counts, edges = np.histogram(data, bins=bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_center", "count"])
        for center, count in zip(centers, counts):
            writer.writerow([repr(float(center)), int(count)])
