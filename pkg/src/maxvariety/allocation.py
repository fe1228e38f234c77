"""Long-only portfolios that maximize the variety ratio.

The variety ratio of weights ``w`` under covariance ``Sigma`` is
``(w . s) / sqrt(w' Sigma w)`` where ``s`` holds the per-asset volatilities.
It equals 1 for single-asset portfolios and grows as the portfolio spreads
across imperfectly correlated assets, so maximizing it yields the most
diversified long-only mix.

Two independent solvers are provided: projected gradient ascent on the log
ratio (the primary path) and an exact reformulation as a long-only
minimum-variance problem on the correlation matrix (the cross-check path).
``maximize_variety`` runs both and returns the better, which also guards the
gradient path against poor local basins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConvergenceError, DegenerateDataError, ParameterError


@dataclass
class CovarianceInput:
    """A covariance matrix plus the volatility vector drawn from its diagonal."""

    sigma: np.ndarray
    vols: np.ndarray

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.vols = np.asarray(self.vols, dtype=float)
        if self.sigma.ndim != 2 or self.sigma.shape[0] != self.sigma.shape[1]:
            raise ParameterError("covariance must be a square matrix")
        if self.vols.shape != (self.sigma.shape[0],):
            raise ParameterError("vols length must match covariance dimension")

    @classmethod
    def from_covariance(cls, sigma) -> CovarianceInput:
        sigma = np.asarray(sigma, dtype=float)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ParameterError("covariance must be a square matrix")
        scale = max(np.abs(sigma).max(), 1.0)
        if np.abs(sigma - sigma.T).max() > 1e-10 * scale:
            raise ParameterError("covariance must be symmetric")
        diag = np.diag(sigma)
        bad = np.flatnonzero(diag <= 0.0)
        if bad.size:
            raise DegenerateDataError(
                f"asset {bad[0]} has non-positive variance")
        return cls(sigma, np.sqrt(diag))

    def validate(self, tol: float = 1e-10) -> None:
        drift = np.abs(self.vols ** 2 - np.diag(self.sigma)).max()
        scale = max(np.diag(self.sigma).max(), 1.0)
        if drift > tol * scale:
            raise ParameterError(
                f"vols inconsistent with covariance diagonal "
                f"(max drift {drift:.3e})")


@dataclass
class WeightVector:
    """Long-only weights on the unit simplex."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 1:
            raise ParameterError("weights must be a vector")

    def validate(self, tol: float = 1e-8) -> None:
        if self.weights.min() < -tol or self.weights.max() > 1.0 + tol:
            raise ParameterError("weights must lie in [0, 1]")
        if abs(self.weights.sum() - 1.0) > tol:
            raise ParameterError(
                f"weights sum to {self.weights.sum()!r}, expected 1")


def _as_cov(cov) -> CovarianceInput:
    if isinstance(cov, CovarianceInput):
        return cov
    return CovarianceInput.from_covariance(cov)


def _as_weights(weights) -> np.ndarray:
    if isinstance(weights, WeightVector):
        return weights.weights
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1:
        raise ParameterError("weights must be a vector")
    return w


def variety_ratio(weights, cov) -> float:
    """Weighted volatility over portfolio volatility; >= 1 on the simplex."""
    cov = _as_cov(cov)
    w = _as_weights(weights)
    if w.shape != cov.vols.shape:
        raise ParameterError(
            f"{w.size} weights for {cov.vols.size} assets")
    variance = float(w @ cov.sigma @ w)
    if variance <= 0.0:
        raise DegenerateDataError(
            f"portfolio variance {variance!r} is not positive")
    return float(w @ cov.vols) / math.sqrt(variance)


def _project(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    cumulative = np.cumsum(u) - 1.0
    ranks = np.arange(1, v.size + 1)
    feasible = np.flatnonzero(u - cumulative / ranks > 0.0)
    pivot = feasible[-1]
    theta = cumulative[pivot] / (pivot + 1.0)
    return np.maximum(v - theta, 0.0)


def project_simplex(v) -> WeightVector:
    """Closest point of the unit simplex to ``v`` in Euclidean distance."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ParameterError("project_simplex expects a non-empty vector")
    return WeightVector(_project(v))


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings of the projected-gradient search."""

    tol_vr: float = 1e-6
    max_iter: int = 5000
    n_starts: int = 10
    seed: int = 0
    kkt_tol: float = 1e-5

    def __post_init__(self):
        if not self.tol_vr > 0.0:
            raise ParameterError(f"tol_vr must be positive, got {self.tol_vr}")
        if self.max_iter < 1:
            raise ParameterError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.n_starts < 0:
            raise ParameterError(f"n_starts must be >= 0, got {self.n_starts}")
        if not self.kkt_tol > 0.0:
            raise ParameterError(
                f"kkt_tol must be positive, got {self.kkt_tol}")


@dataclass
class OptimizationResult:
    """Outcome of a variety-ratio maximization."""

    weights: WeightVector
    variety_ratio: float
    iterations: int
    kkt_residual: float


def _log_vr(w: np.ndarray, cov: CovarianceInput) -> float:
    lin = float(w @ cov.vols)
    quad = float(w @ cov.sigma @ w)
    if lin <= 0.0 or quad <= 0.0:
        raise DegenerateDataError(
            "variety ratio undefined: non-positive volatility or variance")
    return math.log(lin) - 0.5 * math.log(quad)


def _log_vr_grad(w: np.ndarray, cov: CovarianceInput) -> np.ndarray:
    lin = float(w @ cov.vols)
    sig_w = cov.sigma @ w
    quad = float(w @ sig_w)
    return cov.vols / lin - sig_w / quad


def _ascend(start: np.ndarray, cov: CovarianceInput,
            cfg: OptimizerConfig) -> tuple[np.ndarray, int]:
    """Projected gradient ascent with backtracking on the log variety ratio."""
    w = start.copy()
    value = _log_vr(w, cov)
    step = 1.0
    iterations = 0
    for _ in range(cfg.max_iter):
        iterations += 1
        grad = _log_vr_grad(w, cov)
        improved = False
        trial_step = step
        for _ in range(60):
            candidate = _project(w + trial_step * grad)
            move = candidate - w
            gain = float(grad @ move)
            if gain <= 0.0:
                break
            cand_value = _log_vr(candidate, cov)
            if cand_value >= value + 1e-4 * gain:
                improved = True
                break
            trial_step *= 0.5
        if not improved:
            break
        step = min(trial_step * 2.0, 1e6)
        delta = cand_value - value
        w, value = candidate, cand_value
        if delta < cfg.tol_vr * max(abs(value), 1.0) and \
                np.abs(move).max() < cfg.tol_vr:
            break
    return w, iterations


def _kkt_residual(w: np.ndarray, cov: CovarianceInput) -> float:
    """Fixed-point defect of the projected-gradient map at ``w``."""
    grad = _log_vr_grad(w, cov)
    return float(np.abs(_project(w + grad) - w).max())


def _polish_simplex_qp(z: np.ndarray, corr: np.ndarray) -> np.ndarray:
    """Active-set refinement of ``min z' R z`` on the simplex.

    Gradient methods crawl on the nearly flat faces a spiked correlation
    matrix produces, so the iterate they hand over can still carry a
    noticeable stationarity defect.  Starting from that iterate's support,
    solve the equality-constrained problem on the working support exactly
    (``R_SS z_S`` proportional to ones), drop coordinates the solve turns
    negative, and add off-support coordinates whose gradient undercuts the
    multiplier.  Each accepted solve is an exact KKT candidate, so the walk
    normally settles in a few steps; if it does not (degenerate faces can
    cycle), the best feasible point seen is returned and the caller's
    stationarity check keeps its say.
    """
    m = corr.shape[0]
    support = z > 0.0
    if not support.any():
        return z
    best, best_val = z, float(z @ corr @ z)
    for _ in range(4 * m + 16):
        idx = np.flatnonzero(support)
        try:
            raw = np.linalg.solve(corr[np.ix_(idx, idx)], np.ones(idx.size))
        except np.linalg.LinAlgError:
            return best
        total = raw.sum()
        if total <= 0.0:
            return best
        z_sub = raw / total
        if np.any(z_sub <= 0.0):
            support[idx[np.argmin(z_sub)]] = False
            if not support.any():
                return best
            continue
        candidate = np.zeros(m)
        candidate[idx] = z_sub
        value = float(candidate @ corr @ candidate)
        if value < best_val:
            best, best_val = candidate, value
        gradient = 2.0 * (corr @ candidate)
        multiplier = 2.0 * value
        outside = np.flatnonzero(~support)
        if outside.size == 0:
            return candidate
        slack = gradient[outside] - multiplier
        worst = np.argmin(slack)
        if slack[worst] >= -1e-12 * max(multiplier, 1.0):
            return candidate
        support[outside[worst]] = True
    return best


def min_variance_variety_weights(cov) -> WeightVector:
    """Cross-check solver via long-only minimum variance on correlations.

    The variety ratio is scale invariant in the weights, so maximizing it on
    the simplex is equivalent to minimizing ``z' R z`` over the simplex in
    risk-unit coordinates ``z_i = w_i s_i / (w . s)`` where ``R`` is the
    correlation matrix, then mapping back through ``w_i = z_i / s_i`` and
    renormalizing.  The inner problem is a convex QP solved by accelerated
    projected gradient with an exact Lipschitz step, then finished by an
    exact active-set polish.
    """
    cov = _as_cov(cov)
    corr = cov.sigma / np.outer(cov.vols, cov.vols)
    m = corr.shape[0]
    lipschitz = 2.0 * float(np.linalg.eigvalsh(0.5 * (corr + corr.T)).max())
    if lipschitz <= 0.0:
        raise DegenerateDataError("correlation matrix has no positive mass")
    step = 1.0 / lipschitz

    def objective(point):
        return float(point @ corr @ point)

    z = np.full(m, 1.0 / m)
    momentum = z.copy()
    t_prev = 1.0
    for sweep in range(20000):
        z_next = _project(momentum - step * 2.0 * (corr @ momentum))
        if objective(z_next) > objective(z):
            # momentum overshot; restart acceleration from the last iterate
            momentum, t_prev = z.copy(), 1.0
            z_next = _project(z - step * 2.0 * (corr @ z))
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_prev * t_prev))
        momentum = z_next + ((t_prev - 1.0) / t_next) * (z_next - z)
        z, t_prev = z_next, t_next
        if sweep % 20 == 0:
            fixed_point = _project(z - step * 2.0 * (corr @ z)) - z
            if float(np.abs(fixed_point).max()) < 1e-13:
                break
    z = _polish_simplex_qp(z, corr)
    w = z / cov.vols
    total = w.sum()
    if total <= 0.0:
        raise DegenerateDataError("reformulated solution left the simplex")
    return WeightVector(w / total)


def optimize_variety(cov, config: OptimizerConfig | None = None) -> OptimizationResult:
    """Maximize the variety ratio over the simplex; full diagnostics."""
    cov = _as_cov(cov)
    cfg = config or OptimizerConfig()
    m = cov.sigma.shape[0]
    rng = np.random.default_rng(cfg.seed)

    starts = [np.full(m, 1.0 / m)]
    for _ in range(cfg.n_starts):
        starts.append(rng.dirichlet(np.ones(m)))

    best_w = None
    best_value = -np.inf
    total_iterations = 0
    for start in starts:
        w, used = _ascend(start, cov, cfg)
        total_iterations += used
        value = variety_ratio(w, cov)
        if value > best_value:
            best_w, best_value = w, value

    check = min_variance_variety_weights(cov)
    check_value = variety_ratio(check, cov)
    if check_value > best_value:
        best_w, best_value = check.weights, check_value

    residual = _kkt_residual(best_w, cov)
    if residual > cfg.kkt_tol:
        # one tighter polishing pass before giving up
        polish = replace(cfg, tol_vr=cfg.tol_vr * 1e-4)
        best_w, extra = _ascend(best_w, cov, polish)
        total_iterations += extra
        best_value = variety_ratio(best_w, cov)
        residual = _kkt_residual(best_w, cov)
    if residual > cfg.kkt_tol:
        raise ConvergenceError(
            f"optimizer stopped with first-order residual {residual:.3e} "
            f"above tolerance {cfg.kkt_tol:.1e}",
            residual=residual, iterate=best_w)
    weights = WeightVector(_project(best_w))
    weights.validate()
    return OptimizationResult(weights=weights, variety_ratio=best_value,
                              iterations=total_iterations,
                              kkt_residual=residual)


def maximize_variety(cov, config: OptimizerConfig | None = None) -> WeightVector:
    """Long-only weights with the highest variety ratio."""
    return optimize_variety(cov, config).weights


def _lattice_blocks(m: int, ticks: int):
    """Yield integer composition blocks of ``ticks`` into ``m`` parts."""
    if m == 1:
        yield np.array([[ticks]])
        return
    if m == 2:
        first = np.arange(ticks + 1)
        yield np.column_stack([first, ticks - first])
        return
    if m == 3:
        for first in range(ticks + 1):
            second = np.arange(ticks - first + 1)
            block = np.column_stack([
                np.full(second.size, first), second, ticks - first - second])
            yield block
        return
    for first in range(ticks + 1):
        for second in range(ticks - first + 1):
            third = np.arange(ticks - first - second + 1)
            yield np.column_stack([
                np.full(third.size, first), np.full(third.size, second),
                third, ticks - first - second - third])


def brute_force_vr(cov, step: float) -> WeightVector:
    """Best simplex lattice point at the given spacing; small m only."""
    cov = _as_cov(cov)
    m = cov.sigma.shape[0]
    if m > 4:
        raise ParameterError(
            f"exhaustive search supports at most 4 assets, got {m}")
    if not 0.0 < step <= 1.0:
        raise ParameterError(f"step must lie in (0, 1], got {step}")
    ticks = round(1.0 / step)
    n_points = math.comb(ticks + m - 1, m - 1)
    if n_points > 20_000_000:
        raise ParameterError(
            f"grid of {n_points} points is too large; coarsen the step")

    best_w = None
    best_value = -np.inf
    for block in _lattice_blocks(m, ticks):
        grid = block.astype(float) / ticks
        lin = grid @ cov.vols
        quad = np.einsum("ij,jk,ik->i", grid, cov.sigma, grid)
        valid = quad > 0.0
        if not np.any(valid):
            continue
        ratios = np.where(valid, lin / np.sqrt(np.where(valid, quad, 1.0)),
                          -np.inf)
        top = int(np.argmax(ratios))
        if ratios[top] > best_value:
            best_value = float(ratios[top])
            best_w = grid[top].copy()
    if best_w is None:
        raise DegenerateDataError("no lattice point had positive variance")
    return WeightVector(best_w)
