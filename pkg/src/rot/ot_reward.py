"""Optimal-transport trajectory rewards.

Cost matrices between behavior and expert feature trajectories, a log-domain
Sinkhorn solver for the entropic problem with uniform marginals, and the
per-step reward read off the resulting coupling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

COST_KINDS = ("cosine", "squared-euclidean")
_ZERO_NORM = 1e-12
_WARM_SWEEPS = 5
_PLAIN_SWEEPS = 50


class NumericalOverflowError(FloatingPointError):
    """Raised when Sinkhorn potentials stop being finite."""


@dataclass(frozen=True)
class OTConfig:
    epsilon: float = 0.01
    max_iterations: int = 500
    marginal_tolerance: float = 1e-6
    reward_scale: float = 10.0
    cost_kind: str = "cosine"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.marginal_tolerance > 0:
            raise ValueError(f"marginal_tolerance must be > 0, got {self.marginal_tolerance}")
        if not self.reward_scale > 0:
            raise ValueError(f"reward_scale must be > 0, got {self.reward_scale}")
        if self.cost_kind not in COST_KINDS:
            raise ValueError(f"cost_kind must be one of {COST_KINDS}, got {self.cost_kind!r}")


@dataclass
class Coupling:
    """Transport plan between a behavior (rows) and expert (columns) trajectory."""

    weights: np.ndarray
    converged: bool = True
    iterations: int = 0
    marginal_error: float = 0.0

    @property
    def shape(self):
        return self.weights.shape


class DemoMatch(NamedTuple):
    rewards: np.ndarray
    index: int
    distance: float
    converged: bool


def as_trajectory(features) -> np.ndarray:
    """Validate a (T, d) feature trajectory and return it as a float array."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError(f"trajectory must have shape (T>=1, d>=1), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("trajectory contains non-finite entries")
    return x


def cosine_cost(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    small_x, small_y = nx < _ZERO_NORM, ny < _ZERO_NORM
    if small_x and small_y:
        return 0.0
    if small_x or small_y:
        return 1.0
    return float(np.clip(1.0 - x @ y / (nx * ny), 0.0, 2.0))


def cost_matrix(traj_b, traj_e, cost_kind: str = "cosine") -> np.ndarray:
    """Pairwise cost between every behavior step (rows) and expert step (columns)."""
    b = as_trajectory(traj_b)
    e = as_trajectory(traj_e)
    if b.shape[1] != e.shape[1]:
        raise ValueError(f"feature dimension mismatch: {b.shape[1]} vs {e.shape[1]}")
    if cost_kind == "cosine":
        nb = np.linalg.norm(b, axis=1)
        ne = np.linalg.norm(e, axis=1)
        zb, ze = nb < _ZERO_NORM, ne < _ZERO_NORM
        bn = b / np.where(zb, 1.0, nb)[:, None]
        en = e / np.where(ze, 1.0, ne)[:, None]
        C = np.clip(1.0 - bn @ en.T, 0.0, 2.0)
        # zero-norm rows/columns: 1 against a nonzero vector, 0 against another zero
        C[zb, :] = 1.0
        C[:, ze] = 1.0
        C[np.ix_(zb, ze)] = 0.0
        return C
    if cost_kind == "squared-euclidean":
        d = b[:, None, :] - e[None, :, :]
        return np.einsum("ijk,ijk->ij", d, d)
    raise ValueError(f"unknown cost_kind {cost_kind!r}")


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    out = np.log(np.exp(a - m).sum(axis=axis, keepdims=True)) + m
    return out.squeeze(axis)


def _row_potential(g, C, log_a, eps):
    return eps * (log_a - _logsumexp((g[None, :] - C) / eps, axis=1))


def _col_potential(f, C, log_b, eps):
    return eps * (log_b - _logsumexp((f[:, None] - C) / eps, axis=0))


def _plan(f, g, C, eps):
    return np.exp((f[:, None] + g[None, :] - C) / eps)


def _check_finite(*arrays, where):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalOverflowError(f"Sinkhorn produced non-finite values ({where})")


def sinkhorn(C, cfg: OTConfig = OTConfig()) -> Coupling:
    """Entropic OT between uniform marginals, solved on log-domain dual potentials.

    Three phases share the ``max_iterations`` budget: a short epsilon-scaling
    warm start, plain Sinkhorn sweeps at the target epsilon, then Newton steps
    on the column potentials (rows kept exact) for the badly conditioned
    near-permutation regime that plain sweeps crawl through at small epsilon.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or min(C.shape) < 1:
        raise ValueError(f"cost matrix must be 2-D and non-empty, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix contains non-finite entries")
    n, m = C.shape
    eps = cfg.epsilon
    tol = cfg.marginal_tolerance
    log_a = np.full(n, -np.log(n))
    log_b = np.full(m, -np.log(m))
    a, b = 1.0 / n, 1.0 / m
    budget = cfg.max_iterations
    it = 0

    g = np.zeros(m)
    stage_eps = max(float(C.max() - C.min()), eps)
    while stage_eps > eps and it < budget // 4:
        for _ in range(_WARM_SWEEPS):
            f = _row_potential(g, C, log_a, stage_eps)
            g = _col_potential(f, C, log_b, stage_eps)
        it += 1
        stage_eps = max(stage_eps * 0.5, eps)
    _check_finite(g, where="warm start")

    def column_residual(g):
        f = _row_potential(g, C, log_a, eps)
        P = _plan(f, g, C, eps)
        return f, P, P.sum(axis=0) - b

    f, P, r = column_residual(g)
    err = np.abs(r).max()
    sweeps = 0
    while err > tol and it < budget and sweeps < _PLAIN_SWEEPS:
        g = _col_potential(f, C, log_b, eps)
        f, P, r = column_residual(g)
        _check_finite(f, g, where=f"sweep {it}")
        err = np.abs(r).max()
        it += 1
        sweeps += 1

    def semi_dual(f, g):
        # concave in g once f is re-projected; gradient -r, Hessian -J
        return a * f.sum() + b * g.sum()

    # Levenberg-damped Newton: (J + mu I) step = -r is always an ascent direction
    # of the semi-dual, so a rejected step only raises mu toward a gradient step
    mu = 0.0
    while err > tol and it < budget and m > 1:
        # Jacobian of column sums w.r.t. g with rows re-projected; g[0] pinned (gauge)
        J = (np.diag(P.sum(axis=0)) - P.T @ (P / a)) / eps
        H = J[1:, 1:]
        scale = float(np.abs(np.diag(H)).mean()) or 1.0
        value = semi_dual(f, g)
        accepted = False
        for _ in range(60):
            step = np.zeros(m)
            try:
                step[1:] = np.linalg.solve(H + mu * np.eye(m - 1), -r[1:])
            except np.linalg.LinAlgError:
                step[1:] = np.linalg.lstsq(H + mu * np.eye(m - 1), -r[1:], rcond=None)[0]
            slope = float(-r @ step)
            trial = column_residual(g + step)
            if np.all(np.isfinite(trial[0])) and slope > 0 and \
                    semi_dual(trial[0], g + step) >= value + 1e-4 * slope:
                g = g + step
                f, P, r = trial
                mu = mu / 4 if mu > 1e-12 * scale else 0.0
                accepted = True
                break
            mu = max(4 * mu, 1e-6 * scale)
        if not accepted:
            g = _col_potential(f, C, log_b, eps)
            f, P, r = column_residual(g)
        _check_finite(f, g, where=f"newton step {it}")
        err = np.abs(r).max()
        it += 1

    _check_finite(P, where="coupling")
    err = max(err, np.abs(P.sum(axis=1) - a).max())
    return Coupling(P, converged=bool(err <= tol), iterations=it, marginal_error=float(err))


def _weights(mu) -> np.ndarray:
    return mu.weights if isinstance(mu, Coupling) else np.asarray(mu, dtype=np.float64)


def ot_rewards(C, mu, cfg: OTConfig = OTConfig()) -> np.ndarray:
    C = np.asarray(C, dtype=np.float64)
    w = _weights(mu)
    if C.shape != w.shape:
        raise ValueError(f"shape mismatch: cost {C.shape} vs coupling {w.shape}")
    return -cfg.reward_scale * (C * w).sum(axis=1)


def wasserstein_distance(C, mu) -> float:
    C = np.asarray(C, dtype=np.float64)
    w = _weights(mu)
    if C.shape != w.shape:
        raise ValueError(f"shape mismatch: cost {C.shape} vs coupling {w.shape}")
    return float((C * w).sum())


def score_against_demos(traj_b, demos: Sequence, cfg: OTConfig = OTConfig()) -> DemoMatch:
    """Reward a behavior trajectory against whichever demo it is closest to in OT distance."""
    if len(demos) == 0:
        raise ValueError("at least one demonstration is required")
    best = None
    for i, demo in enumerate(demos):
        C = cost_matrix(traj_b, demo, cfg.cost_kind)
        mu = sinkhorn(C, cfg)
        dist = wasserstein_distance(C, mu)
        if best is None or dist < best[0]:
            best = (dist, i, C, mu)
    dist, i, C, mu = best
    return DemoMatch(ot_rewards(C, mu, cfg), i, dist, mu.converged)
