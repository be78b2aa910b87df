"""Exact t-SNE for desk-scale diagnostic maps (O(n^2) memory and time)."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError, NonFiniteError

# search range for log(beta) after per-row distance normalisation
_LOG_BETA_RANGE = (-50.0, 50.0)


@dataclass(frozen=True)
class TsneConfig:
    dim: int = 2
    perplexity: float = 30.0
    iterations: int = 1000
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    learning_rate: float = 200.0
    momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch: int = 250
    min_gain: float = 0.01
    tol: float = 1e-5
    max_bisect: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.iterations < 1 or self.perplexity <= 0:
            raise ConfigError("t-SNE needs dim >= 1, iterations >= 1 and a positive perplexity")
        if self.learning_rate <= 0 or self.max_bisect < 1 or self.tol <= 0:
            raise ConfigError("invalid t-SNE optimiser settings")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Embedding2D:
    points: np.ndarray
    kl: float
    kl_trace: list[float] = field(default_factory=list)


def _sq_distances(X: np.ndarray) -> np.ndarray:
    sq = (X * X).sum(axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.fill_diagonal(D, 0.0)
    return np.maximum(D, 0.0)


def _row_entropy(d: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    p = np.exp(-beta * d)
    total = p.sum()
    p /= total
    return float(np.log(total) + beta * (d * p).sum()), p


def conditional_probabilities(X, perplexity: float, tol: float = 1e-5, max_steps: int = 50) -> np.ndarray:
    """Row-stochastic ``p_{j|i}`` with each row's perplexity matched by bisection on log(beta)."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least two points")
    D = _sq_distances(X)
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        d = np.delete(D[i], i)
        d = d - d.min()
        scale = d[d > 0].mean() if np.any(d > 0) else 1.0
        d = d / scale
        ties = int(np.sum(d == 0))
        # entropy spans [log(ties), log(n - 1)] as beta goes from infinity to 0
        if not np.log(ties) - tol <= target <= np.log(n - 1) + tol:
            raise ValueError(
                f"perplexity {perplexity} is unreachable for row {i} "
                f"({ties} equidistant nearest neighbours among {n - 1})"
            )
        lo, hi = _LOG_BETA_RANGE
        for _ in range(max_steps):
            mid = 0.5 * (lo + hi)
            h, p = _row_entropy(d, np.exp(mid))
            if abs(h - target) < tol:
                break
            if h > target:
                lo = mid
            else:
                hi = mid
        P[i] = np.insert(p, i, 0.0)
    return P


def joint_probabilities(X, perplexity: float, tol: float = 1e-5, max_steps: int = 50) -> np.ndarray:
    """Symmetrised ``p_ij = (p_{j|i} + p_{i|j}) / 2n``."""
    P = conditional_probabilities(X, perplexity, tol, max_steps)
    return (P + P.T) / (2.0 * P.shape[0])


def student_t_affinities(Y) -> tuple[np.ndarray, np.ndarray]:
    """``(Q, num)`` where ``num_ij = 1 / (1 + |y_i - y_j|^2)`` with a zero diagonal."""
    num = 1.0 / (1.0 + _sq_distances(np.asarray(Y, dtype=np.float64)))
    np.fill_diagonal(num, 0.0)
    return num / num.sum(), num


def kl_divergence(P: np.ndarray, Q: np.ndarray) -> float:
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def tsne(X, cfg: TsneConfig = TsneConfig()) -> Embedding2D:
    """Embed the rows of ``X``; the KL trace uses the unexaggerated ``P`` at every iteration."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise NonFiniteError("t-SNE input must be a finite matrix")
    n = X.shape[0]
    if n < 3 * cfg.perplexity + 1:
        raise ValueError(f"{n} rows is too few for perplexity {cfg.perplexity}; need at least {3 * cfg.perplexity + 1:g}")
    P = np.maximum(joint_probabilities(X, cfg.perplexity, cfg.tol, cfg.max_bisect), 1e-300)
    np.fill_diagonal(P, 0.0)

    rng = np.random.default_rng(cfg.seed)
    Y = 1e-4 * rng.standard_normal((n, cfg.dim))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    trace = [kl_divergence(P, student_t_affinities(Y)[0])]
    for it in range(cfg.iterations):
        exag = cfg.exaggeration if it < cfg.exaggeration_iters else 1.0
        momentum = cfg.momentum if it < cfg.momentum_switch else cfg.final_momentum
        Q, num = student_t_affinities(Y)
        W = (exag * P - Q) * num
        grad = 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)
        same = np.sign(grad) == np.sign(update)
        gains = np.maximum(np.where(same, gains * 0.8, gains + 0.2), cfg.min_gain)
        update = momentum * update - cfg.learning_rate * gains * grad
        Y = Y + update
        Y -= Y.mean(axis=0)
        trace.append(kl_divergence(P, student_t_affinities(Y)[0]))
    if not np.all(np.isfinite(Y)):
        raise NonFiniteError("t-SNE diverged")
    return Embedding2D(Y, trace[-1], trace)


def nearest_neighbour_purity(Y, labels) -> float:
    """Fraction of points whose nearest other point carries the same label."""
    D = _sq_distances(np.asarray(Y, dtype=np.float64))
    np.fill_diagonal(D, np.inf)
    labels = np.asarray(labels)
    return float(np.mean(labels[D.argmin(axis=1)] == labels))
