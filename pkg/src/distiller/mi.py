"""Variational lower bounds on mutual information and trainable critics.

All quantities are in nats. Score matrices follow the convention
``scores[i, j] = f(x_i, y_j)``: the diagonal holds the aligned (joint) pairs and
every off-diagonal entry is a pair drawn from the product of marginals.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .nn import Adam, EncoderStack, Linear, Module, rng_stream

CRITIC_KINDS = ("neg_mse", "neg_l2", "neg_pkd", "cos_minus_1")
NORM_EPS = 1e-12


@dataclass
class ScoreMatrix:
    scores: np.ndarray          # (B, B), scores[i, j] = f(x_i, y_j)
    log_baseline: np.ndarray    # (B,), log q(y_j)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.log_baseline = np.asarray(self.log_baseline, dtype=np.float64)
        b = self.scores.shape[0]
        if self.scores.shape != (b, b) or b < 2:
            raise ValueError("scores must be a square matrix with at least 2 rows")
        if self.log_baseline.shape != (b,):
            raise ValueError("log_baseline must have one entry per column")


def _offdiag_log_mean_exp(z: Tensor) -> Tensor:
    b = z.shape[0]
    off = ag.where(~np.eye(b, dtype=bool), z, -np.inf)
    return ag.logsumexp(off.reshape(-1), axis=0) - math.log(b * (b - 1))


def interpolated_bound(scores: Tensor, log_q: Tensor, alpha: float) -> Tensor:
    """Differentiable multisample interpolated bound.

    With ``m_j`` the column mean of ``exp(scores)`` (positive included) and
    ``d_j = alpha * m_j + (1 - alpha) * q_j``::

        mean_i[s_ii - log d_i] - mean_{i != j}[exp(s_ij) / d_j] + 1

    Everything is evaluated in log space, so finite scores never overflow.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    scores, log_q = ag.as_tensor(scores), ag.as_tensor(log_q)
    b = scores.shape[0]
    log_m = ag.logsumexp(scores, axis=0) - math.log(b)
    if alpha == 0.0:
        log_d = log_q
    elif alpha == 1.0:
        log_d = log_m
    else:
        log_d = ag.logsumexp(ag.stack([log_m + math.log(alpha), log_q + math.log1p(-alpha)],
                                      axis=0), axis=0)
    diag = scores[np.arange(b), np.arange(b)]
    joint = (diag - log_d).mean()
    marginal = ag.exp(_offdiag_log_mean_exp(scores - log_d.reshape(1, b)))
    return joint - marginal + 1.0


def mi_alpha_bound(sm: ScoreMatrix, alpha: float) -> float:
    """Interpolated MI lower bound for a fixed score matrix, in nats."""
    if not np.all(np.isfinite(sm.scores)):
        raise ValueError("scores must be finite")
    return interpolated_bound(Tensor(sm.scores), Tensor(sm.log_baseline), alpha).item()


def tuba_bound(scores: np.ndarray, log_a: np.ndarray | float = 0.0) -> float:
    """TUBA with baseline ``a(y_j) = exp(log_a[j])``, joint on the diagonal, product off it."""
    scores = np.asarray(scores, dtype=np.float64)
    b = scores.shape[0]
    log_a = np.broadcast_to(np.asarray(log_a, dtype=np.float64), (b,))
    joint = float(np.mean(np.diag(scores) - log_a))
    ratios = np.exp(scores - log_a[None, :])
    off = ~np.eye(b, dtype=bool)
    return joint - float(ratios[off].mean()) + 1.0


def tuba_from_samples(joint_scores, product_scores, log_a_joint=0.0, log_a_product=0.0) -> float:
    """TUBA from explicit critic values on joint samples and on product samples."""
    joint = np.mean(np.asarray(joint_scores, float) - log_a_joint)
    prod = np.mean(np.exp(np.asarray(product_scores, float) - log_a_product))
    return float(joint - prod + 1.0)


def plugin_scores(x: np.ndarray, y: np.ndarray, critic_kind: str) -> np.ndarray:
    """``f(x_i, y_j)`` for one of the fixed critics that turn a distillation loss into a bound."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if critic_kind == "neg_mse":
        return -((x[:, None, :] - y[None, :, :]) ** 2).sum(-1)
    if critic_kind == "neg_l2":
        return -np.sqrt(((x[:, None, :] - y[None, :, :]) ** 2).sum(-1))
    xn = x / np.sqrt((x * x).sum(-1, keepdims=True) + NORM_EPS)
    yn = y / np.sqrt((y * y).sum(-1, keepdims=True) + NORM_EPS)
    if critic_kind == "neg_pkd":
        return -((xn[:, None, :] - yn[None, :, :]) ** 2).sum(-1)
    if critic_kind == "cos_minus_1":
        return xn @ yn.T - 1.0
    raise ValueError(f"unknown critic kind {critic_kind!r}; expected one of {CRITIC_KINDS}")


def tuba_plugin_bound(x: np.ndarray, y: np.ndarray, critic_kind: str) -> float:
    """TUBA with ``a(y) = 1`` and a fixed critic built from MSE, L2, PKD or cosine."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] < 2:
        raise ValueError("need a batch of at least 2 pairs")
    return tuba_bound(plugin_scores(x, y, critic_kind), 0.0)


def gaussian_mi_oracle(rho: float, d: int = 1) -> float:
    """MI of ``d`` independent coordinate pairs, each bivariate normal with correlation ``rho``."""
    if not abs(rho) < 1:
        raise ValueError("|rho| must be < 1")
    if d < 1:
        raise ValueError("d must be >= 1")
    return -0.5 * d * math.log1p(-rho * rho)


def gaussian_sampler(rho: float, d: int = 1, shuffle: bool = False):
    """Sampler ``(rng, n) -> (x, y)`` of correlated Gaussians; ``shuffle`` breaks the pairing."""
    scale = math.sqrt(1.0 - rho * rho)

    def sample(rng: np.random.Generator, n: int):
        x = rng.standard_normal((n, d))
        y = rho * x + scale * rng.standard_normal((n, d))
        if shuffle:
            y = y[rng.permutation(n)]
        return x, y

    return sample


def array_sampler(x: np.ndarray, y: np.ndarray):
    """Sampler drawing aligned minibatches (without replacement) from fixed arrays."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if len(x) != len(y):
        raise ValueError("x and y must hold the same number of samples")

    def sample(rng: np.random.Generator, n: int):
        idx = rng.choice(len(x), size=min(n, len(x)), replace=False)
        return x[idx], y[idx]

    return sample


# ------------------------------------------------------------------ critics

@dataclass(frozen=True)
class CriticSpec:
    n_layers: int = 2
    width: int = 8
    h_mid: int = 16
    n_heads: int = 2


class CriticPair(Module):
    """Scoring network ``f(x, y)`` and log-baseline network ``log q(y)``.

    ``f`` reads the pair as a two-token sequence (one token per argument, each
    with its own input projection and type embedding) through a small
    transformer encoder and pools to a scalar. ``log q`` runs ``y`` alone as a
    one-token sequence; its output layer starts at zero so ``q = 1`` initially.
    """

    def __init__(self, dim_x: int, dim_y: int, spec: CriticSpec = CriticSpec(), seed: int = 0):
        rng = rng_stream(seed, "critic-init")
        self.spec = spec
        self.dim_x, self.dim_y = dim_x, dim_y
        w = spec.width
        self.in_x = Linear(dim_x, w, rng)
        self.in_y = Linear(dim_y, w, rng)
        self.type_emb = Tensor(rng.normal(0.0, 0.1, size=(2, w)), requires_grad=True)
        self.f_stack = EncoderStack(spec.n_layers, w, spec.h_mid, spec.n_heads, rng)
        self.f_out = Linear(w, 1, rng)
        self.q_in = Linear(dim_y, w, rng)
        self.q_stack = EncoderStack(1, w, spec.h_mid, spec.n_heads, rng)
        self.q_out = Linear(w, 1, rng)
        self.q_out.weight.data[:] = 0.0

    def _check(self, x: Tensor, y: Tensor):
        if x.ndim != 2 or y.ndim != 2 or x.shape[1] != self.dim_x or y.shape[1] != self.dim_y:
            raise ValueError(f"critic expects (B, {self.dim_x}) and (B, {self.dim_y}) inputs, "
                             f"got {x.shape} and {y.shape}")
        if x.shape[0] != y.shape[0]:
            raise ValueError("x and y batches differ in size")

    def score_matrix(self, x, y) -> tuple[Tensor, Tensor]:
        """``(scores, log_q)`` with ``scores[i, j] = f(x_i, y_j)``."""
        x, y = ag.as_tensor(x), ag.as_tensor(y)
        self._check(x, y)
        b, w = x.shape[0], self.spec.width
        ex = self.in_x(x) + self.type_emb[0]
        ey = self.in_y(y) + self.type_emb[1]
        grid = np.zeros((b, b, w))
        tok_x = ex.reshape(b, 1, w) + grid
        tok_y = ey.reshape(1, b, w) + grid
        seq = ag.stack([tok_x, tok_y], axis=2).reshape(b * b, 2, w)
        h = self.f_stack(seq)[-1].mean(axis=1)
        scores = self.f_out(h).reshape(b, b)
        hq = self.q_stack(self.q_in(y).reshape(b, 1, w))[-1].reshape(b, w)
        log_q = self.q_out(hq).reshape(b)
        return scores, log_q

    def bound(self, x, y, alpha: float) -> Tensor:
        scores, log_q = self.score_matrix(x, y)
        return interpolated_bound(scores, log_q, alpha)


@dataclass
class MITrainResult:
    critic: CriticPair
    estimate: float
    history: list = field(default_factory=list)


def train_mi_alpha(sampler: Callable, alpha: float, steps: int, seed: int = 0, *,
                   batch_size: int = 128, dims: tuple[int, int] | None = None,
                   critic: CriticPair | None = None, spec: CriticSpec = CriticSpec(),
                   lr: float = 2e-3) -> MITrainResult:
    """Fit a critic pair by gradient ascent on the interpolated bound.

    ``sampler(rng, n)`` returns aligned ``(x, y)`` arrays. The estimate is the
    mean training-batch bound over the final 10% of steps; with ``steps == 0``
    it is the bound of the untrained critic on one batch.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    data_rng = rng_stream(seed, "data-order")
    if critic is None:
        if dims is None:
            x0, y0 = sampler(rng_stream(seed, "probe"), 2)
            dims = (x0.shape[1], y0.shape[1])
        critic = CriticPair(dims[0], dims[1], spec, seed=seed)
    if steps == 0:
        x, y = sampler(data_rng, batch_size)
        return MITrainResult(critic, critic.bound(x, y, alpha).item(), [])
    opt = Adam(critic.parameters(), lr=lr, clip=5.0)
    history = []
    for _ in range(steps):
        x, y = sampler(data_rng, batch_size)
        bound = critic.bound(x, y, alpha)
        opt.zero_grad()
        (-bound).backward()
        opt.step()
        history.append(bound.item())
    tail = max(1, int(math.ceil(0.1 * steps)))
    return MITrainResult(critic, float(np.mean(history[-tail:])), history)


def bound_variance(critic: CriticPair, sampler: Callable, alpha: float, n_batches: int = 20,
                   batch_size: int = 128, seed: int = 0) -> tuple[float, float]:
    """Mean and variance of the bound across ``n_batches`` seeded minibatches."""
    vals = []
    for k in range(n_batches):
        x, y = sampler(rng_stream(seed + k, "eval-batch"), batch_size)
        vals.append(critic.bound(x, y, alpha).item())
    return float(np.mean(vals)), float(np.var(vals, ddof=1))


# -------------------------------------------------------------------- bench

BENCH_COLUMNS = ("distribution", "rho", "d", "alpha", "batch", "seed", "estimate", "analytic_mi")


def mi_bench(rhos: Sequence[float], alphas: Sequence[float], *, d: int = 1, batch: int = 128,
             steps: int = 400, seeds: Sequence[int] = (0,)) -> list[dict]:
    """Train a critic for every (rho, alpha, seed) on correlated Gaussians."""
    rows = []
    for rho in rhos:
        for alpha in alphas:
            for seed in seeds:
                res = train_mi_alpha(gaussian_sampler(rho, d), alpha, steps, seed,
                                     batch_size=batch, dims=(d, d))
                rows.append({
                    "distribution": "gaussian", "rho": rho, "d": d, "alpha": alpha,
                    "batch": batch, "seed": seed, "estimate": round(res.estimate, 6),
                    "analytic_mi": round(gaussian_mi_oracle(rho, d), 6),
                })
    return rows


def bench_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow(r)
    return buf.getvalue()
