"""Teacher-to-student layer mappings: Skip, Last, and EMD via exact transport."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autograd import Tensor
from .losses import InterLossKind, Projection, inter_loss

STRATEGIES = ("Skip", "Last", "EMD")


@dataclass
class MappingMatrix:
    """``weights[i, j]`` links teacher layer ``i + 1`` to student layer ``j + 1``."""
    weights: np.ndarray
    strategy: str

    def pairs(self) -> list[tuple[int, int]]:
        """1-based ``(teacher, student)`` pairs with nonzero weight."""
        ii, jj = np.nonzero(self.weights)
        return [(int(i) + 1, int(j) + 1) for i, j in zip(ii, jj)]


def build_mapping(strategy: str, m: int, n: int) -> MappingMatrix:
    """One-to-one mapping of ``n`` student layers onto ``m`` teacher layers.

    Skip: student layer ``s`` reads teacher layer ``s * (m // n)``.
    Last: student layer ``s`` reads teacher layer ``s + m - n``.
    """
    if n < 1 or m < 1:
        raise ValueError("layer counts must be positive")
    if n > m:
        raise ValueError(f"student has more layers ({n}) than teacher ({m})")
    w = np.zeros((m, n))
    for s in range(1, n + 1):
        if strategy == "Skip":
            t = s * (m // n)
        elif strategy == "Last":
            t = s + m - n
        else:
            raise ValueError(f"build_mapping handles Skip and Last, not {strategy!r}")
        w[t - 1, s - 1] = 1.0
    return MappingMatrix(w, strategy)


@dataclass
class FlowProblem:
    cost: np.ndarray
    supplies: np.ndarray
    demands: np.ndarray

    def __post_init__(self):
        self.cost = np.asarray(self.cost, dtype=np.float64)
        self.supplies = np.asarray(self.supplies, dtype=np.float64)
        self.demands = np.asarray(self.demands, dtype=np.float64)
        m, n = self.cost.shape
        if self.supplies.shape != (m,) or self.demands.shape != (n,):
            raise ValueError("supplies/demands do not match the cost matrix")
        if not np.all(np.isfinite(self.cost)):
            raise ValueError("costs must be finite")
        if np.any(self.supplies <= 0) or np.any(self.demands <= 0):
            raise ValueError("supplies and demands must be positive")
        if abs(self.supplies.sum() - self.demands.sum()) > 1e-12:
            raise ValueError("unbalanced transport problem")


@dataclass
class TransportSolution:
    flow: np.ndarray
    objective: float
    u: np.ndarray   # supply-side duals
    v: np.ndarray   # demand-side duals; u_i + v_j <= cost_ij, tight where flow > 0


def _potentials(cost: np.ndarray, flow: np.ndarray, tol: float) -> np.ndarray:
    # Bellman-Ford from a virtual root over the residual graph; nodes 0..m-1 supply, m.. demand
    m, n = cost.shape
    dist = np.zeros(m + n)
    for _ in range(m + n + 1):
        changed = False
        cand = dist[:m, None] + cost                      # i -> j, unbounded capacity
        best = cand.min(axis=0)
        upd = best < dist[m:] - 1e-15
        if upd.any():
            dist[m:] = np.where(upd, best, dist[m:])
            changed = True
        back = np.where(flow > tol, dist[m:][None, :] - cost, np.inf)  # j -> i where flow > 0
        bestb = back.min(axis=1)
        updb = bestb < dist[:m] - 1e-15
        if updb.any():
            dist[:m] = np.where(updb, bestb, dist[:m])
            changed = True
        if not changed:
            break
    return dist


def solve_transport_full(p: FlowProblem) -> TransportSolution:
    """Successive shortest paths on the bipartite residual graph.

    Every augmentation exhausts a supply, a demand or a reverse arc, and the
    residual graph never holds a negative cycle, so the result is optimal.
    """
    cost = p.cost
    m, n = cost.shape
    scale = max(p.supplies.sum(), 1.0)
    tol = 1e-14 * scale
    supply = p.supplies.copy()
    demand = p.demands.copy()
    flow = np.zeros((m, n))
    for _ in range(4 * (m + n) * (m * n + 1)):
        active = supply > tol
        if not active.any():
            break
        # label-correcting shortest paths from every supply node that still has mass
        dist = np.where(active, 0.0, np.inf)
        dist_d = np.full(n, np.inf)
        pred_d = np.full(n, -1)           # supply node feeding demand j
        pred_s = np.full(m, -1)           # demand node feeding supply i through a reverse arc
        for _ in range(m + n + 1):
            cand = dist[:, None] + cost
            arg = cand.argmin(axis=0)
            best = cand[arg, np.arange(n)]
            upd = best < dist_d - 1e-15
            dist_d = np.where(upd, best, dist_d)
            pred_d = np.where(upd, arg, pred_d)
            back = np.where(flow > tol, dist_d[None, :] - cost, np.inf)
            argb = back.argmin(axis=1)
            bestb = back[np.arange(m), argb]
            updb = bestb < dist - 1e-15
            dist = np.where(updb, bestb, dist)
            pred_s = np.where(updb, argb, pred_s)
            if not upd.any() and not updb.any():
                break
        open_d = np.where(demand > tol, dist_d, np.inf)
        j = int(np.argmin(open_d))
        if not np.isfinite(open_d[j]):
            raise RuntimeError("transport solver found no augmenting path")
        # walk back to a root supply node, collecting the bottleneck
        path = []
        delta = demand[j]
        jj = j
        while True:
            i = int(pred_d[jj])
            path.append((i, jj, +1))
            if pred_s[i] < 0:
                delta = min(delta, supply[i])
                break
            jprev = int(pred_s[i])
            path.append((i, jprev, -1))
            delta = min(delta, flow[i, jprev])
            jj = jprev
            if len(path) > 2 * (m + n):
                raise RuntimeError("transport solver path reconstruction looped")
        for i, jx, sign in path:
            flow[i, jx] += sign * delta
        supply[i] -= delta
        demand[j] -= delta
        flow[np.abs(flow) < tol] = 0.0
        supply[supply < tol] = 0.0
        demand[demand < tol] = 0.0
    else:
        raise RuntimeError("transport solver did not converge")
    dist = _potentials(cost, flow, tol)
    u, v = -dist[:m], dist[m:]
    return TransportSolution(flow, float((flow * cost).sum()), u, v)


def solve_transport(p: FlowProblem) -> np.ndarray:
    """Minimum-cost flow matrix for a balanced transportation problem."""
    return solve_transport_full(p).flow


def emd_loss(hs: Sequence[Tensor], ht: Sequence[Tensor], kind: InterLossKind,
             projections: Sequence[Projection], critics: dict | None = None,
             mask: np.ndarray | None = None) -> tuple[Tensor, MappingMatrix]:
    """Many-to-many intermediate loss weighted by the optimal transport flow.

    Costs ``d[i, j] = inter_loss(student layer j, teacher layer i)``; uniform
    marginals ``1/M`` and ``1/N``. The flow is treated as a constant, so
    gradients reach the student only through the costs.
    """
    m, n = len(ht), len(hs)
    if len(projections) != n:
        raise ValueError("need one projection per student layer")
    if kind.kind == "MI_alpha" and critics is None:
        raise ValueError("MI_alpha costs need a critic for every layer pair")
    d = [[inter_loss(kind, hs[j], ht[i], projections[j],
                     None if critics is None else critics[(i, j)], mask)
          for j in range(n)] for i in range(m)]
    cost = np.array([[x.item() for x in row] for row in d])
    flow = solve_transport(FlowProblem(cost, np.full(m, 1.0 / m), np.full(n, 1.0 / n)))
    total = flow.sum()
    loss = None
    for i in range(m):
        for j in range(n):
            if flow[i, j] > 0:
                term = d[i][j] * (flow[i, j] / total)
                loss = term if loss is None else loss + term
    return loss, MappingMatrix(flow, "EMD")
