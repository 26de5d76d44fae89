"""Signed follower digraphs with leader pinning.

Conventions: ``adjacency[i, j] = a_ij`` is the weight of the edge from
follower j into follower i, and ``pinning[i, r] = g_ir`` couples leader r
into follower i.  Indices are zero-based throughout.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionError, ScenarioError, SynthesisError

EIG_TOL = 1e-9


@dataclass(frozen=True)
class SignedDigraph:
    adjacency: np.ndarray
    pinning: np.ndarray

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=float)
        g = np.array(self.pinning, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ScenarioError(f"adjacency must be square, got shape {a.shape}", "graph.adjacency")
        if g.ndim != 2 or g.shape[0] != a.shape[0] or g.shape[1] < 1:
            raise ScenarioError(
                f"pinning must be N x M with N={a.shape[0]} and M >= 1, got {g.shape}", "graph.pinning"
            )
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(g))):
            raise ScenarioError("weights must be finite", "graph")
        if np.any(np.diag(a) != 0):
            raise ScenarioError("self-loops are not allowed (a_ii must be 0)", "graph.adjacency")
        a.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "pinning", g)
        missing = unreachable_followers(a, g)
        if missing:
            raise AssumptionError(
                1, f"followers {missing} have no directed path from any leader"
            )

    @property
    def n_followers(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_leaders(self) -> int:
        return self.pinning.shape[1]

    def pinning_matrix(self, r: int) -> np.ndarray:
        """Signed diagonal pinning matrix of leader r."""
        return np.diag(self.pinning[:, r])


def unreachable_followers(adjacency, pinning) -> list[int]:
    n = adjacency.shape[0]
    seen = np.any(pinning != 0, axis=1)
    queue = deque(np.flatnonzero(seen))
    while queue:
        j = queue.popleft()
        for i in np.flatnonzero(adjacency[:, j]):
            if not seen[i]:
                seen[i] = True
                queue.append(i)
    return [int(i) for i in range(n) if not seen[i]]


@dataclass(frozen=True)
class GraphMatrices:
    in_degree: np.ndarray
    unsigned_laplacian: np.ndarray
    signed_laplacian: np.ndarray
    phi_unsigned: tuple
    phi_signed: tuple
    abs_adjacency: np.ndarray
    adjacency: np.ndarray
    pinning: np.ndarray

    @property
    def phi_sum(self) -> np.ndarray:
        return sum(self.phi_signed)

    def n_leaders(self) -> int:
        return len(self.phi_signed)


def build_matrices(g: SignedDigraph) -> GraphMatrices:
    a = g.adjacency
    abs_a = np.abs(a)
    d = np.diag(abs_a.sum(axis=1))
    lbar = d - abs_a
    ls = d - a
    m = g.n_leaders
    gbar = [np.diag(np.abs(g.pinning[:, r])) for r in range(m)]
    return GraphMatrices(
        in_degree=d,
        unsigned_laplacian=lbar,
        signed_laplacian=ls,
        phi_unsigned=tuple(lbar / m + gb for gb in gbar),
        phi_signed=tuple(ls / m + gb for gb in gbar),
        abs_adjacency=abs_a,
        adjacency=a,
        pinning=g.pinning,
    )


@dataclass(frozen=True)
class GaugeResult:
    balanced: bool
    gauge: np.ndarray | None = None
    partition: tuple | None = None
    # Follower cycle (index list, closed) whose signs cannot be made consistent.
    conflict_cycle: list | None = field(default=None, compare=False)


def check_structural_balance(g: SignedDigraph) -> GaugeResult:
    """Two-colour the symmetrised support graph so that positive edges stay
    inside a part and negative edges cross. Returns the gauge ``Q`` with
    ``Q A Q = |A|`` when one exists."""
    a = g.adjacency
    n = a.shape[0]
    # required relation between i and j: +1 same part, -1 opposite
    rel = {}
    for i, j in zip(*np.nonzero(a)):
        i, j = int(i), int(j)
        s = 1 if a[i, j] > 0 else -1
        key = (min(i, j), max(i, j))
        if rel.get(key, s) != s:
            return GaugeResult(False, conflict_cycle=[i, j, i])
        rel[key] = s
    nbrs = [[] for _ in range(n)]
    for (i, j), s in rel.items():
        nbrs[i].append((j, s))
        nbrs[j].append((i, s))

    sign = np.zeros(n, dtype=int)
    parent = [-1] * n
    for root in range(n):
        if sign[root]:
            continue
        sign[root] = 1
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for v, s in sorted(nbrs[u]):
                if not sign[v]:
                    sign[v] = sign[u] * s
                    parent[v] = u
                    queue.append(v)
                elif sign[v] != sign[u] * s:
                    return GaugeResult(False, conflict_cycle=_tree_cycle(parent, u, v))
    q = np.diag(sign.astype(float))
    v1 = tuple(int(i) for i in np.flatnonzero(sign > 0))
    v2 = tuple(int(i) for i in np.flatnonzero(sign < 0))
    return GaugeResult(True, q, (v1, v2))


def _tree_cycle(parent, u, v):
    def up(x):
        out = [x]
        while parent[x] != -1:
            x = parent[x]
            out.append(x)
        return out

    pu, pv = up(u), up(v)
    on_v = set(pv)
    k = next(k for k, x in enumerate(pu) if x in on_v)
    k2 = pv.index(pu[k])
    return pu[: k + 1] + pv[:k2][::-1] + [u]


def gauge_residual(g: SignedDigraph, q: np.ndarray) -> float:
    return float(np.max(np.abs(q @ g.adjacency @ q - np.abs(g.adjacency)), initial=0.0))


def convexity_weights(m: GraphMatrices) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-leader weight vectors ``(w_plus, w_minus)`` such that the followers'
    outputs are driven towards ``sum_r (w_plus_r - w_minus_r) * y_r``."""
    nl = m.n_leaders()
    n = m.adjacency.shape[0]
    phi_sum = m.phi_sum
    if np.linalg.matrix_rank(phi_sum) < n:
        raise SynthesisError("sum of signed Phi matrices is singular (check Assumptions 1 and 3)")
    anti = (m.abs_adjacency - m.adjacency) / (2 * nl)
    ones = np.ones(n)
    out = []
    for r in range(nl):
        gr = m.pinning[:, r]
        pos = m.unsigned_laplacian / nl + anti + np.diag(0.5 * (np.abs(gr) + gr))
        neg = anti + np.diag(0.5 * (np.abs(gr) - gr))
        out.append((np.linalg.solve(phi_sum, pos @ ones), np.linalg.solve(phi_sum, neg @ ones)))
    return out


def spectral_report(m: GraphMatrices, tol=EIG_TOL) -> dict:
    """Spectral and sign checks on the Phi matrices: positive real parts and
    an entrywise non-negative inverse of their sum."""
    mins = [float(np.min(np.linalg.eigvals(p).real)) for p in m.phi_signed]
    min_sum = float(np.min(np.linalg.eigvals(m.phi_sum).real))
    inv_min = float(np.min(np.linalg.inv(m.phi_sum)))
    return {
        "phi_min_real_eig": mins,
        "phi_sum_min_real_eig": min_sum,
        "phi_sum_inverse_min_entry": inv_min,
        "eigs_positive": all(x > tol for x in mins) and min_sum > tol,
        "inverse_nonnegative": inv_min >= -1e-10,
    }


def neighborhood_error(adjacency, pinning, sent, own, sent_leaders):
    """``sum_j (a_ij s_j - |a_ij| o_i) + sum_r (g_ir l_ir - |g_ir| o_i)`` for every i.

    ``sent`` (N x d) holds what each follower transmits, ``own`` (N x d) what
    each receiver uses for itself.  ``sent_leaders`` is either M x d (every
    receiver sees the same leader value) or N x M x d (per-receiver values).
    """
    deg = np.abs(adjacency).sum(axis=1) + np.abs(pinning).sum(axis=1)
    if sent_leaders.ndim == 2:
        lead = pinning @ sent_leaders
    else:
        lead = np.einsum("ir,ird->id", pinning, sent_leaders)
    return adjacency @ sent - deg[:, None] * own + lead
