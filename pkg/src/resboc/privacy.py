"""Vanishing privacy masks for data sent on the observer layer.

Leader r's state, as received by follower i, is sent as
``(1 + phi e^{-sigma t}) (x_r + wp e^{-delta t})``; follower j sends its
observer state as ``(1 + phi e^{-sigma t}) (zeta_j + wp e^{-theta_j(t)})``
where ``theta_j`` is its own adaptive coupling gain.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ScenarioError
from .graph import SignedDigraph, neighborhood_error


@dataclass(frozen=True)
class LeaderMaskParams:
    phi: float = 1.0
    sigma: float = 1.0
    delta: float = 1.0
    wp: np.ndarray = field(default_factory=lambda: np.array([0.5]))

    def check(self):
        if not (self.phi > 0 and self.sigma > 0 and self.delta > 0):
            raise ScenarioError("leader mask needs phi, sigma, delta > 0")
        if np.any(np.asarray(self.wp) == 0):
            raise ScenarioError("leader mask offset entries must be nonzero")


@dataclass(frozen=True)
class FollowerMaskParams:
    phi: float = 1.0
    sigma: float = 1.0
    wp: np.ndarray = field(default_factory=lambda: np.array([0.5]))

    def check(self):
        if not (self.phi > 0 and self.sigma > 0):
            raise ScenarioError("follower mask needs phi, sigma > 0")
        if np.any(np.asarray(self.wp) == 0):
            raise ScenarioError("follower mask offset entries must be nonzero")


def mask_leader(t, x_r, p: LeaderMaskParams):
    x_r = np.asarray(x_r, dtype=float)
    return (1.0 + p.phi * np.exp(-p.sigma * t)) * (x_r + np.asarray(p.wp) * np.exp(-p.delta * t))


def mask_follower(t, zeta_j, theta_j, p: FollowerMaskParams):
    zeta_j = np.asarray(zeta_j, dtype=float)
    return (1.0 + p.phi * np.exp(-p.sigma * t)) * (zeta_j + np.asarray(p.wp) * np.exp(-theta_j))


@dataclass(frozen=True)
class MaskSet:
    """Mask parameters for a whole network, stored as arrays.

    ``leader_*`` arrays are indexed ``[i, r]`` (receiving follower, leader);
    ``follower_*`` arrays by the sending follower.
    """

    enabled: bool
    leader_phi: np.ndarray
    leader_sigma: np.ndarray
    leader_delta: np.ndarray
    leader_wp: np.ndarray  # N x M x l
    follower_phi: np.ndarray
    follower_sigma: np.ndarray
    follower_wp: np.ndarray  # N x l

    @classmethod
    def uniform(cls, n, m, l, leader=None, follower=None, enabled=True):  # noqa: E741
        leader = leader or LeaderMaskParams(wp=np.full(l, 0.5))
        follower = follower or FollowerMaskParams(wp=np.full(l, 0.5))
        return cls.build([[leader] * m for _ in range(n)], [follower] * n, l, enabled)

    @classmethod
    def build(cls, leader_params, follower_params, l, enabled=True):  # noqa: E741
        n = len(follower_params)
        m = len(leader_params[0])

        def vec(wp):
            wp = np.broadcast_to(np.asarray(wp, dtype=float), (l,))
            return wp.copy()

        return cls(
            enabled=enabled,
            leader_phi=np.array([[p.phi for p in row] for row in leader_params], dtype=float),
            leader_sigma=np.array([[p.sigma for p in row] for row in leader_params], dtype=float),
            leader_delta=np.array([[p.delta for p in row] for row in leader_params], dtype=float),
            leader_wp=np.array([[vec(p.wp) for p in row] for row in leader_params]).reshape(n, m, l),
            follower_phi=np.array([p.phi for p in follower_params], dtype=float),
            follower_sigma=np.array([p.sigma for p in follower_params], dtype=float),
            follower_wp=np.array([vec(p.wp) for p in follower_params]).reshape(n, l),
        )

    @classmethod
    def disabled(cls, n, m, l):  # noqa: E741
        return cls.uniform(n, m, l, enabled=False)

    def leader(self, i, r) -> LeaderMaskParams:
        return LeaderMaskParams(
            self.leader_phi[i, r], self.leader_sigma[i, r], self.leader_delta[i, r], self.leader_wp[i, r]
        )

    def follower(self, j) -> FollowerMaskParams:
        return FollowerMaskParams(self.follower_phi[j], self.follower_sigma[j], self.follower_wp[j])

    def masked_leaders(self, t, x_leaders):
        """N x M x l array: leader states as seen by each follower."""
        if not self.enabled:
            return np.broadcast_to(x_leaders, (self.leader_phi.shape[0],) + x_leaders.shape)
        gain = 1.0 + self.leader_phi * np.exp(-self.leader_sigma * t)
        off = self.leader_wp * np.exp(-self.leader_delta * t)[..., None]
        return gain[..., None] * (x_leaders[None, :, :] + off)

    def masked_followers(self, t, zeta, thetas):
        if not self.enabled:
            return zeta
        gain = 1.0 + self.follower_phi * np.exp(-self.follower_sigma * t)
        return gain[:, None] * (zeta + self.follower_wp * np.exp(-thetas)[:, None])


def masked_ol_error(g: SignedDigraph, zeta, x_leaders, t, thetas, masks: MaskSet):
    """Neighbourhood observer-layer error built from masked neighbour and
    leader data and the receiver's own unmasked state."""
    zeta = np.asarray(zeta, dtype=float)
    x_leaders = np.asarray(x_leaders, dtype=float)
    n, m = g.n_followers, g.n_leaders
    if zeta.ndim != 2 or zeta.shape[0] != n or x_leaders.shape != (m, zeta.shape[1]):
        raise ScenarioError(
            f"dimension mismatch: zeta {zeta.shape}, leaders {x_leaders.shape} for N={n}, M={m}"
        )
    thetas = np.asarray(thetas, dtype=float)
    return neighborhood_error(
        g.adjacency,
        g.pinning,
        masks.masked_followers(t, zeta, thetas),
        zeta,
        masks.masked_leaders(t, x_leaders),
    )


def mask_perturbation(g: SignedDigraph, zeta, x_leaders, t, thetas, masks: MaskSet):
    """The additive term ``z`` with ``masked error = unmasked error + z``, from
    the expanded masks ``h = s + s*b + c``."""
    if not masks.enabled:
        return np.zeros_like(np.asarray(zeta, dtype=float))
    b_f = masks.follower_phi * np.exp(-masks.follower_sigma * t)
    c_f = masks.follower_wp * (
        np.exp(-thetas) + masks.follower_phi * np.exp(-(masks.follower_sigma * t + thetas))
    )[:, None]
    f_ring = zeta * b_f[:, None] + c_f
    d_l = masks.leader_phi * np.exp(-masks.leader_sigma * t)
    c_l = masks.leader_wp * (
        np.exp(-masks.leader_delta * t)
        + masks.leader_phi * np.exp(-(masks.leader_sigma + masks.leader_delta) * t)
    )[..., None]
    l_ring = x_leaders[None, :, :] * d_l[..., None] + c_l
    return g.adjacency @ f_ring + np.einsum("ir,ird->id", g.pinning, l_ring)


# --- condition checks ------------------------------------------------------


@dataclass
class ProbeConfig:
    t_grid: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 20.0, 41))
    x_grid: np.ndarray = field(default_factory=lambda: np.linspace(-5.0, 5.0, 21))
    states: np.ndarray | None = None  # explicit K x d states; default x_grid * ones(d)
    reference: np.ndarray | None = None
    epsilons: tuple = (1e-1, 1e-2, 1e-3)
    theta_rate: float = 1.0  # follower masks are probed along theta(t) = theta_rate * t
    terminal_tol: float = 1e-6


@dataclass
class ConditionResult:
    passed: bool
    witness: object = None
    detail: str = ""


def _mask_fn(p):
    if isinstance(p, LeaderMaskParams):
        return lambda t, x, rate: mask_leader(t, x, p), np.size(p.wp)
    return lambda t, x, rate: mask_follower(t, x, rate * t, p), np.size(p.wp)


def verify_mask_conditions(p, probe: ProbeConfig | None = None) -> dict:
    """Grid falsification checks for conditions C1, C3, C4 and C5.

    These are numerical checks of universally quantified properties: a pass
    means no counterexample was found on the probe grid.
    """
    probe = probe or ProbeConfig()
    h, d = _mask_fn(p)
    rate = probe.theta_rate
    states = (
        np.asarray(probe.states, dtype=float)
        if probe.states is not None
        else probe.x_grid[:, None] * np.ones(d)
    )
    ts = np.asarray(probe.t_grid, dtype=float)
    report = {}

    bad = [x for x in states if np.linalg.norm(h(0.0, x, rate) - x) <= 1e-12 * (1 + np.linalg.norm(x))]
    report["C1"] = ConditionResult(not bad, bad[0] if bad else None, "h(0, x) == x" if bad else "")

    x_star = np.zeros(d) if probe.reference is None else np.asarray(probe.reference, dtype=float)
    dirs = np.vstack([np.eye(d), -np.eye(d), np.ones((1, d)) / np.sqrt(d), -np.ones((1, d)) / np.sqrt(d)])
    witnesses = {}
    for eps in probe.epsilons:
        for rho in (0.0, 0.5, 0.9, 0.99):
            found = None
            for u in dirs:
                x0 = x_star + rho * eps * u
                if np.linalg.norm(h(0.0, x0, rate) - x_star) >= eps:
                    found = x0
                    break
            if found is not None:
                witnesses[eps] = found
                break
    missing = [e for e in probe.epsilons if e not in witnesses]
    report["C3"] = ConditionResult(
        not missing, witnesses, f"neighbourhood preserved for eps={missing}" if missing else ""
    )

    sorted_x = np.sort(probe.x_grid)
    c4_fail = None
    for t in ts:
        vals = np.array([h(t, s * np.ones(d), rate) for s in sorted_x])
        if np.any(np.diff(vals, axis=0) <= 0):
            c4_fail = float(t)
            break
    report["C4"] = ConditionResult(c4_fail is None, c4_fail, "not strictly increasing" if c4_fail is not None else "")

    c5_fail = None
    for x in states:
        gap = np.array([np.linalg.norm(h(t, x, rate) - x) for t in ts])
        rises = np.flatnonzero(np.diff(gap) > 1e-12 * (1 + gap[:-1]))
        if rises.size:
            c5_fail = (x, float(ts[rises[0]]), "increase")
            break
        if gap[-1] > probe.terminal_tol * (1 + np.linalg.norm(x)):
            c5_fail = (x, float(ts[-1]), "terminal")
            break
    report["C5"] = ConditionResult(c5_fail is None, c5_fail, c5_fail[2] if c5_fail else "")
    return report
