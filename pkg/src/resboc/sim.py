"""Fixed-step RK4 simulation of the closed-loop network, plus containment metrics."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import block_diag

from .errors import DivergenceAbort, ScenarioError
from .graph import SignedDigraph, build_matrices, convexity_weights, neighborhood_error
from .privacy import MaskSet
from .protocol import AttackSignal, ProtocolConfig
from .synthesis import FollowerDynamics, LeaderDynamics, SynthesisResult, synthesize

DIVERGENCE_LIMIT = 1e12


# --- metrics -----------------------------------------------------------------


def containment_error(g: SignedDigraph, y_followers, y_leaders):
    """Neighbourhood bipartite output containment error, one z-vector per follower."""
    y = np.asarray(y_followers, dtype=float)
    return neighborhood_error(g.adjacency, g.pinning, y, y, np.asarray(y_leaders, dtype=float))


def project_simplex(v):
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


def _segment_distance(p, a, b):
    """Distances from ``p`` to segments ``a[k]-b[k]`` (rows)."""
    ab = b - a
    den = np.einsum("kd,kd->k", ab, ab)
    s = np.divide(np.einsum("kd,kd->k", p - a, ab), den, out=np.zeros_like(den), where=den > 0)
    s = np.clip(s, 0.0, 1.0)
    return np.linalg.norm(p - (a + s[:, None] * ab), axis=1)


def _cross(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _in_triangle(p, a, b, c, tol=1e-12):
    """Vectorised barycentric test of ``p`` against triangles (a[k], b[k], c[k])."""
    e1, e2, w = b - a, c - a, p - a
    det = _cross(e1, e2)
    scale = 1 + np.maximum(np.abs(e1).max(axis=-1), np.abs(e2).max(axis=-1)) ** 2
    ok = np.abs(det) > tol * scale
    safe = np.where(ok, det, 1.0)
    s = _cross(w, e2) / safe
    t = _cross(e1, w) / safe
    return ok & (s >= -tol) & (t >= -tol) & (s + t <= 1 + tol)


def _polygon_distance(y, pts):
    pts = np.asarray(pts, dtype=float)
    k = len(pts)
    tri = np.array(list(itertools.combinations(range(k), 3))).reshape(-1, 3)
    if tri.size and np.any(_in_triangle(y, pts[tri[:, 0]], pts[tri[:, 1]], pts[tri[:, 2]])):
        return 0.0
    seg = np.array(list(itertools.combinations(range(k), 2))).reshape(-1, 2)
    best = np.min(np.linalg.norm(pts - y, axis=1))
    if seg.size:
        best = min(best, np.min(_segment_distance(y, pts[seg[:, 0]], pts[seg[:, 1]])))
    return float(best)


def _simplex_pg_distance(y, pts, iters=5000, tol=1e-13):
    V = np.asarray(pts)
    L = max(np.linalg.norm(V, 2) ** 2, 1e-300)
    w = np.full(len(V), 1.0 / len(V))
    z, tk = w.copy(), 1.0
    for _ in range(iters):
        w_new = project_simplex(z - (V @ (V.T @ z - y)) / L)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * tk * tk))
        z = w_new + (tk - 1) / t_new * (w_new - w)
        done = np.max(np.abs(w_new - w)) < tol
        w, tk = w_new, t_new
        if done:
            break
    return float(np.linalg.norm(V.T @ w - y))


def hull_distance(y, leader_outputs) -> float:
    """Euclidean distance from ``y`` to the convex hull of the leaders'
    outputs and their negatives."""
    y = np.asarray(y, dtype=float)
    ys = np.atleast_2d(np.asarray(leader_outputs, dtype=float))
    if ys.shape[0] == 0:
        raise ValueError("need at least one leader")
    pts = np.vstack([ys, -ys])
    if y.size == 1:
        return float(max(0.0, abs(y[0]) - np.max(np.abs(ys))))
    if y.size == 2:
        return _polygon_distance(y, list(pts))
    return _simplex_pg_distance(y, pts)


# --- scenario ------------------------------------------------------------------


@dataclass
class AttackSpec:
    agent: int
    layer: str  # "actuator" or "observer"
    signal: AttackSignal


@dataclass
class Scenario:
    graph: SignedDigraph
    followers: list
    x0: list
    leader: LeaderDynamics
    xr0: np.ndarray
    Q: list
    U: list
    masks: MaskSet
    protocol: ProtocolConfig
    attacks: list = field(default_factory=list)
    t_end: float = 18.0
    dt: float = 1e-3
    record_stride: int = 10
    zeta0: np.ndarray | None = None

    def __post_init__(self):
        n, m = self.graph.n_followers, self.graph.n_leaders
        l, z = self.leader.l, self.leader.z
        if len(self.followers) != n:
            raise ScenarioError(f"expected {n} followers, got {len(self.followers)}", "followers")
        for i, f in enumerate(self.followers):
            if f.z != z:
                raise ScenarioError(f"output dimension {f.z} != leader output dimension {z}", f"followers[{i}].C")
            if np.shape(self.x0[i]) != (f.n,):
                raise ScenarioError(f"initial state must have length {f.n}", f"followers[{i}].x0")
            if np.shape(self.Q[i]) != (f.n, f.n) or np.shape(self.U[i]) != (f.m, f.m):
                raise ScenarioError("weight shapes do not match the follower", f"synthesis[{i}]")
        self.xr0 = np.asarray(self.xr0, dtype=float).reshape(m, l)
        self.zeta0 = np.zeros((n, l)) if self.zeta0 is None else np.asarray(self.zeta0, float).reshape(n, l)
        self.protocol = self.protocol.broadcast(n)
        if self.dt <= 0 or self.t_end <= 0 or self.record_stride < 1:
            raise ScenarioError("dt and t_end must be positive, record_stride >= 1", "sim")
        for k, a in enumerate(self.attacks):
            if not 0 <= a.agent < n:
                raise ScenarioError(f"agent index {a.agent} out of range", f"attacks[{k}].agent")
            want = self.followers[a.agent].m if a.layer == "actuator" else l
            if a.layer not in ("actuator", "observer"):
                raise ScenarioError(f"unknown layer {a.layer!r}", f"attacks[{k}].layer")
            if a.signal.coefficients.size != want:
                raise ScenarioError(f"{a.layer} attack needs {want} components", f"attacks[{k}]")

    @property
    def n(self):
        return self.graph.n_followers

    @property
    def m(self):
        return self.graph.n_leaders

    def synthesize(self) -> list[SynthesisResult]:
        return [synthesize(f, self.leader, q, u) for f, q, u in zip(self.followers, self.Q, self.U)]


# --- closed loop ---------------------------------------------------------------


class ClosedLoop:
    """Vectorised right-hand side of the full network.

    State layout (flat): follower states, leader states, observer states,
    observer gains theta, controller gains rho.
    """

    def __init__(self, sc: Scenario, syn: list[SynthesisResult] | None = None):
        self.sc = sc
        self.syn = syn if syn is not None else sc.synthesize()
        n, m, l = sc.n, sc.m, sc.leader.l
        fs = sc.followers
        self.n, self.m, self.l = n, m, l
        self.nx = [f.n for f in fs]
        self.mu = [f.m for f in fs]
        self.x_off = np.concatenate([[0], np.cumsum(self.nx)])
        self.u_off = np.concatenate([[0], np.cumsum(self.mu)])
        NX, NU = self.x_off[-1], self.u_off[-1]
        self.sl_x = slice(0, NX)
        self.sl_l = slice(NX, NX + m * l)
        self.sl_z = slice(NX + m * l, NX + m * l + n * l)
        self.sl_th = slice(self.sl_z.stop, self.sl_z.stop + n)
        self.sl_rho = slice(self.sl_th.stop, self.sl_th.stop + n)
        self.size = self.sl_rho.stop

        self.A = block_diag(*[f.A for f in fs])
        self.B = block_diag(*[f.B for f in fs])
        self.C = block_diag(*[f.C for f in fs])
        self.K = block_diag(*[s.K for s in self.syn])
        self.H = block_diag(*[s.H for s in self.syn])
        self.Pi = block_diag(*[s.Pi for s in self.syn])
        self.BtP = block_diag(*[f.B.T @ s.P for f, s in zip(fs, self.syn)])
        self.u_owner = np.repeat(np.arange(n), self.mu)
        self.S = sc.leader.S
        self.R = sc.leader.R
        g = sc.graph
        self.adj = g.adjacency
        self.pin = g.pinning
        self.deg = np.abs(self.adj).sum(axis=1) + np.abs(self.pin).sum(axis=1)
        self.resilient = sc.protocol.mode == "resilient"
        self.compensate = sc.protocol.compensator
        self.q, self.alpha, self.c = sc.protocol.q, sc.protocol.alpha, sc.protocol.c
        self.log_cap = np.log(sc.protocol.gain_cap)
        self.masks = sc.masks
        self.zeros_n = np.zeros(n)

        # attack components gathered into flat arrays
        self.att_a = self._gather(sc.attacks, "actuator", NU, lambda a: self.u_off[a.agent])
        self.att_o = self._gather(sc.attacks, "observer", n * l, lambda a: a.agent * l)

        gm = build_matrices(g)
        w = convexity_weights(gm)
        self.leader_weights = np.column_stack([wp - wm for wp, wm in w])  # N x M
        self.phi_sum = gm.phi_sum

    @staticmethod
    def _gather(attacks, layer, size, offset):
        k, rate, ts = np.zeros(size), np.ones(size), np.full(size, np.inf)
        for a in attacks:
            if a.layer != layer:
                continue
            o = offset(a)
            sl = slice(o, o + a.signal.coefficients.size)
            k[sl] += a.signal.coefficients
            rate[sl] = a.signal.rates
            ts[sl] = a.signal.t_start
        return k, rate, ts

    @staticmethod
    def _attack(arr, t):
        k, rate, ts = arr
        on = t >= ts
        out = np.zeros_like(k)
        out[on] = k[on] * np.exp(rate[on] * (t - ts[on]))
        return out

    def initial_state(self):
        sc = self.sc
        s = np.zeros(self.size)
        s[self.sl_x] = np.concatenate([np.asarray(x, float) for x in sc.x0])
        s[self.sl_l] = sc.xr0.ravel()
        s[self.sl_z] = sc.zeta0.ravel()
        return s

    def unpack(self, s):
        return (
            s[self.sl_x],
            s[self.sl_l].reshape(self.m, self.l),
            s[self.sl_z].reshape(self.n, self.l),
            s[self.sl_th],
            s[self.sl_rho],
        )

    def _attack_now(self, arr, t):
        # cheap path before any attack is active
        if t < arr[2].min():
            return np.zeros(arr[0].size)
        return self._attack(arr, t)

    def _core(self, t, s):
        x, xl, zeta, th, rho = self.unpack(s)
        zf = s[self.sl_z]
        ga = self._attack_now(self.att_a, t)
        go = self._attack_now(self.att_o, t).reshape(self.n, self.l)
        pin_xl = self.pin @ xl
        xi_plain = self.adj @ zeta - self.deg[:, None] * zeta + pin_xl
        eps = x - self.Pi @ zf
        u = self.K @ x + self.H @ zf
        if self.resilient:
            if self.masks.enabled:
                zm = self.masks.masked_followers(t, zeta, th)
                lm = self.masks.masked_leaders(t, xl)
                xi = self.adj @ zm - self.deg[:, None] * zeta + np.einsum("ir,ird->id", self.pin, lm)
            else:
                xi = xi_plain
            coupling = np.exp(np.minimum(th, self.log_cap))
            v = self.BtP @ eps
            nv = np.sqrt(np.add.reduceat(v * v, self.u_off[:-1]))
            den = nv + np.exp(-self.c * (t * t))
            mag = np.exp(np.minimum(rho, self.log_cap))
            scale = np.divide(mag, den, out=np.zeros_like(den), where=den > 0)
            gh = v * scale[self.u_owner] if self.compensate else np.zeros_like(v)
            u = u - gh
            drho = self.alpha * nv
        else:
            xi = xi_plain
            coupling = th
            gh = None
            drho = self.zeros_n
        dzeta = zeta @ self.S.T + coupling[:, None] * xi + go
        dtheta = self.q * np.einsum("id,id->i", xi, xi)
        dx = self.A @ x + self.B @ (u + ga)
        dxl = xl @ self.S.T
        return xi_plain, xi, eps, ga, go, u, gh, dx, dxl, dzeta, dtheta, drho

    def signals(self, t, s):
        """All intermediate signals at (t, s) as a dict."""
        xi_plain, xi, eps, ga, go, u, gh, dx, dxl, dzeta, dtheta, drho = self._core(t, s)
        return {
            "xi": xi_plain,
            "eps": eps,
            "gamma_a": ga,
            "gamma_ol": go,
            "xi_used": xi,
            "dzeta": dzeta,
            "dtheta": dtheta,
            "drho": drho,
            "u": u,
            "gamma_hat": np.zeros(self.u_off[-1]) if gh is None else gh,
            "dx": dx,
            "dxl": dxl,
        }

    def deriv(self, t, s):
        *_, dx, dxl, dzeta, dtheta, drho = self._core(t, s)
        out = np.empty(self.size)
        out[self.sl_x] = dx
        out[self.sl_l] = dxl.ravel()
        out[self.sl_z] = dzeta.ravel()
        out[self.sl_th] = dtheta
        out[self.sl_rho] = drho
        return out

    def step(self, s, t, dt):
        k1 = self.deriv(t, s)
        k2 = self.deriv(t + dt / 2, s + dt / 2 * k1)
        k3 = self.deriv(t + dt / 2, s + dt / 2 * k2)
        k4 = self.deriv(t + dt, s + dt * k3)
        return s + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    def agent_of(self, idx):
        """Human label for flat state index ``idx``."""
        if idx < self.sl_l.start:
            return f"f{int(np.searchsorted(self.x_off, idx, side='right'))}"
        if idx < self.sl_z.start:
            return f"l{(idx - self.sl_l.start) // self.l + 1}"
        if idx < self.sl_th.start:
            return f"f{(idx - self.sl_z.start) // self.l + 1}"
        if idx < self.sl_rho.start:
            return f"f{idx - self.sl_th.start + 1}"
        return f"f{idx - self.sl_rho.start + 1}"

    def check_finite(self, s, t):
        bad = np.flatnonzero(~np.isfinite(s) | (np.abs(s) > DIVERGENCE_LIMIT))
        if bad.size:
            raise DivergenceAbort(t, self.agent_of(int(bad[0])))

    def metrics(self, t, s):
        x, xl, zeta, th, rho = self.unpack(s)
        sig = self.signals(t, s)
        y = (self.C @ x).reshape(self.n, -1)
        yl = xl @ self.R.T
        es = neighborhood_error(self.adj, self.pin, y, y, yl)
        delta = zeta - self.leader_weights @ xl
        return {
            "y": y,
            "yl": yl,
            "es": es,
            "hull": np.array([hull_distance(yi, yl) for yi in y]),
            "xi": sig["xi"],
            "delta": delta,
            "eps": sig["eps"],
            "u": sig["u"],
            "gamma_hat": sig["gamma_hat"],
        }


_LOOPS: dict = {}


def step(state, t, dt, scenario: Scenario):
    """One RK4 step of the closed loop for ``scenario``."""
    key = id(scenario)
    loop = _LOOPS.get(key)
    if loop is None or loop.sc is not scenario:
        loop = _LOOPS[key] = ClosedLoop(scenario)
    out = loop.step(np.asarray(state, dtype=float), t, dt)
    loop.check_finite(out, t + dt)
    return out


# --- trace -------------------------------------------------------------------


@dataclass
class SimTrace:
    mode: str
    masks_enabled: bool
    times: np.ndarray
    x: np.ndarray  # T x sum(n_i), concatenated follower states
    x_offsets: np.ndarray
    u_offsets: np.ndarray
    xl: np.ndarray  # T x M x l
    zeta: np.ndarray  # T x N x l
    theta: np.ndarray
    rho: np.ndarray
    y: np.ndarray  # T x N x z
    yl: np.ndarray  # T x M x z
    es: np.ndarray  # T x N x z
    hull: np.ndarray  # T x N
    xi: np.ndarray
    delta: np.ndarray
    eps: np.ndarray  # T x sum(n_i)
    u: np.ndarray  # T x sum(m_i)
    gamma_hat: np.ndarray
    events: list = field(default_factory=list)
    completed: bool = True
    abort: dict | None = None

    def follower_x(self, i):
        return self.x[:, self.x_offsets[i]:self.x_offsets[i + 1]]

    def follower_eps(self, i):
        return self.eps[:, self.x_offsets[i]:self.x_offsets[i + 1]]

    def es_norm(self):
        """T x N Euclidean norms of the containment error."""
        return np.linalg.norm(self.es, axis=2)

    def window_max(self, lo, hi, which="es", closed=True):
        t = self.times
        sel = (t >= lo) & ((t <= hi) if closed else (t < hi))
        if not np.any(sel):
            return None
        vals = self.es_norm() if which == "es" else self.hull
        return float(np.max(vals[sel]))

    def at(self, t):
        """Index of the recorded sample closest to ``t``."""
        return int(np.argmin(np.abs(self.times - t)))

    def columns(self):
        n, l = self.zeta.shape[1], self.zeta.shape[2]
        z = self.y.shape[2]
        m = self.xl.shape[1]
        cols = ["t"]
        for i in range(n):
            ni = self.x_offsets[i + 1] - self.x_offsets[i]
            mi = self.u_offsets[i + 1] - self.u_offsets[i]
            f = f"f{i + 1}"
            cols += [f"{f}.x{k + 1}" for k in range(ni)]
            cols += [f"{f}.y{k + 1}" for k in range(z)]
            cols += [f"{f}.zeta{k + 1}" for k in range(l)]
            cols += [f"{f}.theta", f"{f}.rho"]
            cols += [f"{f}.es{k + 1}" for k in range(z)]
            cols += [f"{f}.hulldist"]
            cols += [f"{f}.eps{k + 1}" for k in range(ni)]
            cols += [f"{f}.u{k + 1}" for k in range(mi)]
            cols += [f"{f}.gammahat{k + 1}" for k in range(mi)]
            cols += [f"{f}.xi{k + 1}" for k in range(l)]
            cols += [f"{f}.delta{k + 1}" for k in range(l)]
        for r in range(m):
            cols += [f"l{r + 1}.x{k + 1}" for k in range(l)]
            cols += [f"l{r + 1}.y{k + 1}" for k in range(z)]
        return cols

    def rows(self):
        n = self.zeta.shape[1]
        xo, uo = self.x_offsets, self.u_offsets
        for k, t in enumerate(self.times):
            row = [t]
            for i in range(n):
                row += list(self.x[k, xo[i]:xo[i + 1]])
                row += list(self.y[k, i])
                row += list(self.zeta[k, i])
                row += [self.theta[k, i], self.rho[k, i]]
                row += list(self.es[k, i])
                row += [self.hull[k, i]]
                row += list(self.eps[k, xo[i]:xo[i + 1]])
                row += list(self.u[k, uo[i]:uo[i + 1]])
                row += list(self.gamma_hat[k, uo[i]:uo[i + 1]])
                row += list(self.xi[k, i])
                row += list(self.delta[k, i])
            for r in range(self.xl.shape[1]):
                row += list(self.xl[k, r]) + list(self.yl[k, r])
            yield row

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns())
            for row in self.rows():
                w.writerow([repr(float(v)) for v in row])
        return path


def run(scenario: Scenario, syn: list[SynthesisResult] | None = None) -> SimTrace:
    loop = ClosedLoop(scenario, syn)
    sc = scenario
    dt = sc.dt
    n_steps = int(round(sc.t_end / dt))
    s = loop.initial_state()
    rec: dict[str, list] = {k: [] for k in ("t", "state", "m")}
    events, capped = [], set()

    def record(t, s):
        rec["t"].append(t)
        rec["state"].append(s.copy())
        rec["m"].append(loop.metrics(t, s))

    completed, abort = True, None
    record(0.0, s)
    for k in range(n_steps):
        t = k * dt
        s_new = loop.step(s, t, dt)
        t_new = (k + 1) * dt
        try:
            loop.check_finite(s_new, t_new)
        except DivergenceAbort as exc:
            completed = False
            abort = {"t": exc.t, "agent": exc.agent}
            events.append({"t": exc.t, "agent": exc.agent, "kind": "divergence"})
            break
        s = s_new
        _, _, _, th, rho = loop.unpack(s)
        # only the resilient laws exponentiate the adaptive gains
        for name, vals in (("theta", th), ("rho", rho)) if loop.resilient else ():
            for i in np.flatnonzero(vals > loop.log_cap):
                if (name, i) not in capped:
                    capped.add((name, i))
                    events.append({"t": t_new, "agent": f"f{i + 1}", "kind": f"gain_cap_{name}"})
        if (k + 1) % sc.record_stride == 0 or k + 1 == n_steps:
            record(t_new, s)

    st = np.array(rec["state"])
    ms = rec["m"]

    def stack(key):
        return np.array([m_[key] for m_ in ms])

    return SimTrace(
        mode=sc.protocol.mode,
        masks_enabled=bool(sc.masks.enabled),
        times=np.array(rec["t"]),
        x=st[:, loop.sl_x],
        x_offsets=loop.x_off,
        u_offsets=loop.u_off,
        xl=st[:, loop.sl_l].reshape(-1, loop.m, loop.l),
        zeta=st[:, loop.sl_z].reshape(-1, loop.n, loop.l),
        theta=st[:, loop.sl_th],
        rho=st[:, loop.sl_rho],
        y=stack("y"),
        yl=stack("yl"),
        es=stack("es"),
        hull=stack("hull"),
        xi=stack("xi"),
        delta=stack("delta"),
        eps=stack("eps"),
        u=stack("u"),
        gamma_hat=stack("gamma_hat"),
        events=events,
        completed=completed,
        abort=abort,
    )
