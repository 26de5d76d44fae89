"""Per-follower offline design: output regulator equations, the stabilising
ARE solution (Newton-Kleinman) and the feedback/feedforward gains."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy.signal import place_poles

from .errors import AssumptionError, InvalidWeights, NonSquareRegulator, RiccatiFailure

RANK_RTOL = 1e-8
IMAG_AXIS_TOL = 1e-9


@dataclass(frozen=True)
class FollowerDynamics:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A, B, C = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (self.A, self.B, self.C))
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n or C.shape[1] != n:
            raise ValueError(f"inconsistent shapes A{A.shape} B{B.shape} C{C.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def z(self):
        return self.C.shape[0]


@dataclass(frozen=True)
class LeaderDynamics:
    S: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        S, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (self.S, self.R))
        if S.shape[0] != S.shape[1] or R.shape[1] != S.shape[0]:
            raise ValueError(f"inconsistent shapes S{S.shape} R{R.shape}")
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "R", R)

    @property
    def l(self):  # noqa: E743
        return self.S.shape[0]

    @property
    def z(self):
        return self.R.shape[0]


@dataclass(frozen=True)
class SynthesisResult:
    Pi: np.ndarray
    Gamma: np.ndarray
    P: np.ndarray
    K: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    U: np.ndarray

    def regulator_residuals(self, f: FollowerDynamics, ld: LeaderDynamics):
        r1 = f.A @ self.Pi + f.B @ self.Gamma - self.Pi @ ld.S
        r2 = f.C @ self.Pi - ld.R
        return float(np.max(np.abs(r1))), float(np.max(np.abs(r2)))

    def riccati_residual(self, f: FollowerDynamics) -> float:
        return riccati_residual(f.A, f.B, self.Q, self.U, self.P)

    def closed_loop_eigs(self, f: FollowerDynamics):
        return np.linalg.eigvals(f.A + f.B @ self.K)


def numerical_rank(M, rtol=RANK_RTOL) -> int:
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def _unstable_eigs(A):
    return [lam for lam in np.linalg.eigvals(A) if lam.real >= -IMAG_AXIS_TOL]


def is_stabilizable(A, B) -> bool:
    n = A.shape[0]
    return all(numerical_rank(np.hstack([A - lam * np.eye(n), B])) == n for lam in _unstable_eigs(A))


def is_detectable(A, C) -> bool:
    return is_stabilizable(A.T, C.T)


def check_leader(ld: LeaderDynamics, tol=1e-8):
    eigs = np.linalg.eigvals(ld.S)
    scale = max(1.0, float(np.max(np.abs(eigs), initial=0.0)))
    off = [lam for lam in eigs if abs(lam.real) > tol * scale]
    if off:
        raise AssumptionError(2, f"S has eigenvalues off the imaginary axis: {np.round(off, 6).tolist()}")
    for a in range(len(eigs)):
        for b in range(a + 1, len(eigs)):
            if abs(eigs[a] - eigs[b]) <= tol * scale:
                raise AssumptionError(2, f"S has a repeated eigenvalue {eigs[a]:.6g}")


def check_follower(f: FollowerDynamics):
    if not is_stabilizable(f.A, f.B):
        raise AssumptionError(4, "(A, B) is not stabilizable")
    if not is_detectable(f.A, f.C):
        raise AssumptionError(4, "(A, C) is not detectable")


def regulator_system(f: FollowerDynamics, ld: LeaderDynamics):
    """Stacked linear system ``M [vec(Pi); vec(Gamma)] = rhs`` (column-major vec)."""
    n, m, l, z = f.n, f.m, ld.l, f.z
    I_l = np.eye(l)
    top = np.hstack([np.kron(I_l, f.A) - np.kron(ld.S.T, np.eye(n)), np.kron(I_l, f.B)])
    bottom = np.hstack([np.kron(I_l, f.C), np.zeros((z * l, m * l))])
    rhs = np.concatenate([np.zeros(n * l), ld.R.reshape(-1, order="F")])
    return np.vstack([top, bottom]), rhs


def check_regulator_rank(f: FollowerDynamics, ld: LeaderDynamics):
    if f.z != ld.z:
        raise ValueError(f"follower output dim {f.z} != leader output dim {ld.z}")
    for lam in np.linalg.eigvals(ld.S):
        M = np.block([[f.A - lam * np.eye(f.n), f.B], [f.C, np.zeros((f.z, f.m))]])
        if numerical_rank(M) != f.n + f.z:
            raise NonSquareRegulator(
                lam, f"rank condition fails at eigenvalue {lam:.6g} of S (need rank n+z={f.n + f.z})"
            )


def solve_regulator(f: FollowerDynamics, ld: LeaderDynamics):
    check_regulator_rank(f, ld)
    M, rhs = regulator_system(f, ld)
    sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
    nl = f.n * ld.l
    Pi = sol[:nl].reshape(f.n, ld.l, order="F")
    Gamma = sol[nl:].reshape(f.m, ld.l, order="F")
    return Pi, Gamma


def riccati_residual(A, B, Q, U, P) -> float:
    res = A.T @ P + P @ A + Q - P @ B @ np.linalg.solve(U, B.T @ P)
    return float(np.max(np.abs(res)))


def riccati_scale(A, B, Q, U, P) -> float:
    """Magnitude of the largest ARE term; rounding alone leaves a residual of
    about eps times this."""
    quad = P @ B @ np.linalg.solve(U, B.T @ P)
    return float(max(1.0, np.abs(A.T @ P).max(), np.abs(Q).max(), np.abs(quad).max()))


def _check_spd(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, atol=1e-12):
        raise InvalidWeights(f"{name} must be square and symmetric")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise InvalidWeights(f"{name} must be positive-definite") from None
    return M


def _hurwitz(M) -> bool:
    return bool(np.all(np.linalg.eigvals(M).real < 0))


def _newton_kleinman(A, B, Q, U, K, tol=1e-10, max_iter=100):
    Uinv_Bt = np.linalg.solve(U, B.T)
    P = None
    for _ in range(max_iter):
        Ak = A + B @ K
        P = sla.solve_continuous_lyapunov(Ak.T, -(Q + K.T @ U @ K))
        P = 0.5 * (P + P.T)
        K = -Uinv_Bt @ P
        if riccati_residual(A, B, Q, U, P) < tol:
            break
    return P, K


def stabilizing_seed(A, B):
    """A gain K with A + BK Hurwitz: zero if A is already Hurwitz, otherwise
    pole placement, falling back to a shift continuation when (A, B) is
    stabilizable but not controllable."""
    n = A.shape[0]
    if _hurwitz(A):
        return np.zeros((B.shape[1], n))
    rho = max(1.0, float(np.max(np.abs(np.linalg.eigvals(A)))))
    poles = -rho * (1.0 + np.arange(n) / max(n, 1))
    try:
        K = -place_poles(A, B, poles).gain_matrix
        if _hurwitz(A + B @ K):
            return K
    except (ValueError, np.linalg.LinAlgError):
        pass
    return _shift_continuation(A, B)


def _shift_continuation(A, B):
    # LQR on A - beta*I is stabilised by K = 0 for large beta; walk beta to 0,
    # reusing each gain as the seed of the next solve.
    n, m = A.shape[0], B.shape[1]
    Q, U = np.eye(n), np.eye(m)
    beta = max(0.0, float(np.max(np.linalg.eigvals(A).real))) + 1.0
    K = np.zeros((m, n))
    step = beta
    while beta > 0:
        nxt = max(0.0, beta - step)
        if _hurwitz(A - nxt * np.eye(n) + B @ K):
            beta = nxt
            _, K = _newton_kleinman(A - beta * np.eye(n), B, Q, U, K)
        else:
            step /= 2
            if step < 1e-12:
                raise RiccatiFailure("could not find a stabilizing seed gain", np.inf)
    return K


def solve_riccati(f: FollowerDynamics, Q, U, tol=1e-10, max_iter=100):
    Q = _check_spd(Q, "Q")
    U = _check_spd(U, "U")
    if Q.shape[0] != f.n or U.shape[0] != f.m:
        raise InvalidWeights(f"weight shapes Q{Q.shape} U{U.shape} do not match n={f.n}, m={f.m}")
    if not is_stabilizable(f.A, f.B):
        raise AssumptionError(4, "(A, B) is not stabilizable")
    K0 = stabilizing_seed(f.A, f.B)
    P, K = _newton_kleinman(f.A, f.B, Q, U, K0, tol, max_iter)
    res = riccati_residual(f.A, f.B, Q, U, P)
    if not np.all(np.isfinite(P)) or res > 1e-7 * riccati_scale(f.A, f.B, Q, U, P):
        raise RiccatiFailure("Newton-Kleinman did not converge", res)
    if not _hurwitz(f.A + f.B @ K) or np.min(np.linalg.eigvalsh(P)) <= 0:
        raise RiccatiFailure("solution is not the stabilizing SPD root", res)
    return P


def synthesize(f: FollowerDynamics, ld: LeaderDynamics, Q=None, U=None) -> SynthesisResult:
    Q = np.eye(f.n) if Q is None else Q
    U = np.eye(f.m) if U is None else U
    check_leader(ld)
    check_follower(f)
    Pi, Gamma = solve_regulator(f, ld)
    P = solve_riccati(f, Q, U)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    K = -np.linalg.solve(U, f.B.T @ P)
    H = Gamma - K @ Pi
    return SynthesisResult(Pi=Pi, Gamma=Gamma, P=P, K=K, H=H, Q=np.atleast_2d(np.asarray(Q, float)), U=U)
