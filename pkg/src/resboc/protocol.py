"""Online control laws: the resilient observer/controller pair, the standard
baseline, and exponentially unbounded attack signals.

The functions here act on a single agent and are the reference form of the
laws; :mod:`resboc.sim` evaluates the same expressions vectorised over the
network.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import neighborhood_error
from .synthesis import FollowerDynamics, SynthesisResult

DEFAULT_GAIN_CAP = 1e9


@dataclass(frozen=True)
class AttackSignal:
    coefficients: np.ndarray
    rates: np.ndarray
    t_start: float = 0.0

    def __post_init__(self):
        k = np.atleast_1d(np.asarray(self.coefficients, dtype=float))
        rates = np.atleast_1d(np.asarray(self.rates, dtype=float))
        if k.shape != rates.shape:
            raise ValueError("coefficients and rates must have the same length")
        if np.any(rates <= 0):
            raise ValueError("attack growth rates must be strictly positive")
        object.__setattr__(self, "coefficients", k)
        object.__setattr__(self, "rates", rates)

    def __call__(self, t):
        return eval_attack(self, t)


def eval_attack(a: AttackSignal, t: float) -> np.ndarray:
    # time-shifted: the attack jumps to k at t_start
    if t < a.t_start:
        return np.zeros_like(a.coefficients)
    return a.coefficients * np.exp(a.rates * (t - a.t_start))


def capped_exp(v, cap=DEFAULT_GAIN_CAP):
    """``exp(v)`` clamped at ``cap``; also returns whether the clamp was hit."""
    v = np.asarray(v, dtype=float)
    lim = np.log(cap)
    return np.exp(np.minimum(v, lim)), v > lim


@dataclass
class ProtocolConfig:
    mode: str = "resilient"  # or "standard"
    q: np.ndarray = field(default_factory=lambda: np.array([1.0]))
    alpha: np.ndarray = field(default_factory=lambda: np.array([5.0]))
    c: np.ndarray = field(default_factory=lambda: np.array([1.0]))
    gain_cap: float = DEFAULT_GAIN_CAP
    compensator: bool = True

    def __post_init__(self):
        if self.mode not in ("resilient", "standard"):
            raise ValueError(f"unknown protocol mode {self.mode!r}")
        self.q = np.atleast_1d(np.asarray(self.q, dtype=float))
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        for name in ("q", "alpha", "c"):
            if np.any(getattr(self, name) <= 0):
                raise ValueError(f"{name} must be positive")
        if self.gain_cap <= 1:
            raise ValueError("gain_cap must exceed 1")

    def broadcast(self, n):
        return ProtocolConfig(
            self.mode,
            np.broadcast_to(self.q, (n,)).copy(),
            np.broadcast_to(self.alpha, (n,)).copy(),
            np.broadcast_to(self.c, (n,)).copy(),
            self.gain_cap,
            self.compensator,
        )


def ol_error(adjacency, pinning, zeta, x_leaders):
    """Unmasked neighbourhood bipartite state containment error on the observer layer."""
    zeta = np.asarray(zeta, dtype=float)
    return neighborhood_error(adjacency, pinning, zeta, zeta, np.asarray(x_leaders, dtype=float))


def observer_derivative(zeta, theta, xi_masked, gamma_ol, S, q=1.0, cap=DEFAULT_GAIN_CAP):
    """Returns ``(zeta_dot, theta_dot, capped)``."""
    xi_masked = np.asarray(xi_masked, dtype=float)
    gain, capped = capped_exp(theta, cap)
    dzeta = S @ np.asarray(zeta, dtype=float) + gain * xi_masked + np.asarray(gamma_ol, dtype=float)
    return dzeta, q * float(xi_masked @ xi_masked), bool(capped)


def compensator(eps, t, f: FollowerDynamics, syn: SynthesisResult, rho_hat, c=1.0, cap=DEFAULT_GAIN_CAP):
    """Attack compensation signal and the norm ``||eps^T P B||`` driving its gain."""
    v = f.B.T @ syn.P @ np.asarray(eps, dtype=float)
    nv = float(np.linalg.norm(v))
    mag, capped = capped_exp(rho_hat, cap)
    den = nv + np.exp(-c * t * t)
    gamma_hat = v * (mag / den) if den > 0 else np.zeros_like(v)
    return gamma_hat, nv, bool(capped)


def resilient_control(x, zeta, eps, rho_hat, t, f: FollowerDynamics, syn: SynthesisResult,
                      alpha=5.0, c=1.0, cap=DEFAULT_GAIN_CAP):
    """Returns ``(u, rho_hat_dot, gamma_hat)``."""
    gamma_hat, nv, _ = compensator(eps, t, f, syn, rho_hat, c, cap)
    u = syn.K @ np.asarray(x, dtype=float) + syn.H @ np.asarray(zeta, dtype=float) - gamma_hat
    return u, alpha * nv, gamma_hat


def standard_control(x, zeta, xi, theta, syn: SynthesisResult, S, q=1.0):
    """Baseline protocol with linear adaptive coupling; returns ``(u, zeta_dot, theta_dot)``."""
    xi = np.asarray(xi, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    u = syn.K @ np.asarray(x, dtype=float) + syn.H @ zeta
    return u, S @ zeta + theta * xi, q * float(xi @ xi)
