import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.integrate import solve_ivp

from resboc.graph import SignedDigraph
from resboc.privacy import MaskSet, masked_ol_error
from resboc.protocol import (
    AttackSignal,
    ProtocolConfig,
    compensator,
    eval_attack,
    observer_derivative,
    ol_error,
    resilient_control,
    standard_control,
)
from resboc.sim import ClosedLoop, Scenario, run
from resboc.synthesis import FollowerDynamics, LeaderDynamics, SynthesisResult

from conftest import cached_run, variant

S = np.array([[0.0, -2.0], [1.0, 0.0]])


def _scalar_syn(P=1.0, K=0.0, H=0.0):
    one = np.array([[1.0]])
    return SynthesisResult(Pi=one, Gamma=one * 0, P=one * P, K=one * K, H=one * H, Q=one, U=one)


def test_attack_inactive_before_start():
    a = AttackSignal([2.3, -1.7], [0.12, 0.27], t_start=8.0)
    np.testing.assert_array_equal(eval_attack(a, 7.999), [0.0, 0.0])
    np.testing.assert_allclose(a(8.0), [2.3, -1.7])


def test_attack_unit_coefficient():
    assert eval_attack(AttackSignal([1.0], [0.5]), 2.0)[0] == pytest.approx(math.e, abs=1e-12)


@pytest.mark.parametrize("rates", [[0.0], [-0.1]])
def test_attack_rates_must_be_positive(rates):
    with pytest.raises(ValueError):
        AttackSignal([1.0], rates)


def test_observer_derivative_examples():
    z = np.array([0.3, -0.2])
    dz, dth, capped = observer_derivative(z, 0.4, np.zeros(2), np.zeros(2), S)
    np.testing.assert_allclose(dz, S @ z)
    assert dth == 0.0 and not capped
    dz, dth, _ = observer_derivative(np.zeros(2), 0.0, np.array([1.0, 0.0]), np.zeros(2), np.zeros((2, 2)))
    np.testing.assert_allclose(dz, [1.0, 0.0])
    assert dth == 1.0


def test_observer_gain_cap():
    dz, _, capped = observer_derivative(np.zeros(1), 50.0, np.ones(1), np.zeros(1), np.zeros((1, 1)), cap=1e9)
    assert capped and dz[0] == pytest.approx(1e9)


def test_resilient_control_zero_error():
    f = FollowerDynamics([[-1.0]], [[1.0]], [[1.0]])
    syn = _scalar_syn(K=-2.0, H=0.5)
    u, drho, gh = resilient_control([0.7], [0.2], [0.0], 3.0, 4.0, f, syn)
    assert gh[0] == 0.0 and drho == 0.0
    assert u[0] == pytest.approx(-2.0 * 0.7 + 0.5 * 0.2)


def test_resilient_control_scalar():
    f = FollowerDynamics([[0.0]], [[1.0]], [[1.0]])
    u, drho, gh = resilient_control([0.0], [0.0], [1.0], 0.0, 0.0, f, _scalar_syn(), alpha=5.0, c=1.0)
    assert gh[0] == pytest.approx(0.5)
    assert drho == pytest.approx(5.0)
    assert u[0] == pytest.approx(-0.5)


def test_compensator_large_time_limit():
    f = FollowerDynamics(np.eye(2) * -1, np.array([[1.0, 0.0], [0.5, 2.0]]), np.eye(2))
    P = np.array([[2.0, 0.3], [0.3, 1.0]])
    syn = SynthesisResult(np.eye(2), np.zeros((2, 2)), P, np.zeros((2, 2)), np.zeros((2, 2)), np.eye(2), np.eye(2))
    eps = np.array([0.4, -1.1])
    gh, nv, _ = compensator(eps, 50.0, f, syn, 1.3)
    v = f.B.T @ P @ eps
    np.testing.assert_allclose(gh, v / np.linalg.norm(v) * math.exp(1.3), atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=2, max_size=2),
    st.floats(-2, 5),
    st.floats(0, 10),
    st.integers(0, 2**32 - 1),
)
def test_compensator_direction(eps, rho, t, seed):
    rng = np.random.default_rng(seed)
    L = rng.normal(size=(2, 2))
    P = L @ L.T + 0.1 * np.eye(2)
    B = rng.normal(size=(2, 1))
    f = FollowerDynamics(-np.eye(2), B, np.eye(2))
    syn = SynthesisResult(np.eye(2), np.zeros((1, 2)), P, np.zeros((1, 2)), np.zeros((1, 2)), np.eye(2), np.eye(1))
    gh, nv, _ = compensator(np.array(eps), t, f, syn, rho)
    v = B.T @ P @ np.array(eps)
    assume(np.all(v == 0) or v @ v > 1e-200)
    # gamma_hat = s * v with s >= 0; zero exactly when v is
    if np.all(v == 0):
        assert np.all(gh == 0)
    else:
        s = gh @ v / (v @ v)
        assert s > 0
        np.testing.assert_allclose(gh, s * v, atol=1e-12 * (1 + abs(s)))


def test_standard_control_zero_error():
    syn = _scalar_syn(K=-1.0, H=2.0)
    u, dz, dth = standard_control([1.0], [0.5], [0.0], 3.0, syn, np.array([[0.0]]))
    assert u[0] == pytest.approx(0.0)
    assert dz[0] == 0.0 and dth == 0.0


def test_standard_coupling_is_linear():
    syn = _scalar_syn()
    _, dz, dth = standard_control([0.0], [0.0], [2.0], 3.0, syn, np.array([[0.0]]), q=0.5)
    assert dz[0] == pytest.approx(6.0) and dth == pytest.approx(2.0)


def _single_agent_scenario(t_end=10.0):
    graph = SignedDigraph([[0.0]], [[1.0]])
    leader = LeaderDynamics(S, np.eye(2))
    return Scenario(
        graph=graph,
        followers=[FollowerDynamics(S, np.eye(2), np.eye(2))],
        x0=[np.zeros(2)],
        leader=leader,
        xr0=np.array([[1.0, 0.0]]),
        Q=[np.eye(2)],
        U=[np.eye(2)],
        masks=MaskSet.disabled(1, 1, 2),
        protocol=ProtocolConfig("resilient", q=1.0),
        t_end=t_end,
        dt=1e-3,
        record_stride=100,
    )


def test_single_agent_observer_converges():
    sc = _single_agent_scenario()
    tr = run(sc)

    # adaptive high-accuracy reference built from the per-agent law
    def rhs(t, s):
        xr, z, th = s[:2], s[2:4], s[4]
        dz, dth, _ = observer_derivative(z, th, xr - z, np.zeros(2), S, q=1.0)
        return np.concatenate([S @ xr, dz, [dth]])

    ref = solve_ivp(rhs, (0, 10), [1.0, 0.0, 0.0, 0.0, 0.0], method="DOP853", rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(tr.zeta[-1, 0], ref.y[2:4, -1], atol=1e-8)
    assert tr.theta[-1, 0] == pytest.approx(ref.y[4, -1], abs=1e-8)
    assert np.linalg.norm(tr.zeta[-1, 0] - tr.xl[-1, 0]) <= 1e-2


@pytest.mark.parametrize("mode", ["resilient", "standard"])
def test_vectorised_loop_matches_per_agent_laws(sec4, mode):
    sc = variant(sec4, mode)
    loop = ClosedLoop(sc)
    rng = np.random.default_rng(7)
    s = rng.normal(size=loop.size)
    s[loop.sl_th] = rng.uniform(0, 2, sc.n)
    s[loop.sl_rho] = rng.uniform(0, 2, sc.n)
    t = 9.3
    sig = loop.signals(t, s)
    x, xl, zeta, th, rho = loop.unpack(s)
    xi_plain = ol_error(sc.graph.adjacency, sc.graph.pinning, zeta, xl)
    xi_m = masked_ol_error(sc.graph, zeta, xl, t, th, sc.masks)
    for i, (f, syn) in enumerate(zip(sc.followers, loop.syn)):
        xs = x[loop.x_off[i]:loop.x_off[i + 1]]
        us = slice(loop.u_off[i], loop.u_off[i + 1])
        eps = xs - syn.Pi @ zeta[i]
        ga = sum((a.signal(t) for a in sc.attacks if a.agent == i and a.layer == "actuator"), np.zeros(f.m))
        go = sum((a.signal(t) for a in sc.attacks if a.agent == i and a.layer == "observer"), np.zeros(2))
        if mode == "resilient":
            u, drho, gh = resilient_control(xs, zeta[i], eps, rho[i], t, f, syn, 5.0, 1.0)
            dz, dth, _ = observer_derivative(zeta[i], th[i], xi_m[i], go, sc.leader.S)
            assert sig["drho"][i] == pytest.approx(drho, rel=1e-12)
            np.testing.assert_allclose(sig["gamma_hat"][us], gh, rtol=1e-12, atol=1e-12)
        else:
            u, dz, dth = standard_control(xs, zeta[i], xi_plain[i], th[i], syn, sc.leader.S)
            dz = dz + go
        np.testing.assert_allclose(sig["u"][us], u, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(sig["dzeta"][i], dz, rtol=1e-12, atol=1e-12)
        assert sig["dtheta"][i] == pytest.approx(dth, rel=1e-12)
        np.testing.assert_allclose(sig["dx"][loop.x_off[i]:loop.x_off[i + 1]], f.A @ xs + f.B @ (u + ga), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(sig["eps"][loop.x_off[i]:loop.x_off[i + 1]], eps, atol=1e-14)


@pytest.mark.parametrize("mode", ["resilient", "standard"])
def test_adaptive_gains_non_decreasing(traces, mode):
    tr = traces(mode)
    assert np.all(np.diff(tr.theta, axis=0) >= 0)
    assert np.all(np.diff(tr.rho, axis=0) >= 0)
    assert np.all(tr.theta[0] == 0)


def test_standard_converges_before_attack(traces):
    tr = traces("standard", attacks=False)
    assert tr.es_norm()[tr.at(7.0)].max() <= 0.1


def test_standard_diverges_under_attack(traces):
    tr = traces("standard")
    e = np.linalg.norm(tr.es.reshape(len(tr.times), -1), axis=1)
    assert e[tr.at(13.0)] >= 10 * e[tr.at(7.0)]


def test_attack_free_equivalence_after_transient(traces):
    a = traces("standard", attacks=False, masks=False)
    b = traces("resilient", attacks=False, masks=False)
    late = a.times >= 5.0
    assert np.max(np.abs(a.es_norm() - b.es_norm())[late]) <= 0.05


@pytest.mark.xfail(strict=True, reason="observer couplings exp(theta) and theta differ by 1 at start-up")
def test_attack_free_equivalence_full_horizon(traces):
    a = traces("standard", attacks=False, masks=False)
    b = traces("resilient", attacks=False, masks=False)
    assert np.max(np.abs(a.es_norm() - b.es_norm())) <= 0.05


def test_removing_compensator_reproduces_divergence(sec4):
    tr = cached_run("nocomp", variant(sec4, compensator=False))
    e = np.linalg.norm(tr.es.reshape(len(tr.times), -1), axis=1)
    assert e[tr.at(13.0)] >= 10 * e[tr.at(7.0)]
    resilient = cached_run(("resilient", True, True), variant(sec4))
    assert tr.window_max(10, 18) > 10 * resilient.window_max(10, 18)
