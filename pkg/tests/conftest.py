import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import strategies as st

from resboc.graph import SignedDigraph
from resboc.privacy import MaskSet
from resboc.protocol import ProtocolConfig
from resboc.scenario import bundled, load_scenario
from resboc.sim import run

# design values for the bundled six-follower network, two decimals
REF = {
    "Pi12": [[-0.67, 1.33], [1.33, -0.67]],
    "Gamma12": [[-1.33, 4.67], [3.33, -4.67]],
    "Pi34": [[1.33, -0.67], [-0.67, 1.33]],
    "Gamma34": [[-0.44, 7.56], [0.89, -7.11]],
    "Pi56": [[1.50, -1.00], [-0.50, 2.00], [0.50, -1.00]],
    "Gamma56": [[0.50, -4.00], [1.00, 5.00]],
    "K12": [[-0.64, -0.10], [-0.10, -0.49]],
    "H12": [[-1.62, 5.46], [3.92, -4.86]],
    "K34": [[-0.37, -0.59], [-0.93, -0.19]],
    "H34": [[-0.35, 8.09], [2.00, -7.47]],
    "K56": [[-0.95, 0.0, -0.38], [0.0, -0.65, 0.0]],
    "H56": [[2.12, -5.34], [0.68, 6.29]],
}


def random_balanced_graph(rng, n, m, density=0.4, signed=True):
    """Random structurally balanced graph with every follower reachable.

    Follower 0 is pinned to leader 0 and follower i > 0 listens to some
    j < i, so the leaders reach everyone.
    """
    side = rng.integers(0, 2, size=n) if signed else np.zeros(n, dtype=int)
    sign = np.where(side[:, None] == side[None, :], 1.0, -1.0)
    mask = rng.random((n, n)) < density
    for i in range(1, n):
        mask[i, rng.integers(0, i)] = True
    np.fill_diagonal(mask, False)
    adj = np.where(mask, rng.uniform(0.2, 2.0, (n, n)) * sign, 0.0)
    pin = np.where(rng.random((n, m)) < density, rng.uniform(0.2, 2.0, (n, m)), 0.0)
    pin[0, 0] = rng.uniform(0.2, 2.0)
    pin *= rng.choice([-1.0, 1.0], size=(n, m)) if signed else 1.0
    return SignedDigraph(adj, pin)


@st.composite
def balanced_graphs(draw, max_n=8, max_m=4, signed=True):
    n = draw(st.integers(2, max_n))
    m = draw(st.integers(1, max_m))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_balanced_graph(np.random.default_rng(seed), n, m, signed=signed)


@st.composite
def signed_graphs(draw, max_n=7):
    """Arbitrary signed graphs (not necessarily balanced), all pinned."""
    n = draw(st.integers(2, max_n))
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    adj = rng.choice([-1.0, 0.0, 0.0, 1.0], size=(n, n)) * rng.uniform(0.5, 1.5, (n, n))
    np.fill_diagonal(adj, 0.0)
    return SignedDigraph(adj, np.ones((n, 1)))


def brute_force_balanced(adj):
    """Exhaustive search over all sign assignments."""
    n = adj.shape[0]
    for bits in itertools.product([1.0, -1.0], repeat=n - 1):
        q = np.array((1.0,) + bits)
        if np.all(q[:, None] * adj * q[None, :] >= 0):
            return True, q
    return False, None


@pytest.fixture(scope="session")
def sec4():
    return load_scenario(bundled())


@pytest.fixture(scope="session")
def sec4_syn(sec4):
    return sec4.synthesize()


_RUNS = {}


def cached_run(key, sc):
    if key not in _RUNS:
        _RUNS[key] = run(sc)
    return _RUNS[key]


def variant(sc, mode="resilient", attacks=True, masks=True, **kw):
    p = sc.protocol
    out = replace(
        sc,
        protocol=ProtocolConfig(mode, p.q, p.alpha, p.c, p.gain_cap, kw.pop("compensator", True)),
        attacks=sc.attacks if attacks is True else list(attacks or []),
        **kw,
    )
    if not masks:
        out = replace(out, masks=MaskSet.disabled(out.n, out.m, out.leader.l))
    return out


@pytest.fixture(scope="session")
def traces(sec4):
    """Lazily simulated variants of the bundled scenario, shared across modules."""

    def get(mode="resilient", attacks=True, masks=True):
        key = (mode, attacks, masks)
        return cached_run(key, variant(sec4, mode, attacks, masks))

    return get


ACCEPTANCE: dict = {}


def acceptance(k, ok, detail):
    """Record and print one acceptance verdict."""
    line = f"ACCEPTANCE {k}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[k] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
