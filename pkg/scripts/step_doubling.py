"""Step-doubling study on the attack-free bundled scenario.

Prints the final-state differences between successive step halvings and their
ratio (16 for a fourth-order method in its asymptotic range) for both
protocols.

    python3 scripts/step_doubling.py [--t-end 18] [--dt 2e-3]
"""
import argparse
from dataclasses import replace

import numpy as np

from resboc.protocol import ProtocolConfig
from resboc.scenario import bundled, load_scenario
from resboc.sim import run


def final_state(sc):
    tr = run(sc)
    return np.concatenate([tr.x[-1], tr.zeta[-1].ravel(), tr.theta[-1], tr.rho[-1], tr.xl[-1].ravel()])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--t-end", type=float, default=18.0)
    ap.add_argument("--dt", type=float, nargs="+", default=[1e-2, 2e-3])
    args = ap.parse_args()
    base = replace(load_scenario(bundled()), attacks=[], t_end=args.t_end, record_stride=10**7)
    p = base.protocol
    for mode in ("standard", "resilient"):
        sc = replace(base, protocol=ProtocolConfig(mode, p.q, p.alpha, p.c, p.gain_cap, p.compensator))
        for dt in args.dt:
            f = [final_state(replace(sc, dt=dt / 2**k)) for k in range(3)]
            d1, d2 = np.linalg.norm(f[0] - f[1]), np.linalg.norm(f[1] - f[2])
            print(f"{mode:9s} dt={dt:.1e}: |f(dt)-f(dt/2)|={d1:.3e} |f(dt/2)-f(dt/4)|={d2:.3e} ratio={d1 / d2:.2f}")


if __name__ == "__main__":
    main()
