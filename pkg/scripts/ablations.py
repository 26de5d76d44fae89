"""Ablations on the bundled scenario: which part of the resilient protocol
carries the attack rejection.

Rows: full resilient protocol, resilient without the compensator, standard
protocol, and both protocols with observer-layer attacks only.

    python3 scripts/ablations.py [--t-end 18]
"""
import argparse
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from resboc.cli import summarize, verdict
from resboc.protocol import ProtocolConfig
from resboc.scenario import bundled, load_scenario
from resboc.sim import run


def _variant(sc, mode="resilient", compensator=True, layers=("actuator", "observer")):
    p = sc.protocol
    return replace(
        sc,
        protocol=ProtocolConfig(mode, p.q, p.alpha, p.c, p.gain_cap, compensator),
        attacks=[a for a in sc.attacks if a.layer in layers],
    )


def _summary(sc):
    return summarize(sc, run(sc))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--t-end", type=float, default=18.0)
    args = ap.parse_args()
    sc = replace(load_scenario(bundled()), t_end=args.t_end)
    rows = {
        "resilient": _variant(sc),
        "resilient, no compensator": _variant(sc, compensator=False),
        "standard": _variant(sc, "standard"),
        "resilient, observer attacks only": _variant(sc, layers=("observer",)),
        "standard, observer attacks only": _variant(sc, "standard", layers=("observer",)),
    }
    with ProcessPoolExecutor() as pool:
        out = dict(zip(rows, pool.map(_summary, rows.values())))
    fmt = lambda v: "n/a" if v is None else f"{v:10.4g}"  # noqa: E731
    print(f"{'variant':36s} {'max|e| pre':>10s} {'max|e| post':>11s} {'e(ts+5)/e(ts-1)':>16s}  bounded  diverged")
    for name, s in out.items():
        print(f"{name:36s} {fmt(s.max_es_pre)} {fmt(s.max_es_post):>11s} {fmt(s.divergence_ratio):>16s}"
              f"  {str(s.bounded):7s}  {s.diverged}")
    print("verdict (full attack):", verdict(out["resilient"], out["standard"]))
    print("verdict (observer only):", verdict(out["resilient, observer attacks only"], out["standard, observer attacks only"]))


if __name__ == "__main__":
    main()
