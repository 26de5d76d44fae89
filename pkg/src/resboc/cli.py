"""Command line entry point: ``resboc run|compare|verify|dump-normalized``."""
from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import AssumptionError, ScenarioError
from .graph import build_matrices, check_structural_balance, convexity_weights, gauge_residual, spectral_report
from .privacy import ProbeConfig, verify_mask_conditions
from .protocol import ProtocolConfig
from .scenario import dump_normalized, load_with_file, scenario_hash
from .sim import Scenario, SimTrace, run

EXIT_OK = 0
EXIT_FAILED_CHECKS = 1
EXIT_INVALID = 3
EXIT_DIVERGED = 4
EXIT_IO = 5

BOUND_FACTOR = 5.0
BOUND_SLACK = 0.5
DIVERGENCE_RATIO = 10.0


@dataclass
class RunSummary:
    scenario_hash: str
    mode: str
    completed: bool
    masks_enabled: bool
    attack_start: float | None
    pre_window: list | None
    post_window: list | None
    max_es_pre: float | None
    max_es_post: float | None
    max_hull_post: float | None
    final_es: float
    final_hull: float
    divergence_ratio: float | None
    abort: dict | None
    events: list = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def bounded(self) -> bool:
        """Post-attack containment error stays within a fixed multiple of its
        pre-attack level."""
        if not self.completed:
            return False
        if self.max_es_post is None:
            return bool(np.isfinite(self.final_es))
        return self.max_es_post <= BOUND_FACTOR * (self.max_es_pre or 0.0) + BOUND_SLACK

    @property
    def diverged(self) -> bool:
        if not self.completed:
            return True
        return self.divergence_ratio is not None and self.divergence_ratio >= DIVERGENCE_RATIO


def attack_start(sc: Scenario):
    return min((a.signal.t_start for a in sc.attacks), default=None)


def summarize(sc: Scenario, tr: SimTrace, wall=0.0) -> RunSummary:
    ts = attack_start(sc)
    t_last = float(tr.times[-1])
    pre = post = None
    max_pre = max_post = hull_post = ratio = None
    if ts is not None and ts < sc.t_end:
        pre = [ts - 2.0, ts]
        post = [ts + 2.0, sc.t_end]
        max_pre = tr.window_max(*pre, closed=False)
        max_post = tr.window_max(*post)
        hull_post = tr.window_max(*post, which="hull")
        e = tr.es_norm().max(axis=1)
        before = e[tr.at(ts - 1.0)]
        probe_t = ts + 5.0
        if t_last >= probe_t - 1e-9:
            ratio = float(e[tr.at(probe_t)] / max(before, 1e-300))
    return RunSummary(
        scenario_hash=scenario_hash(sc),
        mode=tr.mode,
        completed=tr.completed,
        masks_enabled=tr.masks_enabled,
        attack_start=ts,
        pre_window=pre,
        post_window=post,
        max_es_pre=max_pre,
        max_es_post=max_post,
        max_hull_post=hull_post,
        final_es=float(tr.es_norm()[-1].max()),
        final_hull=float(tr.hull[-1].max()),
        divergence_ratio=ratio,
        abort=tr.abort,
        events=tr.events,
        wall_clock=wall,
    )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _execute(sc: Scenario, out: Path, plots: bool):
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    tr = run(sc)
    summary = summarize(sc, tr, time.perf_counter() - t0)
    tr.to_csv(out / "trace.csv")
    doc = asdict(summary)
    doc.update(bounded=summary.bounded, diverged=summary.diverged)
    (out / "summary.json").write_text(json.dumps(_jsonable(doc), indent=2))
    if plots:
        from .plots import write_plots

        write_plots(tr, out)
    return summary


def _describe(s: RunSummary) -> str:
    fmt = lambda v: "n/a" if v is None else f"{v:.4g}"  # noqa: E731
    status = "completed" if s.completed else f"DIVERGED at t={s.abort['t']:.3f} ({s.abort['agent']})"
    return (
        f"[{s.mode}] {status}; masks {'on' if s.masks_enabled else 'OFF'}; "
        f"max|e| pre={fmt(s.max_es_pre)} post={fmt(s.max_es_post)}; "
        f"max hull dist post={fmt(s.max_hull_post)}; growth ratio={fmt(s.divergence_ratio)}; "
        f"gain caps={sum(e['kind'].startswith('gain_cap') for e in s.events)}; {s.wall_clock:.1f}s"
    )


def cmd_run(scenario, out=None, overrides=(), plots=False) -> int:
    sf, sc = load_with_file(scenario, overrides)
    out = Path(out or sf.output.dir)
    try:
        s = _execute(sc, out, plots or sf.output.plots)
    except OSError as exc:
        print(f"error: cannot write to {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    print(_describe(s))
    print(f"wrote {out / 'trace.csv'} and {out / 'summary.json'}")
    return EXIT_OK if s.completed else EXIT_DIVERGED


def _with_mode(sc: Scenario, mode: str) -> Scenario:
    p = sc.protocol
    return replace(sc, protocol=ProtocolConfig(mode, p.q, p.alpha, p.c, p.gain_cap, p.compensator))


def verdict(resilient: RunSummary, standard: RunSummary) -> str:
    if resilient.attack_start is None:
        ok = all(s.completed and s.final_hull <= 0.05 for s in (resilient, standard))
        return "both-converge" if ok else "inconsistent"
    if resilient.bounded and standard.diverged:
        return "paper-consistent"
    if resilient.bounded and standard.bounded and not standard.diverged:
        return "both-bounded"
    return "inconsistent"


def cmd_compare(scenario, out=None, overrides=(), plots=False) -> int:
    sf, sc = load_with_file(scenario, overrides)
    out = Path(out or sf.output.dir)
    modes = ("resilient", "standard")
    try:
        with ProcessPoolExecutor(max_workers=2) as pool:
            futs = {m: pool.submit(_execute, _with_mode(sc, m), out / m, plots or sf.output.plots) for m in modes}
            res = {m: f.result() for m, f in futs.items()}
    except OSError as exc:
        print(f"error: cannot write to {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    for m in modes:
        print(_describe(res[m]))
    v = verdict(res["resilient"], res["standard"])
    (out / "compare.json").write_text(
        json.dumps(_jsonable({"verdict": v, **{m: asdict(res[m]) for m in modes}}), indent=2)
    )
    print(f"verdict: {v}")
    return EXIT_OK


def verify_report(sc: Scenario, probe: ProbeConfig | None = None) -> list[dict]:
    """Machine checks on graph, synthesis and masks; one dict per check."""
    checks = []

    def add(name, passed, detail="", info=False):
        checks.append({"check": name, "passed": bool(passed), "detail": detail, "info": info})

    g = sc.graph
    bal = check_structural_balance(g)
    if bal.balanced:
        add("structural balance", True, f"V1={[i + 1 for i in bal.partition[0]]} V2={[i + 1 for i in bal.partition[1]]}")
        res = gauge_residual(g, bal.gauge)
        add("gauge residual |QAQ-|A||", res == 0.0, f"{res:.3g}")
    else:
        cyc = " -> ".join(str(c + 1) for c in bal.conflict_cycle)
        add("structural balance", False, f"violating cycle: {cyc}")

    gm = build_matrices(g)
    lr = spectral_report(gm)
    add("Phi spectra in open right half-plane", lr["eigs_positive"],
        f"min Re eig per leader {np.round(lr['phi_min_real_eig'], 4).tolist()}, sum {lr['phi_sum_min_real_eig']:.4g}")
    if bal.balanced:
        q = bal.gauge
        gauged = q @ np.linalg.inv(gm.phi_sum) @ q
        add("gauged inverse of Phi sum non-negative", np.min(gauged) >= -1e-10, f"min entry {np.min(gauged):.3g}")
        spec = max(
            np.max(np.abs(np.sort_complex(np.linalg.eigvals(pu)) - np.sort_complex(np.linalg.eigvals(ps))))
            for pu, ps in zip(gm.phi_unsigned, gm.phi_signed)
        )
        add("unsigned/signed Phi spectra agree", spec <= 1e-8, f"max gap {spec:.3g}")
    add("signed inverse of Phi sum non-negative", lr["inverse_nonnegative"],
        f"min entry {lr['phi_sum_inverse_min_entry']:.3g}", info=True)
    w = convexity_weights(gm)
    resid = float(np.max(np.abs(sum(a + b for a, b in w) - 1.0)))
    add("convexity weights sum to one", resid <= 1e-9, f"residual {resid:.3g}")
    wmin = float(min(min(a.min(), b.min()) for a, b in w))
    add("convexity weights non-negative", wmin >= -1e-10, f"min weight {wmin:.3g}", info=True)

    for i, (f, s) in enumerate(zip(sc.followers, sc.synthesize())):
        r1, r2 = s.regulator_residuals(f, sc.leader)
        rr = s.riccati_residual(f)
        hur = float(np.max(s.closed_loop_eigs(f).real))
        add(f"follower {i + 1} regulator residual", max(r1, r2) <= 1e-8, f"{max(r1, r2):.3g}")
        add(f"follower {i + 1} Riccati residual", rr <= 1e-7, f"{rr:.3g}")
        add(f"follower {i + 1} A+BK Hurwitz", hur < 0, f"max Re eig {hur:.4g}")

    m = sc.masks
    if not m.enabled:
        add("privacy masks", False, "masking disabled (identity map)")
    probe = probe or ProbeConfig()
    seen = set()
    for kind, params in [("leader", m.leader(i, r)) for i in range(sc.n) for r in range(sc.m)] + [
        ("follower", m.follower(j)) for j in range(sc.n)
    ]:
        key = (kind, repr(params))
        if key in seen:
            continue
        seen.add(key)
        if not m.enabled:
            params = type(params)(**{**params.__dict__, "phi": 0.0, "wp": np.zeros_like(params.wp)})
        rep = verify_mask_conditions(params, probe)
        label = f"{kind} mask phi={params.phi:g} sigma={params.sigma:g} wp={np.asarray(params.wp).tolist()}"
        for cond, r in rep.items():
            add(f"{label} {cond}", r.passed, r.detail + (f" witness={_fmt_witness(r.witness)}" if not r.passed else ""))
    return checks


def _fmt_witness(w):
    if isinstance(w, tuple):
        return "(" + ", ".join(_fmt_witness(v) for v in w) + ")"
    if isinstance(w, np.ndarray):
        return np.array2string(w, precision=4)
    return str(w)


def cmd_verify(scenario, overrides=()) -> tuple[int, list]:
    _, sc = load_with_file(scenario, overrides)
    checks = verify_report(sc)
    for c in checks:
        tag = "INFO" if c["info"] else ("PASS" if c["passed"] else "FAIL")
        print(f"{tag:4s}  {c['check']}: {c['detail']}")
    failed = [c for c in checks if not c["passed"] and not c["info"]]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return (EXIT_OK if not failed else EXIT_FAILED_CHECKS), checks


def cmd_dump(scenario, overrides=(), out=None) -> int:
    sf, sc = load_with_file(scenario, overrides)
    text = dump_normalized(sc, sf.name, sf.output)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="resboc", description=__doc__)
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in ("run", "compare", "verify", "dump-normalized"):
        p = sub.add_parser(verb)
        p.add_argument("--scenario", required=True)
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
        if verb in ("run", "compare", "dump-normalized"):
            p.add_argument("--out")
        if verb in ("run", "compare"):
            p.add_argument("--plots", action="store_true")
    args = ap.parse_args(argv)
    try:
        if args.verb == "run":
            return cmd_run(args.scenario, args.out, args.override, args.plots)
        if args.verb == "compare":
            return cmd_compare(args.scenario, args.out, args.override, args.plots)
        if args.verb == "verify":
            return cmd_verify(args.scenario, args.override)[0]
        return cmd_dump(args.scenario, args.override, args.out)
    except (ScenarioError, AssumptionError) as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
