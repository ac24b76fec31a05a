"""Command-line scenario runner.

Subcommands::

    simulate       prepare -> interact -> drift -> measure -> update
    compare        full hybrid integration against the analytic shift
    mixture-equiv  phase-space equivalence of the two mixture forms
    sample         Monte Carlo pointer positions and a KS check

Exit codes: 0 pass, 1 input error, 2 numerical failure, 3 a scientific
gate was missed.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import analytic, dynamics, measurement, phase_space
from .core import (
    PRESETS,
    AlphaProfile,
    Grid1D,
    ParameterError,
    PhysicalParams,
    validate_params,
)

log = logging.getLogger("cqmeasure")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_GATE = 0, 1, 2, 3

# Below this many samples the KS gate is not applied.
KS_MIN_SAMPLES = 10_000
KS_GATE = 0.02

DEFAULT_SCENARIO = {
    "preset": "desk",
    "seed": 12345,
    "grid": {"nx": 201, "nq": 201},
    "scheme": {"scheme": "interaction-advection", "flux": "upwind", "steps": 100, "cfl": 0.4},
    "schedule": [
        {"action": "evolve", "t": 0.01},
        {"action": "evolve", "t": 2.0},
        {"action": "measure", "mode": "ideal"},
        {"action": "export", "target": "pointer"},
        {"action": "export", "target": "posterior"},
    ],
}

DEFAULT_COMPARE = {
    "preset": "strong",
    "grid": {"nx": 401, "nq": 401},
    "scheme": {"flux": "upwind", "steps": 100, "cfl": 0.4},
    "threshold": 5e-3,
    "relative_threshold": 1e-3,
    "stride": 10,
}

DEFAULT_SAMPLE = {"preset": "desk", "seed": 12345, "t": 2.0, "n": 100_000, "bins": 200}


class InputError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration

def _load_config(path: Optional[str], default: dict) -> dict:
    cfg = copy.deepcopy(default)
    if path is None:
        return cfg
    try:
        text = Path(path).read_text(encoding="utf-8")
        user = json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    if not isinstance(user, dict):
        raise InputError("config must be a JSON object")
    cfg.update(user)
    return cfg


def resolve_params(cfg: dict) -> PhysicalParams:
    """Preset (default desk) overlaid with any explicit ``params`` entries."""
    name = cfg.get("preset", "desk")
    if name not in PRESETS:
        raise InputError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    base = PRESETS[name].to_dict()
    over = cfg.get("params", {})
    unknown = set(over) - set(base)
    if unknown:
        raise InputError(f"unknown parameter keys {sorted(unknown)}")
    base.update(over)
    try:
        p = PhysicalParams.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise InputError(str(exc)) from None
    return validate_params(p)


def _profile(cfg: dict, p: PhysicalParams) -> AlphaProfile:
    if "alpha" in cfg:
        return AlphaProfile(tuple(tuple(float(v) for v in seg) for seg in cfg["alpha"]))
    return AlphaProfile.from_params(p)


def _scheme(cfg: dict, p: PhysicalParams, default_scheme: str) -> dynamics.SchemeConfig:
    s = cfg.get("scheme", {})
    if "dt" in s:
        dt = float(s["dt"])
    else:
        steps = int(s.get("steps", 100))
        if steps < 1:
            raise InputError("scheme.steps must be >= 1")
        dt = p.epsilon / steps
    try:
        return dynamics.SchemeConfig(dt, s.get("scheme", default_scheme), s.get("flux", "upwind"), float(s.get("cfl", 0.4)))
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _grid(cfg: dict, p: PhysicalParams):
    g = cfg.get("grid", {})
    nx = int(g.get("nx", 201))
    nq = int(g.get("nq", nx))
    if nx < 5 or nq < 5:
        raise InputError("grids need at least 5 points per axis")
    return dynamics.interaction_grid(p, nx, nq)


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_density_csv(path: Path, cols: dict[str, np.ndarray]) -> None:
    names = list(cols)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(names) + "\n")
        for row in zip(*(cols[n] for n in names)):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


# --------------------------------------------------------------------------
# SVG

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def write_svg(path, series: list[tuple[str, np.ndarray, np.ndarray]], title: str, xlabel: str, ylabel: str,
              width: int = 640, height: int = 400) -> None:
    """Line plot of ``(label, x, y)`` series as a standalone SVG file."""
    left, right, top, bottom = 60, 20, 30, 45
    xs = np.concatenate([s[1] for s in series])
    ys = np.concatenate([s[2] for s in series])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = 0.0, float(ys.max()) * 1.05 or 1.0
    sx = lambda x: left + (x - x0) / (x1 - x0) * (width - left - right)
    sy = lambda y: height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle">{title}</text>',
        f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" y2="{height - bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 10}" text-anchor="middle">{xlabel}</text>',
        f'<text x="15" y="{height / 2:.1f}" text-anchor="middle" transform="rotate(-90 15 {height / 2:.1f})">{ylabel}</text>',
    ]
    for v in np.linspace(x0, x1, 5):
        out.append(f'<text x="{sx(v):.1f}" y="{height - bottom + 15}" text-anchor="middle">{v:.3g}</text>')
    for v in np.linspace(y0, y1, 5):
        out.append(f'<text x="{left - 5}" y="{sy(v) + 4:.1f}" text-anchor="end">{v:.3g}</text>')
    for i, (label, x, y) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{width - right - 5}" y="{top + 15 * (i + 1)}" text-anchor="end" fill="{color}">{label}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# simulate

@dataclass
class _RunState:
    t: float = 0.0
    measured: Optional[measurement.Posterior] = None
    q_prime: Optional[float] = None


def _check_schedule(schedule: list[dict], p: PhysicalParams) -> None:
    last = 0.0
    seen_measure = False
    for item in schedule:
        action = item.get("action")
        if action not in ("evolve", "measure", "export"):
            raise InputError(f"unknown schedule action {action!r}")
        if action == "evolve":
            t = float(item["t"])
            if not t > last:
                raise InputError(f"schedule times must increase strictly; {t} after {last}")
            last = t
        elif action == "measure":
            if not last > p.epsilon:
                raise InputError("the first measurement must come after the interaction window")
            if item.get("mode", "ideal") not in ("ideal", "noisy"):
                raise InputError(f"unknown measurement mode {item.get('mode')!r}")
            if item.get("mode") == "noisy" and not float(item.get("sigma_m", 0)) > 0:
                raise InputError("noisy measurement needs sigma_m > 0")
            seen_measure = True
        elif action == "export" and item.get("target") == "posterior" and not seen_measure:
            raise InputError("posterior export before any measurement")


def run_scenario(cfg: dict, out: Path, svg: bool = False) -> dict:
    """Run a scenario config, writing outputs to ``out``; returns the manifest."""
    p = resolve_params(cfg)
    seed = int(cfg.get("seed", 0))
    schedule = cfg.get("schedule", [])
    _check_schedule(schedule, p)
    profile = _profile(cfg, p)
    grid = _grid(cfg, p)
    scheme = _scheme(cfg, p, "interaction-advection")
    rng = np.random.default_rng(seed)
    manifest: dict = {"config": cfg, "params": p.to_dict(), "seed": seed, "events": [], "tolerances": {}}
    run = _RunState()
    j = analytic.initial_joint(p)
    state = j.on_grid(grid)
    files: list[str] = []

    for item in schedule:
        action = item["action"]
        if action == "evolve":
            t = float(item["t"])
            t_int = min(t, p.epsilon)
            if t_int > state.t:
                res = dynamics.evolve(state, p, profile, t_int, scheme, stride=10**9, energy=False)
                state = res.state
                ref = dynamics.analytic_reference(j, grid, profile)(t_int)
                l1 = dynamics.l1_distance_2d(state.P, ref, grid)
                manifest["events"].append(
                    {"action": "interact", "t": t_int, "steps": res.steps, "L1_vs_analytic": l1,
                     "max_mass_drift": res.max_mass_drift}
                )
                manifest["tolerances"]["interaction_L1"] = l1
            run.t = t
            if t > p.epsilon:
                manifest["events"].append({"action": "drift", "t": t})
        elif action == "measure":
            t_m = run.t
            # The regime ratio is recorded in the manifest instead of warned about.
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", analytic.RegimeViolation)
                mix = measurement.decompose_pointer_mixture(p, t_m)
            q_prime, pointer = measurement.sample_measurement(mix, rng.integers(2**63))
            x_m = float(pointer.position(t_m))
            mode = item.get("mode", "ideal")
            sigma_m = float(item.get("sigma_m", 0.0)) if mode == "noisy" else 0.0
            if sigma_m > 0:
                x_m += sigma_m * float(rng.standard_normal())
            rec = measurement.MeasurementRecord(t_m, x_m, sigma_m)
            post = measurement.update_quantum(rec, p)
            run.measured, run.q_prime = post, q_prime
            event = {
                "action": "measure", "mode": mode, "t_m": t_m, "q_prime": q_prime, "x_m": x_m,
                "sigma_m": sigma_m, "q_m": post.q_m, "sigma_Q_m": post.sigma_Q_m,
                "narrow_ratio": analytic.narrow_regime_ratio(p, t_m),
            }
            if mode == "ideal":
                event["q_m_formula_gap"] = abs(post.q_m - x_m / (p.lam * t_m))
                manifest["tolerances"]["q_m_formula_gap"] = event["q_m_formula_gap"]
            manifest["events"].append(event)
        elif action == "export":
            target = item.get("target")
            if target == "pointer":
                name = f"pointer_t{run.t:g}.csv"
                _export_pointer(p, state, run.t, out / name)
                files.append(name)
                if svg:
                    write_svg(out / f"pointer_t{run.t:g}.svg", _pointer_series(p, run.t),
                              "pointer density", "x", "P_C")
                    files.append(f"pointer_t{run.t:g}.svg")
            elif target == "posterior":
                post = run.measured
                g = Grid1D.covering(post.quantum, 801)
                post.write_csv(out / "posterior.csv", g)
                _dump(post.to_dict(), out / "posterior.json")
                files += ["posterior.csv", "posterior.json"]
            elif target == "joint":
                X, Q = grid.mesh()
                _write_density_csv(out / "joint.csv", {"x": X.ravel(), "q": Q.ravel(), "P": state.P.ravel()})
                files.append("joint.csv")
            else:
                raise InputError(f"unknown export target {target!r}")
    manifest["files"] = files
    return manifest


def _export_pointer(p: PhysicalParams, state, t: float, path: Path) -> None:
    if t <= p.epsilon:
        Pc, _ = dynamics.marginals(state)
        x = state.grid.x.points
        exact = analytic.pointer_marginal_exact(p, p.lam * t).pdf(x)
        _write_density_csv(path, {"x": x, "numeric": Pc, "analytic": exact})
        return
    dens = analytic.free_pointer_density(p, t, full_width=True)
    x = Grid1D.covering(dens, 801).points
    _write_density_csv(path, {"x": x, "full_width": dens.pdf(x), "narrow": analytic.free_pointer_density(p, t).pdf(x)})


def _pointer_series(p: PhysicalParams, t_end: float) -> list:
    times = [t for t in (p.epsilon * 1.0001, 0.25 * t_end, 0.5 * t_end, t_end) if t > p.epsilon]
    dens = [analytic.free_pointer_density(p, t, full_width=True) for t in times]
    lo = min(Grid1D.covering(d, 2).lo for d in dens)
    hi = max(Grid1D.covering(d, 2).hi for d in dens)
    x = np.linspace(lo, hi, 600)
    return [(f"t={t:.3g}", x, d.pdf(x)) for t, d in zip(times, dens)]


def cmd_simulate(args) -> int:
    out = Path(args.out)
    try:
        cfg = _load_config(args.config, DEFAULT_SCENARIO)
        if args.seed is not None:
            cfg["seed"] = args.seed
        resolve_params(cfg)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for v in exc.violations:
            print(f"  {v}", file=sys.stderr)
        return EXIT_INPUT
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out.mkdir(parents=True, exist_ok=True)
    try:
        manifest = run_scenario(cfg, out, svg=args.svg)
    except (InputError, ParameterError, measurement.InvalidRecord, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (dynamics.CFLViolation, dynamics.NonFiniteField, dynamics.DensityFloorViolation) as exc:
        _dump({"error": type(exc).__name__, "message": str(exc), "config": cfg}, out / "failure.json")
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _dump(manifest, out / "manifest.json")
    print(f"wrote {out / 'manifest.json'}")
    return EXIT_OK


# --------------------------------------------------------------------------
# compare

def cmd_compare(args) -> int:
    out = Path(args.out)
    try:
        cfg = _load_config(args.config, DEFAULT_COMPARE)
        p = resolve_params(cfg)
        grid = _grid(cfg, p)
        scheme = _scheme(cfg, p, "full-hybrid")
        profile = _profile(cfg, p)
    except (ParameterError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    threshold = float(args.threshold if args.threshold is not None else cfg["threshold"])
    rel_threshold = float(cfg.get("relative_threshold", 1e-3))
    out.mkdir(parents=True, exist_ok=True)
    try:
        cmp = dynamics.compare_with_shift(p, grid, scheme, profile, stride=int(cfg.get("stride", 10)))
    except (dynamics.CFLViolation, dynamics.NonFiniteField, dynamics.DensityFloorViolation) as exc:
        _dump({"error": type(exc).__name__, "message": str(exc), "config": cfg}, out / "failure.json")
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    _write_density_csv(out / "l1_vs_time.csv", {"t": np.array(cmp.times), "L1": np.array(cmp.l1_trace)})
    v = float(cfg.get("probe_velocity", 1e-3))
    rep = dynamics.residual_report(p, v, p.epsilon, p.q0)
    with open(out / "residuals.csv", "w", encoding="utf-8") as fh:
        fh.write("term,magnitude,ratio_to_kept\n")
        fh.write(f"kept,{rep.kept!r},1.0\n")
        for name, ratio in rep.ratios().items():
            fh.write(f"{name},{getattr(rep, name)!r},{ratio!r}\n")
    passed_abs = cmp.l1_full <= threshold
    passed_rel = cmp.relative_dropped <= rel_threshold
    summary = {
        "params": p.to_dict(),
        "threshold": threshold,
        "relative_threshold": rel_threshold,
        "L1_full_vs_shift": cmp.l1_full,
        "L1_advection_vs_shift": cmp.l1_advection,
        "L1_full_vs_advection": cmp.l1_dropped,
        "shift_size": cmp.shift_size,
        "relative_dropped": cmp.relative_dropped,
        "steps": cmp.steps,
        "max_mass_drift": cmp.max_mass_drift,
        "passed": bool(passed_abs and passed_rel),
    }
    _dump(summary, out / "compare.json")
    if args.svg:
        write_svg(out / "l1_vs_time.svg", [("L1(full, shift)", np.array(cmp.times), np.array(cmp.l1_trace))],
                  "distance to the shift solution", "t", "L1")
    print(f"L1(full, shift) = {cmp.l1_full:.3e} (threshold {threshold:g}); "
          f"dropped-term share = {cmp.relative_dropped:.3e} (threshold {rel_threshold:g})")
    return EXIT_OK if summary["passed"] else EXIT_GATE


# --------------------------------------------------------------------------
# mixture-equiv

def equivalence_suite(specs, times=(0.5, 1.0, 2.0), n: int = 401, swap: bool = True) -> list[dict]:
    rows = []
    for i, spec in enumerate(specs):
        grid = phase_space.grid_for(spec, times, n)
        partner = phase_space.equivalence_transform(spec)
        if not swap:
            partner = phase_space.MixtureSpec(partner.representation, spec.label, spec.profile, spec.m)
        back = phase_space.equivalence_transform(partner) if swap else None
        for t in times:
            a = phase_space.density(spec, grid, t)
            b = phase_space.density(partner, grid, t)
            rows.append({"spec": i, "t": t, "max_diff": float(np.max(np.abs(a.rho - b.rho))), "mass": a.mass,
                         "involution": back == spec if swap else None})
    return rows


def cmd_mixture_equiv(args) -> int:
    out = Path(args.out)
    try:
        specs = phase_space.bundled_specs(args.seed if args.seed is not None else 20240101)
        rows = equivalence_suite(specs, swap=not args.unswapped)
    except ValueError as exc:
        print(f"grid construction failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out.mkdir(parents=True, exist_ok=True)
    worst = max(r["max_diff"] for r in rows)
    ok = worst < 1e-10 and all(r["involution"] is not False for r in rows)
    _dump({"rows": rows, "max_diff": worst, "passed": ok, "specs": [s.to_dict() for s in specs]}, out / "mixture_equiv.json")
    print(f"max pointwise difference {worst:.3e} over {len(rows)} cases")
    return EXIT_OK if ok else EXIT_GATE


# --------------------------------------------------------------------------
# sample

def cmd_sample(args) -> int:
    out = Path(args.out)
    try:
        cfg = _load_config(args.config, DEFAULT_SAMPLE)
        p = resolve_params(cfg)
    except (ParameterError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    n = int(args.n if args.n is not None else cfg["n"])
    if n < 100:
        print(f"error: n must be >= 100, got {n}", file=sys.stderr)
        return EXIT_INPUT
    seed = int(args.seed if args.seed is not None else cfg.get("seed", 0))
    t = float(cfg.get("t", 2.0))
    if not t > p.epsilon:
        print(f"error: t = {t} must exceed epsilon = {p.epsilon}", file=sys.stderr)
        return EXIT_INPUT
    out.mkdir(parents=True, exist_ok=True)
    x = measurement.monte_carlo_pointer(p, t, n, seed)
    _write_density_csv(out / "samples.csv", {"x": x})
    ref = analytic.free_pointer_density(p, t)
    edges = np.linspace(*_hist_range(ref), int(cfg.get("bins", 200)) + 1)
    counts, _ = np.histogram(x, bins=edges)
    centers = 0.5 * (edges[1:] + edges[:-1])
    width = edges[1] - edges[0]
    emp = counts / (n * width)
    _write_density_csv(out / "histogram.csv", {"x": centers, "count": counts.astype(float), "empirical": emp,
                                                "narrow": ref.pdf(centers)})
    ks, pval = measurement.pointer_ks(x, p, t)
    gated = n >= KS_MIN_SAMPLES
    passed = (ks < KS_GATE) if gated else True
    report = {"n": n, "seed": seed, "t": t, "ks": ks, "p_value": pval, "gate": KS_GATE, "gated": gated,
              "passed": passed, "params": p.to_dict()}
    _dump(report, out / "ks_report.json")
    if args.svg:
        series = [("samples", centers, emp), ("narrow density", centers, ref.pdf(centers))]
        series += _pointer_series(p, t)[:-1]
        write_svg(out / "pointer_split.svg", series, "pointer density", "x", "density")
    if not gated:
        print(f"warning: n = {n} < {KS_MIN_SAMPLES}; KS gate skipped (KS = {ks:.4f})", file=sys.stderr)
    else:
        print(f"KS = {ks:.4f} (gate {KS_GATE})")
    return EXIT_OK if passed else EXIT_GATE


def _hist_range(ref) -> tuple[float, float]:
    g = Grid1D.covering(ref, 2, nsigma=5.0)
    return g.lo, g.hi


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cqmeasure", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, config=True, svg=True):
        if config:
            sp.add_argument("--config", help="JSON config; built-in defaults when omitted")
        sp.add_argument("--seed", type=int, help="RNG seed (overrides the config)")
        sp.add_argument("--out", default="out", help="output directory")
        if svg:
            sp.add_argument("--svg", action="store_true", help="also write SVG plots")

    sp = sub.add_parser("simulate", help="run a measurement scenario")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("compare", help="full hybrid PDE against the analytic shift")
    common(sp)
    sp.add_argument("--threshold", type=float, help="L1 gate at epsilon")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("mixture-equiv", help="phase-space equivalence suite")
    common(sp, config=False, svg=False)
    sp.add_argument("--unswapped", action="store_true", help="negative control: skip the role swap")
    sp.set_defaults(func=cmd_mixture_equiv)

    sp = sub.add_parser("sample", help="Monte Carlo pointer samples with a KS check")
    common(sp)
    sp.add_argument("--n", type=int, help="number of samples")
    sp.set_defaults(func=cmd_sample)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_INPUT
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
