"""Experiment orchestration: config parsing, sweeps, deterministic reports.

Config files are line-based `key = value` text with `[section]` headers,
comma-separated lists and `#` comments; unknown keys are fatal (a silent
typo in N or epsilon invalidates a convergence study). Exit codes: 0 all
checks passed, 2 a scientific check (bound/lemma/monotonicity) failed,
1 operational error.

Subcommands: run, sweep, verify-lemmas, verify-bounds, riemann-check.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, integral_evolution, reference
from .errors import EngineError, ParseError, RangeError, UnknownKey
from .geometry import (
    box,
    check_riemann_bound,
    lipschitz_family,
    make_uniform_partition,
    torus,
    unit_interval,
)
from .kernel import QuadratureGrid, assemble_kernel, dump_kernel
from .mollifier import Mollifier
from .particle import (
    MollifiedSystem,
    PiecewiseField,
    integrate,
    reconstruct,
    sample_initial,
    write_trajectory_csv,
)
from .pde_model import builtin_by_name, sine_field

_EXPERIMENT_KEYS = {
    "model", "domain", "dimension", "n_list", "epsilon", "epsilon_schedule",
    "t_final", "dt", "quadrature_m", "tag_rule", "kernel_update",
    "sample_times", "seed", "y0", "y0_amplitude", "y0_mean", "y0_mode",
    "out_dir", "coeff_orders", "coeff_values",
}
_CONSTANT_KEYS = {"m_stability", "omega", "c4", "c7", "r", "lip_y0", "y_hat_z"}


@dataclass
class ExperimentConfig:
    model: str = "transport"
    domain_kind: str = "torus"
    dimension: int = 1
    N_list: list = field(default_factory=lambda: [64])
    epsilon_list: list = field(default_factory=lambda: [0.1])
    epsilon_schedule: bool = False
    T_final: float = 0.5
    dt: float | None = None  # None = auto cap
    quadrature_M: int = 4096
    tag_rule: str = "midpoint"
    kernel_update: str = "per_stage"
    sample_times: list = field(default_factory=list)
    seed: int = 1234
    y0_name: str = "sin"
    y0_amplitude: float = 1.0
    y0_mean: float = 0.0
    y0_mode: int = 1
    out_dir: str = "out"
    coeff_orders: list = field(default_factory=list)
    coeff_values: list = field(default_factory=list)
    abstract_constants: dict = field(default_factory=dict)

    def domain(self):
        if self.domain_kind == "torus":
            return torus(self.dimension)
        if self.domain_kind == "interval":
            return unit_interval()
        if self.domain_kind == "box":
            return box([1.0] * self.dimension)
        raise RangeError(f"unknown domain {self.domain_kind!r}")

    def epsilons_for(self, N):
        if self.epsilon_schedule:
            model = builtin_by_name(self.model, list(zip(self.coeff_orders,
                                                         self.coeff_values)) or None)
            return [analysis.epsilon_schedule(N, self.dimension, model.p)]
        return list(self.epsilon_list)

    def y0_field(self):
        if self.y0_name == "sin":
            f = sine_field(self.y0_mode, self.y0_amplitude)
        elif self.y0_name == "cos":
            f = sine_field(self.y0_mode, self.y0_amplitude,
                           phase=np.pi / 2.0)
        elif self.y0_name == "constant":
            from .pde_model import constant_field

            return constant_field(self.y0_mean)
        else:
            raise RangeError(f"unknown y0 {self.y0_name!r}")
        if self.y0_mean:
            from .pde_model import constant_field, field_sum

            return field_sum(f, constant_field(self.y0_mean))
        return f


def _parse_scalar(raw, line_no):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("auto", "none"):
        return None
    try:
        if any(c in raw for c in ".eE") and not raw.lstrip("+-").isdigit():
            return float(raw)
        return int(raw)
    except ValueError:
        return raw


def _parse_list(raw, line_no, cast=float):
    out = []
    for tok in raw.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            out.append(cast(tok))
        except ValueError as exc:
            raise ParseError(f"bad list entry {tok!r}", line_no) from exc
    return out


def parse_config(path):
    """Strict parse; unknown keys and malformed lines are errors."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"config file {path} does not exist")
    cfg = ExperimentConfig()
    section = "experiment"
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in ("experiment", "constants"):
                raise ParseError(f"unknown section [{section}]", line_no)
            continue
        if "=" not in line:
            raise ParseError(f"expected key = value, got {line!r}", line_no)
        key, _, val = line.partition("=")
        key = key.strip().lower().replace("-", "_")
        val = val.strip()
        if section == "constants":
            if key not in _CONSTANT_KEYS:
                raise UnknownKey(f"unknown constant {key!r}", line_no)
            cfg.abstract_constants[key] = float(val)
            continue
        if key == "n":
            key = "n_list"
        if key not in _EXPERIMENT_KEYS:
            raise UnknownKey(f"unknown key {key!r}", line_no)
        if key == "n_list":
            cfg.N_list = _parse_list(val, line_no, int)
        elif key == "epsilon":
            cfg.epsilon_list = _parse_list(val, line_no, float)
        elif key == "sample_times":
            cfg.sample_times = _parse_list(val, line_no, float)
        elif key == "coeff_orders":
            cfg.coeff_orders = _parse_list(val, line_no, int)
        elif key == "coeff_values":
            cfg.coeff_values = _parse_list(val, line_no, float)
        elif key == "epsilon_schedule":
            cfg.epsilon_schedule = _parse_scalar(val, line_no) is True
        elif key == "model":
            cfg.model = val
        elif key == "domain":
            cfg.domain_kind = val
        elif key == "dimension":
            cfg.dimension = int(val)
        elif key == "t_final":
            cfg.T_final = float(val)
        elif key == "dt":
            cfg.dt = _parse_scalar(val, line_no)
            if cfg.dt is not None:
                cfg.dt = float(cfg.dt)
        elif key == "quadrature_m":
            cfg.quadrature_M = int(val)
        elif key == "tag_rule":
            cfg.tag_rule = val
        elif key == "kernel_update":
            cfg.kernel_update = val
        elif key == "seed":
            cfg.seed = int(val)
        elif key == "y0":
            cfg.y0_name = val
        elif key == "y0_amplitude":
            cfg.y0_amplitude = float(val)
        elif key == "y0_mean":
            cfg.y0_mean = float(val)
        elif key == "y0_mode":
            cfg.y0_mode = int(val)
        elif key == "out_dir":
            cfg.out_dir = val
    _validate_config(cfg)
    return cfg


def _validate_config(cfg):
    if any(N < 1 for N in cfg.N_list):
        raise RangeError("all N entries must be positive")
    if cfg.T_final <= 0:
        raise RangeError("T_final must be positive")
    if cfg.dt is not None and cfg.dt <= 0:
        raise RangeError("dt must be positive (or auto)")
    if cfg.quadrature_M < 8:
        raise RangeError("quadrature_M too small")
    if any(e <= 0 for e in cfg.epsilon_list):
        raise RangeError("epsilon entries must be positive")
    if cfg.domain_kind == "torus" and not cfg.epsilon_schedule:
        if any(e >= 0.5 for e in cfg.epsilon_list):
            raise RangeError("epsilon must be < 1/2 on the torus")
    if cfg.tag_rule not in ("left", "midpoint"):
        raise RangeError(f"unknown tag_rule {cfg.tag_rule!r}")
    if cfg.kernel_update not in ("per_stage", "per_step"):
        raise RangeError(f"unknown kernel_update {cfg.kernel_update!r}")
    if any(t <= 0 or t > cfg.T_final + 1e-12 for t in cfg.sample_times):
        raise RangeError("sample times must lie in (0, T_final]")


# ---------------------------------------------------------------------------
# CSV / report helpers
# ---------------------------------------------------------------------------

REPORT_HEADER = "N,epsilon,t,err_L2,err_Linf,bound_rhs,holds\n"


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float) and math.isnan(x):
        return ""
    return f"{x:.16e}"


def write_report_csv(records, path):
    with open(path, "w") as fh:
        fh.write(REPORT_HEADER)
        for r in records:
            fh.write(
                ",".join(
                    [
                        str(r.N),
                        _fmt(r.epsilon),
                        _fmt(r.t),
                        _fmt(r.err_L2),
                        _fmt(r.err_Linf),
                        _fmt(r.bound_rhs),
                        _fmt(r.holds),
                    ]
                )
                + "\n"
            )


def write_summary_jsonl(rows, path):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# reference solutions for the built-in models
# ---------------------------------------------------------------------------

def _reference_for(cfg, model, moll, y0, max_N):
    if model.name == "transport":
        return reference.exact_transport(lambda x: y0.derivs[0](x))
    if model.name == "burgers":
        ref = reference.burgers_characteristics(
            lambda x: y0.derivs[0](x), lambda x: y0.derivs[1](x)
        )
        if cfg.T_final >= ref.T_valid:
            raise RangeError(
                f"T_final={cfg.T_final} reaches the shock time {ref.T_valid:.4g}"
            )
        return ref
    if model.name == "heat" and cfg.y0_name == "sin" and cfg.y0_mean == 0.0:
        return reference.exact_heat_mode(cfg.y0_mode, cfg.y0_amplitude)
    # no closed form: mollified fine-grid reference at this epsilon
    times = sorted(set(cfg.sample_times or [cfg.T_final]))
    return reference.fine_grid_mollified(
        model, moll, min(8192, max(2048, 8 * max_N)), y0, cfg.T_final,
        dt=cfg.dt, sample_times=times,
    )


def _run_single(cfg, model, N, eps, y0, sample_times, ref):
    domain = cfg.domain()
    part = make_uniform_partition(domain, N, cfg.tag_rule)
    quad_M = cfg.quadrature_M
    if quad_M % N == 0 or N % quad_M == 0:
        pass  # aligned grids keep piecewise states exact per quadrature cell
    moll = Mollifier(eps, domain.n)
    quad = QuadratureGrid.uniform(domain, quad_M)
    system = MollifiedSystem(model, moll, part, quad,
                             kernel_update=cfg.kernel_update)
    t0 = time.perf_counter()
    traj = integrate(system, reconstruct(sample_initial(part, y0)),
                     cfg.T_final, dt=cfg.dt, sample_times=sample_times)
    elapsed = time.perf_counter() - t0
    records = []
    for t in sample_times:
        fld = traj.field_at(t)
        e2 = analysis.norm_L2(fld, lambda x, t=t: ref.evaluate(t, x), quad)
        einf = analysis.norm_Linf(
            fld, lambda x, t=t: ref.evaluate(t, x), quad, extra_points=part.tags
        )
        records.append(analysis.ErrorRecord(N, eps, t, e2, einf, elapsed))
    return records, traj, system


def cmd_run(cfg, out_dir, dump_path=None):
    model = builtin_by_name(cfg.model, list(zip(cfg.coeff_orders,
                                                cfg.coeff_values)) or None)
    y0 = cfg.y0_field()
    N = cfg.N_list[0]
    eps = cfg.epsilons_for(N)[0]
    sample_times = sorted(set(cfg.sample_times or [cfg.T_final]))
    moll = Mollifier(eps, cfg.domain().n)
    ref = _reference_for(cfg, model, moll, y0, N)
    records, traj, system = _run_single(cfg, model, N, eps, y0, sample_times, ref)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(traj, out_dir / "trajectory.csv")
    write_report_csv(records, out_dir / "report.csv")
    if dump_path is not None:
        km = system.operator.kernel
        if km is None:
            part = make_uniform_partition(cfg.domain(), N, cfg.tag_rule)
            quad = QuadratureGrid.uniform(cfg.domain(), cfg.quadrature_M)
            km = assemble_kernel(model, moll, part, 0.0,
                                 reconstruct(sample_initial(part, y0)), quad)
        dump_kernel(km, model.name, dump_path)
    print(f"run: model={model.name} N={N} eps={eps:.4g} "
          f"max|y-y0| deviation={traj.max_deviation:.4g}")
    for r in records:
        print(f"  t={r.t:g}: err_L2={r.err_L2:.6e} err_Linf={r.err_Linf:.6e}")
    return 0


def cmd_sweep(cfg, out_dir, jobs=1):
    model = builtin_by_name(cfg.model, list(zip(cfg.coeff_orders,
                                                cfg.coeff_values)) or None)
    y0 = cfg.y0_field()
    sample_times = sorted(set(cfg.sample_times or [cfg.T_final]))
    max_N = max(cfg.N_list)
    tasks = []
    for N in cfg.N_list:
        for eps in cfg.epsilons_for(N):
            tasks.append((N, eps))
    refs = {}
    for _, eps in tasks:
        if eps not in refs:
            refs[eps] = _reference_for(
                cfg, model, Mollifier(eps, cfg.domain().n), y0, max_N
            )

    def job(task):
        N, eps = task
        recs, _, _ = _run_single(cfg, model, N, eps, y0, sample_times, refs[eps])
        return recs

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(job, tasks))
    else:
        results = [job(t) for t in tasks]
    records = [r for recs in results for r in recs]
    records.sort(key=lambda r: (r.epsilon, r.N, r.t))

    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_csv(records, out_dir / "sweep.csv")

    summary = []
    by_eps = {}
    for r in records:
        by_eps.setdefault(r.epsilon, []).append(r)
    t_last = sample_times[-1]
    for eps in sorted(by_eps):
        rows = [r for r in by_eps[eps] if r.t == t_last]
        entry = {"epsilon": eps, "t": t_last,
                 "errors_L2": {str(r.N): r.err_L2 for r in rows},
                 "dt_policy": "auto" if cfg.dt is None else cfg.dt,
                 "note": "L-inf measured over quadrature nodes and tags"}
        if len(rows) >= 3:
            try:
                entry["slope_N_L2"] = analysis.fit_rate(
                    [(r.N, r.err_L2) for r in rows]
                )["slope"]
            except EngineError:
                entry["slope_N_L2"] = None
        summary.append(entry)
    write_summary_jsonl(summary, out_dir / "summary.jsonl")

    nonincreasing = True
    for eps, rows in by_eps.items():
        rows = sorted((r for r in rows if r.t == t_last), key=lambda r: r.N)
        for a, b in zip(rows, rows[1:]):
            if b.err_L2 > a.err_L2:
                nonincreasing = False
    print(f"sweep: {len(records)} records -> {out_dir/'sweep.csv'}")
    return 0 if nonincreasing else 2


def cmd_verify_lemmas(cfg, out_dir):
    model = builtin_by_name(cfg.model if cfg.model != "burgers" else "transport")
    eps_list = cfg.epsilon_list or [0.2, 0.1, 0.05, 0.025]
    quad = QuadratureGrid.uniform(torus(1), cfg.quadrature_M)
    sweep = [Mollifier(e, 1) for e in sorted(eps_list, reverse=True)]
    report = analysis.verify_lemma_suite(model, sweep, quad, seed=cfg.seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "lemmas.csv", "w") as fh:
        fh.write("name,epsilon,measured,bound,passed\n")
        for e in report["entries"]:
            fh.write(
                f"{e['name']},{_fmt(e['epsilon'])},{_fmt(e['measured'])},"
                f"{_fmt(e['bound'])},{1 if e['passed'] else 0}\n"
            )
    for e in report["entries"]:
        status = "PASS" if e["passed"] else "FAIL"
        print(f"[{status}] {e['name']} eps={e['epsilon']}: "
              f"measured={e['measured']:.3e}")
    return 0 if report["all_passed"] else 2


def cmd_verify_bounds(cfg, out_dir):
    N_sweep = cfg.N_list if len(cfg.N_list) > 1 else [16, 32, 64, 128, 256, 512]
    T = cfg.T_final if cfg.T_final != 0.5 else 1.0
    times = cfg.sample_times or [0.25, 0.5, 1.0]
    times = [t for t in times if t <= T + 1e-12]
    toys = [
        (integral_evolution.toy_cos_kernel(),
         lambda x: np.sin(2 * np.pi * np.asarray(x)), 2 * np.pi),
        (integral_evolution.toy_rank_one(1.0),
         lambda x: 0.5 + 0.3 * np.sin(2 * np.pi * np.asarray(x)), 0.6 * np.pi),
        (integral_evolution.toy_source_only(1.0),
         lambda x: np.sin(2 * np.pi * np.asarray(x)), 2 * np.pi),
    ]
    all_records = []
    summary = []
    ok = True
    for system, y0, lip_y0 in toys:
        report = analysis.verify_graph_limit_bound(
            system, y0, lip_y0, N_sweep, T, r=2.0, sample_times=times,
            dt=cfg.dt or 1e-3, raise_on_violation=False,
        )
        slope = report["slope_N"]
        violated = report["violation"] is not None
        slope_ok = True
        if system.name in ("cos-kernel", "rank-one"):
            slope_ok = -1.3 <= slope <= -0.7
        ok &= (not violated) and slope_ok
        summary.append({"system": system.name, "slope_N": slope,
                        "bound_violated": violated, "slope_ok": slope_ok,
                        "a1": report["constants"].a1,
                        "a2": report["constants"].a2,
                        "a3": report["constants"].a3})
        for r in report["records"]:
            all_records.append((system.name, r))
        print(f"{system.name}: slope_N={slope:.3f} "
              f"{'bound OK' if not violated else 'BOUND VIOLATED'}")
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "bounds.csv", "w") as fh:
        fh.write("system," + REPORT_HEADER)
        for name, r in all_records:
            fh.write(f"{name},{r.N},{_fmt(r.epsilon)},{_fmt(r.t)},"
                     f"{_fmt(r.err_L2)},{_fmt(r.err_Linf)},"
                     f"{_fmt(r.bound_rhs)},{_fmt(r.holds)}\n")
    write_summary_jsonl(summary, out_dir / "bounds_summary.jsonl")
    return 0 if ok else 2


def cmd_riemann_check(cfg, out_dir):
    domain = cfg.domain()
    N_list = cfg.N_list if len(cfg.N_list) > 1 else [8, 16, 32, 64, 128, 256, 512, 1024]
    family = lipschitz_family(domain, seed=cfg.seed, count=20)
    quad = QuadratureGrid.uniform(domain, max(8192, 8 * max(N_list)))
    rows = []
    violations = 0
    for fi, (f, lip) in enumerate(family):
        for N in N_list:
            part = make_uniform_partition(domain, N, cfg.tag_rule)
            res = check_riemann_bound(part, f, lip, quad=quad)
            rows.append((fi, N, res["lhs"], res["rhs"], res["holds"]))
            violations += 0 if res["holds"] else 1
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "riemann.csv", "w") as fh:
        fh.write("fn,N,lhs,rhs,holds\n")
        for fi, N, lhs, rhs, holds in rows:
            fh.write(f"{fi},{N},{_fmt(lhs)},{_fmt(rhs)},{1 if holds else 0}\n")
    print(f"riemann-check: {len(rows)} checks, {violations} violations")
    return 0 if violations == 0 else 2


def build_parser():
    ap = argparse.ArgumentParser(
        prog="pdeparticles",
        description="particle approximations of quasilinear PDEs: runs and checks",
    )
    ap.add_argument("command", choices=[
        "run", "sweep", "verify-lemmas", "verify-bounds", "riemann-check",
    ])
    ap.add_argument("--config", type=str, default=None,
                    help="path to a key = value config file")
    ap.add_argument("--out", type=str, default=None,
                    help="output directory (default: config out_dir)")
    ap.add_argument("--jobs", type=int, default=1,
                    help="parallel sweep jobs (reports merged in key order)")
    ap.add_argument("--dump-kernel", type=str, default=None,
                    help="binary kernel dump path (run command)")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config) if args.config else ExperimentConfig()
        out_dir = Path(args.out if args.out else cfg.out_dir)
        if args.command == "run":
            return cmd_run(cfg, out_dir, dump_path=args.dump_kernel)
        if args.command == "sweep":
            return cmd_sweep(cfg, out_dir, jobs=max(1, args.jobs))
        if args.command == "verify-lemmas":
            return cmd_verify_lemmas(cfg, out_dir)
        if args.command == "verify-bounds":
            return cmd_verify_bounds(cfg, out_dir)
        if args.command == "riemann-check":
            return cmd_riemann_check(cfg, out_dir)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
