"""Command-line front end.

Exit codes: 0 success, 2 invalid input, 3 value iteration did not converge,
4 capacity exceeded.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from typing import List, Optional, Sequence

from . import diagnostics as diag
from .errors import CapacityExceeded, FwPomdpError, ModelError, NotConverged, ZeroLikelihood
from .experiments import curves_csv, result_csv, result_to_dict, run_machine_repair
from .finite_mdp import solve_window
from .io import atomic_write_text, dumps, load_model, save_model, solved_to_dict
from .model import STATED_ALPHA, machine_repair_case, validate_model
from .stability import stability_decay_curve

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED, EXIT_CAPACITY = 0, 2, 3, 4


def _load_valid(path: str):
    model = load_model(path)
    report = validate_model(model)
    if report:
        raise ModelError("model failed validation:\n" + "\n".join(f"  {v}" for v in report))
    return model


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def parse_int_range(text: str) -> List[int]:
    """'0-5' or '0,2,4' (or a mix) to a sorted list of integers."""
    out = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.update(range(int(lo), int(hi) + 1))
        else:
            out.add(int(part))
    if not out:
        raise ModelError(f"empty range {text!r}")
    return sorted(out)


def cmd_solve(args) -> int:
    model = _load_valid(args.model)
    mdp, solved = solve_window(model, args.window, tolerance=args.tolerance, max_iter=args.max_iter,
                               prune_threshold=args.prune, dedup=args.dedup)
    if args.out:
        atomic_write_text(args.out, dumps(solved_to_dict(solved, mdp)))
    print(f"window size     {args.window}")
    print(f"states          {mdp.n_states}")
    print(f"iterations      {solved.iteration_count}")
    print(f"residual        {solved.residual:.3e}")
    print(f"value range     [{solved.values.min():.6g}, {solved.values.max():.6g}]")
    return EXIT_OK


def _fmt(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def cmd_diagnose(args) -> int:
    model = _load_valid(args.model)
    report = diag.diagnose(model, N_max=args.N_max, alpha_Z_choice=args.alpha_z,
                           beta=args.beta_override, asserted_alpha=args.asserted_alpha)
    if args.out:
        atomic_write_text(args.out, dumps(report.to_dict()))
    rows = [
        ("delta_T per action", ", ".join(f"{v:.6g}" for v in report.delta_T_per_action)),
        ("delta_T_min", report.delta_T_min),
        ("delta_Q", report.delta_Q),
        ("alpha", report.alpha),
        ("alpha_X", report.alpha_X),
        ("alpha_c", report.alpha_c),
        ("alpha_Z options", ", ".join(f"{k}={v:.6g}" for k, v in report.alpha_Z_options.items())),
        (f"alpha_Z ({report.alpha_Z_choice})", report.alpha_Z_selected),
        ("beta", report.beta),
        ("beta threshold", report.beta_threshold),
        ("alt. beta threshold", report.beta_threshold_alt),
        ("J_BL bound", report.J_BL_bound),
        ("K0", report.K0),
        ("K0_hat", report.K0_hat),
        ("K", report.K),
    ]
    for name, v in rows:
        print(f"{name:<22}{_fmt(v)}")
    for n, b5, b6 in report.per_N_bounds:
        print(f"N={n:<3} K alpha^N = {b5:.6g}   K (alpha beta)^N = {b6:.6g}")
    for note in report.notes:
        print(f"note: {note}")
    return EXIT_OK


def cmd_stability(args) -> int:
    model = _load_valid(args.model)
    curve = stability_decay_curve(model, model.prior, model.reference_prior, args.action, args.N_max,
                                  mode=args.mode, samples=args.samples, seed=args.seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "mean_tv", "se_tv", "mean_bl", "se_bl", "envelope_2_alpha_N"])
    for p in curve:
        w.writerow([p.N, repr(p.mean_tv), repr(p.se_tv), repr(p.mean_bl), repr(p.se_bl), repr(p.envelope)])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    Ns = parse_int_range(args.N_range)
    result = run_machine_repair(args.case, Ns, mode=args.mode, horizon=args.horizon,
                                samples=args.samples, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.join(args.out, f"case{args.case}")
    atomic_write_text(stem + ".csv", result_csv(result))
    atomic_write_text(stem + "_normalized.csv", curves_csv(result))
    atomic_write_text(stem + ".json", dumps(result_to_dict(result)))
    print(f"case {args.case}: alpha={result.alpha:.6g} mode={result.mode} horizon={result.horizon} "
          f"truncation bound={result.truncation_bound:.3g}")
    for r in result.records:
        print(f"N={r.N}  approx={r.approx_value:.6f}  cost={r.realized_cost:.6f}  "
              f"value_err={r.value_error:.6f}  robust_err={r.robustness_error:.6f}  "
              f"stability={r.filter_stability_term:.6f}")
    for note in result.notes:
        print(f"note: {note}")
    return EXIT_OK


def _read_ratio_pairs(path: str):
    pairs = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            try:
                rt = float(parts[0])
                rq = None if len(parts) < 2 or parts[1] in ("", "any") else float(parts[1])
            except ValueError:
                raise ModelError(f"bad ratio line {line!r}") from None
            pairs.append((rt, rq))
    return pairs


def cmd_gaussian_table(args) -> int:
    pairs = _read_ratio_pairs(args.ratios) if args.ratios else None
    rows = diag.gaussian_table(args.obs_levels, pairs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["ratio_t", "ratio_q_min", "delta_T", "delta_Q_hat", "condition_holds", "ratio_q_min_exact"])

    def cell(v):
        if v is None:
            return "any"
        if isinstance(v, float) and math.isinf(v):
            return "none"
        return f"{v:.6g}"

    for r in rows:
        w.writerow([f"{r.ratio_t:g}", cell(r.ratio_q_min), f"{r.delta_T:.6f}",
                    "any" if r.delta_Q_hat is None else f"{r.delta_Q_hat:.6f}",
                    str(r.condition_holds).lower(), cell(r.ratio_q_min_exact)])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_make_model(args) -> int:
    model = machine_repair_case(args.case)
    save_model(model, args.out)
    print(f"wrote machine-repair case {args.case} to {args.out}")
    if args.case in STATED_ALPHA:
        print(f"note: pass --asserted-alpha {STATED_ALPHA[args.case]} to diagnose to compare alpha")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fwpomdp", description="Finite-window POMDP policy synthesis and diagnostics.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="quantize, build and solve the finite belief model")
    s.add_argument("model")
    s.add_argument("--window", "-N", type=int, required=True)
    s.add_argument("--tolerance", type=float, default=1e-8)
    s.add_argument("--max-iter", type=int, default=10_000)
    s.add_argument("--prune", type=float, default=0.0)
    s.add_argument("--dedup", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    d = sub.add_parser("diagnose", help="ergodicity coefficients and bound constants")
    d.add_argument("model")
    d.add_argument("--beta-override", type=float)
    d.add_argument("--N-max", type=int, default=5)
    d.add_argument("--alpha-z", choices=diag.ALPHA_Z_CHOICES)
    d.add_argument("--asserted-alpha", type=float)
    d.add_argument("--out")
    d.set_defaults(func=cmd_diagnose)

    st = sub.add_parser("stability", help="filter mismatch decay curve (CSV)")
    st.add_argument("model")
    st.add_argument("--N-max", type=int, default=5)
    st.add_argument("--mode", choices=("exact", "mc"), default="exact")
    st.add_argument("--samples", type=int, default=10_000)
    st.add_argument("--seed", type=int, default=0)
    st.add_argument("--action", type=int, default=0, help="fixed action played at every step")
    st.add_argument("--out")
    st.set_defaults(func=cmd_stability)

    e = sub.add_parser("experiment", help="machine-repair study")
    e.add_argument("--case", type=int, choices=(1, 2, 3), required=True)
    e.add_argument("--N-range", default="0-5")
    e.add_argument("--mode", choices=("exact", "mc"), default="exact")
    e.add_argument("--samples", type=int, default=10_000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--horizon", type=int)
    e.add_argument("--out", required=True, help="output directory")
    e.set_defaults(func=cmd_experiment)

    g = sub.add_parser("gaussian-table", help="Gaussian-channel coefficient table (CSV)")
    g.add_argument("--obs-levels", type=int, choices=(2, 3), default=2)
    g.add_argument("--ratios", help="file with lines 'ratio_t[,ratio_q]'")
    g.add_argument("--out")
    g.set_defaults(func=cmd_gaussian_table)

    m = sub.add_parser("make-model", help="write a machine-repair model file")
    m.add_argument("--case", type=int, choices=(1, 2, 3), required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_make_model)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NotConverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except CapacityExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (ModelError, ZeroLikelihood, FwPomdpError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
