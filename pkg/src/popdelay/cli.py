"""Command-line front end: ``popdelay simulate|check-game|compare``."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from ._backend import BACKEND
from .analysis import COMPARE_COLUMNS, RunReport, build_report, compare_runs, format_table
from .config import ConfigError, Experiment, load_config, resolve
from .delayed_dynamics import NumericalError, Trajectory, init, run
from .games import verify_contractive
from .revision import compute_constants, max_valid_rho, protocol_violation, RHO_SAFETY
from .tuner import TunerError

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _fmt(v: float) -> str:
    return "%.12g" % v


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def trajectory_csv(trace: Trajectory) -> str:
    n = trace.x.shape[1]
    head = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(n)]
    head += ["lambda", "s_bar", "ne_dist", "transit_mass"]
    y_in = trace.y_in
    lines = [",".join(head)]
    for r in range(len(trace)):
        row = [trace.t[r], *trace.x[r], *y_in[r], trace.lam[r], trace.s_bar[r],
               trace.ne_dist[r], trace.transit_mass[r]]
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def updates_csv(trace: Trajectory) -> str:
    lines = ["k,t_k,lambda_k,dot_val,f_val,floored"]
    for u in trace.update_log:
        lines.append(",".join([str(u.k), _fmt(u.t_k), _fmt(u.lambda_k), _fmt(u.dot_val),
                               _fmt(u.f_val), str(bool(u.floored)).lower()]))
    return "\n".join(lines) + "\n"


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


@dataclass
class RunOutcome:
    label: str
    code: int
    report: RunReport | None = None
    message: str = ""
    out_dir: str = ""


def _apply_overrides(cfg, out: str | None, stride: int | None):
    if out is not None:
        cfg = replace(cfg, out=out)
    if stride is not None:
        cfg = replace(cfg, stride=stride)
    return cfg


def execute(exp: Experiment, quiet: bool = True, echo=print) -> RunOutcome:
    """Run one resolved experiment and write its output files."""
    cfg = exp.config
    consts = compute_constants(exp.game, exp.params, exp.delays, cfg.delta)
    out = Path(cfg.out)
    if not quiet:
        echo(f"# popdelay {__version__} ({BACKEND} core)  label={cfg.label}")
        echo(f"# h = {_fmt(exp.h)}  T = {_fmt(cfg.T)}  stride = {exp.stride}  "
             f"lambda0 = {_fmt(cfg.lambda0)}  tuner = {str(cfg.tuner).lower()}")
        for line in consts.text_block().splitlines():
            echo(f"# {line}")
    state = init(exp.game, exp.params, exp.delays, cfg.x0, cfg.lambda0, exp.h,
                 tuner=exp.tuner, consts=consts, scheme=cfg.scheme)
    try:
        trace = run(state, cfg.T, stride=exp.stride)
    except NumericalError as e:
        return RunOutcome(cfg.label, EXIT_NUMERIC,
                          message=f"numerical failure: {e} (last good t={e.last_good_time:g})")
    except TunerError as e:
        return RunOutcome(cfg.label, EXIT_NUMERIC,
                          message=f"numerical failure: {e} (last good t={state.t:g})")
    report = build_report(trace, consts, exp.params, cfg.label, cfg.tail_fraction,
                          cfg.thresholds["ne_dist"], cfg.thresholds["transit"])
    report.extra["terminated"] = state.tuner_state.terminated if cfg.tuner else None
    meta = {"config": cfg.to_dict(), "constants": consts.as_dict(),
            "backend": state.backend, "version": __version__}
    atomic_write(out / "trajectory.csv", trajectory_csv(trace))
    atomic_write(out / "updates.csv", updates_csv(trace))
    atomic_write(out / "report.json", report.to_json() + "\n")
    atomic_write(out / "meta.json", _dump(meta))
    if not quiet:
        echo(report.text_block())
    return RunOutcome(cfg.label, EXIT_OK, report, out_dir=str(out))


def cmd_simulate(args) -> int:
    try:
        cfg = _apply_overrides(load_config(args.config), args.out, args.stride)
        exp = resolve(cfg)
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    res = execute(exp, quiet=args.quiet)
    if res.code:
        print(res.message, file=sys.stderr)
    return res.code


def cmd_check_game(args) -> int:
    try:
        cfg = load_config(args.config, require_run=False)
        exp = resolve(cfg)
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    game = exp.game
    rep = verify_contractive(game, sample_count=args.samples)
    rho_max = max_valid_rho(game)
    ok = rep.contractive
    print(f"game = {game.name}  n = {game.n}")
    print(f"B_DF = {_fmt(game.bound_DF)}")
    print(f"contractive = {str(rep.contractive).lower()}  ({'exact' if rep.exact else 'sampled'} test)")
    print(f"worst_value = {_fmt(rep.worst_value)}  sampled_worst = {_fmt(rep.sampled_worst)}")
    if not rep.contractive:
        z, v = rep.witness
        print("witness.x = [" + ", ".join(_fmt(c) for c in z) + "]")
        print("witness.tangent = [" + ", ".join(_fmt(c) for c in v) + "]")
    if math.isinf(rho_max):
        print("rho_auto = any rho valid (all payoff gaps vanish)")
    else:
        print(f"rho_max = {_fmt(rho_max)}")
        print(f"rho_auto = {_fmt(RHO_SAFETY * rho_max)}")
    if cfg.rho != "auto":
        worst = protocol_violation(game, exp.params)
        valid = worst <= 1.0 + 1e-12
        print(f"rho = {_fmt(exp.params.rho)}  max switch sum = {_fmt(worst)}  "
              f"valid = {str(valid).lower()}")
        ok = ok and valid
    print(f"ne = " + "; ".join("[" + ", ".join(_fmt(c) for c in z) + "]" for z in game.ne_set))
    return EXIT_OK if ok else EXIT_CHECK


def _run_path(path: str, out: str, stride: int | None) -> RunOutcome:
    try:
        cfg = load_config(path)
        cfg = _apply_overrides(cfg, out, stride)
        exp = resolve(cfg)
    except (ConfigError, ValueError) as e:
        return RunOutcome(Path(path).stem, EXIT_CONFIG, message=f"config error: {e}")
    return execute(exp, quiet=True)


def compare_csv(reports: Sequence[RunReport]) -> str:
    lines = [",".join(COMPARE_COLUMNS)]
    for r in reports:
        cells = []
        for c in COMPARE_COLUMNS:
            v = getattr(r, c)
            if isinstance(v, bool):
                cells.append(str(v).lower())
            elif isinstance(v, float):
                cells.append(_fmt(v))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _unique_labels(paths: Sequence[str]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for p in paths:
        stem = Path(p).stem
        seen[stem] = seen.get(stem, 0) + 1
        out.append(stem if seen[stem] == 1 else f"{stem}-{seen[stem]}")
    return out


def cmd_compare(args) -> int:
    if len(args.configs) < 2:
        print("compare needs at least two configs", file=sys.stderr)
        return EXIT_CONFIG
    root = Path(args.out or "out/compare")
    subdirs = [str(root / lab) for lab in _unique_labels(args.configs)]
    jobs = [(p, d, args.stride) for p, d in zip(args.configs, subdirs)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_run_path, *zip(*jobs)))
    else:
        outcomes = [_run_path(*j) for j in jobs]

    failed = [o for o in outcomes if o.code]
    for o in failed:
        print(f"[{o.label}] {o.message}", file=sys.stderr)
    done = [o.report for o in outcomes if o.report is not None]
    if len(done) >= 2:
        ranked = compare_runs(done)
        table = format_table(ranked)
        atomic_write(root / "compare.csv", compare_csv(ranked))
    elif done:
        table = format_table(done)
    else:
        table = ""
    if table and not args.quiet:
        print(table)
    if failed:
        print(f"partial results: {len(failed)} of {len(outcomes)} runs failed", file=sys.stderr)
        return max(o.code for o in failed)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="popdelay",
                                 description="Delayed Smith dynamics with revision-rate tuning.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        if out:
            p.add_argument("--out", help="output directory (overrides the config)")
            p.add_argument("--stride", type=int, help="record every STRIDE steps")
        p.add_argument("--quiet", action="store_true", help="suppress console output")

    p = sub.add_parser("simulate", help="run one experiment")
    p.add_argument("config")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("check-game", help="contractivity and rho calibration")
    p.add_argument("config")
    p.add_argument("--samples", type=int, default=1000, help="sampled (point, tangent) pairs")
    common(p, out=False)
    p.set_defaults(func=cmd_check_game)

    p = sub.add_parser("compare", help="run several experiments and rank them")
    p.add_argument("configs", nargs="+")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    common(p)
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "stride", None) is not None and args.stride < 1:
        print("config error: --stride must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "check-game" and args.quiet:
        with open(os.devnull, "w") as devnull:
            saved, sys.stdout = sys.stdout, devnull
            try:
                return args.func(args)
            finally:
                sys.stdout = saved
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
