"""Command-line entry point.

Subcommands:
  solve    trace the smoothed path on a game and write path/summary artifacts
  verify   check a profile file for Nash or fixed-t logit consistency
  convert  dump the compiled sequence form of a game

Exit codes: 0 success, 2 unreadable/invalid input, 3 perfect-recall
violation, 4 non-convergence (artifacts are still written).
Set QREPATH_LOG={error,info,debug} to control logging.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from qrepath.game_model import (
    GameFormatError,
    PerfectRecallError,
    load_game,
)
from qrepath.normal_form_oracle import (
    ConvergenceError,
    OracleCapExceeded,
    build_normal_form,
    logit_response,
)
from qrepath.qre_system import (
    QreInstance,
    recover_multipliers,
    residual_gamma_sys,
    solve_qre_ladder,
)
from qrepath.sequence_form import (
    MixedProfile,
    RealizationProfile,
    SequenceSpace,
    behavioral_realization,
    best_response_value,
    expected_payoff,
    mixed_of,
    realization_of,
)
from qrepath import sequence_form
from qrepath.homotopy_tracer import (
    STATUS_CONVERGED,
    TracerConfig,
    TraceResult,
    export_path,
    run_trace,
)

logger = logging.getLogger("qrepath")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_RECALL = 3
EXIT_NOCONV = 4


def _setup_logging():
    level = os.environ.get("QREPATH_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO,
              "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")


# -- profile files ----------------------------------------------------------------

def load_start_profile(path, seq: SequenceSpace) -> RealizationProfile:
    """Behavioral-probability file: {player: {infoset: {action: prob}}}."""
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    beh = []
    for i, player in enumerate(seq.players):
        spec = doc.get(player)
        if spec is None:
            raise GameFormatError(f"start file misses player {player!r}")
        rows = []
        for info in seq.infosets[i]:
            probs = spec.get(info.label)
            if probs is None:
                raise GameFormatError(
                    f"start file misses infoset {info.label!r} of {player}")
            rows.append(np.array([float(probs[a]) for a in info.actions]))
        beh.append(rows)
    return behavioral_realization(seq, beh)


def _gamma_from_doc(seq: SequenceSpace, spec) -> RealizationProfile:
    parts = []
    for i, player in enumerate(seq.players):
        vec = np.array([float(spec[player][lbl]) for lbl in seq.seq_labels[i]])
        parts.append(vec)
    return RealizationProfile(tuple(parts))


def load_profile(path, seq: SequenceSpace):
    """Profile file for `verify`: returns (gamma, sigma-or-None, anchor-or-None).

    Accepted shapes: {"mixed": {player: [probs...]}},
    {"behavioral": {player: {infoset: {action: prob}}}},
    {"gamma": {player: {sequence label: mass}}}; an optional "anchor" key
    (gamma shape) names the anchor plan of the weighted system the profile
    solves.
    """
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    anchor = _gamma_from_doc(seq, doc["anchor"]) if "anchor" in doc else None
    if "mixed" in doc:
        parts = []
        for i, player in enumerate(seq.players):
            vec = np.asarray(doc["mixed"][player], dtype=float)
            if vec.shape != (len(seq.strategies[i]),):
                raise GameFormatError(
                    f"player {player}: {vec.size} strategy weights, "
                    f"expected {len(seq.strategies[i])}")
            parts.append(vec)
        sigma = MixedProfile(tuple(parts))
        return realization_of(seq, sigma), sigma, anchor
    if "behavioral" in doc:
        beh = []
        for i, player in enumerate(seq.players):
            spec = doc["behavioral"][player]
            beh.append([np.array([float(spec[info.label][a])
                                  for a in info.actions])
                        for info in seq.infosets[i]])
        return behavioral_realization(seq, beh), None, anchor
    if "gamma" in doc:
        return _gamma_from_doc(seq, doc["gamma"]), None, anchor
    raise GameFormatError('profile file needs "mixed", "behavioral" or "gamma"')


def _gamma_doc(seq, gamma):
    return {seq.players[i]: {lbl: float(v) for lbl, v in
                             zip(seq.seq_labels[i], gamma[i])}
            for i in range(seq.n)}


def _sigma_doc(seq, sigma):
    return {seq.players[i]: {lbl: float(v) for lbl, v in
                             zip(seq.strategy_labels[i], sigma[i])}
            for i in range(seq.n)}


# -- solve -------------------------------------------------------------------------

def _run_summary(seq, res: TraceResult, seed, elapsed):
    out = {
        "seed": seed,
        "status": res.status,
        "nash_gap": res.nash_gap if np.isfinite(res.nash_gap) else None,
        "points": len(res.path),
        "t_final": res.path[-1].t,
        "lambda_r_final": res.path[-1].lam_r,
        "wall_time_s": elapsed,
    }
    if res.status == STATUS_CONVERGED:
        out["payoffs"] = [float(v) for v in res.payoffs]
        out["sigma"] = _sigma_doc(seq, res.final_sigma)
        out["gamma"] = _gamma_doc(seq, res.final_gamma)
    return out


def cmd_solve(args) -> int:
    game = load_game(args.game)
    seq = sequence_form.compile(game)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    if args.fixed_t is not None:
        return _solve_fixed_t(args, seq, outdir)

    def one_run(k: int):
        config = TracerConfig(seed=args.seed + k, kappa0=args.kappa0,
                              alpha_scale=args.alpha_scale, t_end=args.t_end)
        start = args.start
        if start not in ("uniform", "random"):
            start = load_start_profile(start, seq)
        t0 = time.perf_counter()
        res = run_trace(seq, config, start=start)
        return res, time.perf_counter() - t0

    runs: list[tuple[TraceResult, float]] = [None] * args.runs
    if args.runs == 1:
        runs[0] = one_run(0)
    else:
        with concurrent.futures.ThreadPoolExecutor(
                max_workers=min(args.runs, os.cpu_count() or 1)) as pool:
            futures = {pool.submit(one_run, k): k for k in range(args.runs)}
            for fut in concurrent.futures.as_completed(futures):
                runs[futures[fut]] = fut.result()

    summaries = []
    all_ok = True
    for k, (res, elapsed) in enumerate(runs):
        stem = f"run_{k:03d}" if args.runs > 1 else "path"
        if args.format in ("csv", "both"):
            (outdir / f"{stem}.csv").write_text(export_path(res, "csv"),
                                                encoding="utf-8")
        if args.format in ("json", "both"):
            (outdir / f"{stem}.json").write_text(export_path(res, "json"),
                                                 encoding="utf-8")
        summary = _run_summary(seq, res, args.seed + k, elapsed)
        summaries.append(summary)
        converged = (res.status == STATUS_CONVERGED
                     and res.nash_gap <= args.eps_nash)
        all_ok = all_ok and converged
        line = (f"run {k}: {res.status}, nash_gap="
                f"{res.nash_gap:.3g}" if np.isfinite(res.nash_gap)
                else f"run {k}: {res.status}")
        if res.status == STATUS_CONVERGED:
            line += f", payoffs={np.array2string(res.payoffs, precision=6)}"
        print(line)
        if args.plot and res.status == STATUS_CONVERGED and args.format in ("csv", "both"):
            _maybe_plot(outdir / f"{stem}.csv", outdir, stem)

    merged = {"game": str(args.game), "runs": summaries}
    (outdir / "summary.json").write_text(json.dumps(merged, indent=1),
                                         encoding="utf-8")
    return EXIT_OK if all_ok else EXIT_NOCONV


def _maybe_plot(csv_path: Path, outdir: Path, stem: str):
    try:
        from plotkit import plot_paths
    except ImportError:
        print("plotkit is not installed; skipping figures", file=sys.stderr)
        return
    for which in ("gamma", "sigma"):
        plot_paths(csv_path, which, outdir / f"{stem}.{which}.png")


def _solve_fixed_t(args, seq, outdir: Path) -> int:
    rng = np.random.default_rng(args.seed)
    if args.start == "uniform":
        anchor = sequence_form.uniform_behavioral(seq)
    elif args.start == "random":
        anchor = sequence_form.random_interior(seq, rng)
    else:
        anchor = load_start_profile(args.start, seq)
    inst = QreInstance(seq, anchor, args.fixed_t)
    try:
        gamma, nu = solve_qre_ladder(inst)
    except ConvergenceError as e:
        print(f"fixed-t solve failed: {e}", file=sys.stderr)
        return EXIT_NOCONV
    resid = residual_gamma_sys(inst, gamma, nu)
    doc = {
        "t": args.fixed_t,
        "lambda_r": (1 - args.fixed_t) / args.fixed_t,
        "residual_inf": float(np.abs(resid).max()),
        "anchor": _gamma_doc(seq, anchor),
        "gamma": _gamma_doc(seq, gamma),
        "sigma": _sigma_doc(seq, mixed_of(seq, gamma)),
        "nu": {seq.players[i]: {info.label: float(nu[i][info.index])
                                for info in seq.infosets[i]}
               for i in range(seq.n)},
        "payoffs": [float(v) for v in expected_payoff(seq, gamma)],
    }
    out = outdir / "fixed_t.json"
    out.write_text(json.dumps(doc, indent=1), encoding="utf-8")
    print(f"fixed-t solution at t={args.fixed_t}: residual "
          f"{doc['residual_inf']:.3g} -> {out}")
    return EXIT_OK


# -- verify ------------------------------------------------------------------------

def cmd_verify(args) -> int:
    game = load_game(args.game)
    seq = sequence_form.compile(game)
    gamma, sigma, file_anchor = load_profile(args.profile, seq)
    if sigma is None:
        sigma = mixed_of(seq, gamma)

    if args.mode == "nash":
        payoff = expected_payoff(seq, gamma)
        worst = 0.0
        for i, player in enumerate(seq.players):
            br = best_response_value(seq, i, gamma)
            gap = br - payoff[i]
            worst = max(worst, gap)
            print(f"{player}: payoff {payoff[i]:.12g}, best response "
                  f"{br:.12g}, gap {gap:.3g}")
        print(f"max gap: {worst:.3g}")
        return EXIT_OK

    # logit consistency at fixed t
    if args.t is None:
        print("qre mode needs --t", file=sys.stderr)
        return EXIT_INPUT
    anchor = file_anchor
    if args.anchor is not None:
        anchor = load_start_profile(args.anchor, seq)
    inst = QreInstance(seq, anchor, args.t)
    nu = recover_multipliers(inst, gamma)
    resid = residual_gamma_sys(inst, gamma, nu)
    print(f"stationarity+flow residual with recovered multipliers: "
          f"{np.abs(resid).max():.3g}")
    try:
        nf = build_normal_form(game)
        reply = logit_response(nf, sigma, inst.lam_r,
                               inst.sigma0 if anchor is not None else None)
        fp = max(float(np.abs(reply[i] - sigma[i]).max())
                 for i in range(seq.n))
        print(f"normal-form fixed-point residual: {fp:.3g}")
    except OracleCapExceeded as e:
        print(f"normal-form check skipped: {e}")
    return EXIT_OK


# -- convert -----------------------------------------------------------------------

def _format_vec(vec) -> str:
    return "(" + ",".join(f"{v:g}" for v in vec) + ")"


def cmd_convert(args) -> int:
    game = load_game(args.game)
    seq = sequence_form.compile(game)
    for i, player in enumerate(seq.players):
        print(f"{player}: {seq.n_seqs[i]} sequences: "
              + ", ".join(seq.seq_labels[i]))
    coef = {tuple(seq.coef_idx[m]): seq.coef_val[m]
            for m in range(seq.coef_idx.shape[0])}
    print(f"{len(coef)} payoff entries (chance folded in)")
    if seq.n in (2, 3):
        # rows: player 1 sequences; columns: cartesian product of the others
        col_players = list(range(1, seq.n))
        col_ids = [[]]
        for q in col_players:
            col_ids = [c + [l] for c in col_ids for l in range(seq.n_seqs[q])]
        headers = ["" if not c else "|".join(seq.seq_labels[q][l]
                                             for q, l in zip(col_players, c))
                   for c in col_ids]
        width = max(12, max(len(h) for h in headers) + 2)
        print(" " * 14 + "".join(h.rjust(width) for h in headers))
        for l0 in range(seq.n_seqs[0]):
            cells = []
            for c in col_ids:
                key = tuple([l0] + c)
                cells.append(_format_vec(coef[key]) if key in coef else "·")
            print(seq.seq_labels[0][l0].ljust(14)
                  + "".join(cell.rjust(width) for cell in cells))
    else:
        for key in sorted(coef):
            label = ", ".join(seq.seq_labels[q][key[q]] for q in range(seq.n))
            print(f"  ({label}) -> {_format_vec(coef[key])}")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="qrepath",
        description="Nash equilibria of extensive-form games by smoothed "
                    'logit-response path following (game format "qrepath-game v1")')
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="trace the path and write artifacts")
    sp.add_argument("--game", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--kappa0", type=float, default=3.0)
    sp.add_argument("--alpha-scale", type=float, default=1e-2)
    sp.add_argument("--t-end", type=float, default=1e-8)
    sp.add_argument("--eps-nash", type=float, default=1e-6)
    sp.add_argument("--runs", type=int, default=1)
    sp.add_argument("--start", default="random",
                    help='"uniform", "random", or a behavioral-probability file')
    sp.add_argument("--fixed-t", type=float, default=None,
                    help="solve the smoothed system at one t and exit")
    sp.add_argument("--out", default="qrepath_out")
    sp.add_argument("--format", choices=("csv", "json", "both"), default="both")
    sp.add_argument("--plot", action="store_true",
                    help="also render path figures (needs plotkit)")
    sp.set_defaults(func=cmd_solve)

    vp = sub.add_parser("verify", help="check a profile file")
    vp.add_argument("--game", required=True)
    vp.add_argument("--profile", required=True)
    vp.add_argument("--mode", choices=("nash", "qre"), default="nash")
    vp.add_argument("--t", type=float, default=None)
    vp.add_argument("--anchor", default=None,
                    help="behavioral anchor file for the weighted system")
    vp.set_defaults(func=cmd_verify)

    cp = sub.add_parser("convert", help="dump the sequence form")
    cp.add_argument("--game", required=True)
    cp.set_defaults(func=cmd_convert)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GameFormatError as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except PerfectRecallError as e:
        print(f"recall violation: {e}", file=sys.stderr)
        return EXIT_RECALL
    except FileNotFoundError as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (json.JSONDecodeError, KeyError, ValueError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
