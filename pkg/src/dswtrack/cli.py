"""Command-line entry point: ``dswtrack {simulate,track,odsw,train,eval,bench}``.

Exit codes: 0 success, 2 parse error, 3 invalid input (including unreadable
files), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import io
from .dswlearn import LogisticPredictor, SgdConfig, TrainingSet, train_sgd
from .errors import InvalidInputError, NumericalFailureError
from .evaluation import (
    CONDITIONS,
    EvalConfig,
    circular_rmse,
    default_methods,
    format_table,
    run_suite,
    timing_benchmark,
)
from .filtering import as_stream_weights, belief_record, default_initial_belief, iter_filter
from .model import model_from_config
from .odsw import DirichletPrior, GaussianPriorParams, odsw_sequence
from .sim import ScenarioSpec, SequenceRecord, simulate_sequence

EXIT_OK, EXIT_PARSE, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3, 4


def _int_list(s):
    try:
        return [int(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def _str_list(s):
    return [v.strip() for v in s.split(",") if v.strip()]


def _load_model(path):
    return model_from_config(io.read_json(path))


def _load_record(path, model=None) -> SequenceRecord:
    rows = list(io.read_jsonl(path))
    if not rows:
        raise InvalidInputError(f"{path}: no records")
    if model is not None:
        got = set(rows[0].get("y", {}))
        if got != set(model.labels):
            raise InvalidInputError(f"{path}: streams {sorted(got)} do not match model streams {model.labels}")
    return SequenceRecord.from_rows(rows, None if model is None else model.labels)


def _weights_source(spec: str, model, K: int):
    kind, _, arg = spec.partition(":")
    if kind == "fixed":
        try:
            w = [float(v) for v in arg.split(",")]
        except ValueError:
            raise InvalidInputError(f"cannot parse fixed weights {arg!r}") from None
        return as_stream_weights(w, model.M)
    if kind == "file":
        rows = list(io.read_jsonl(arg))
        try:
            W = np.array([r["weights"] for r in rows], dtype=float)
        except (KeyError, TypeError, ValueError):
            raise InvalidInputError(f"{arg}: every line needs a 'weights' list") from None
        if W.shape != (K, model.M):
            raise InvalidInputError(f"{arg}: weights have shape {W.shape}, expected {(K, model.M)}")
        return W
    if kind == "predictor":
        if model.M != 2:
            raise InvalidInputError("a logistic predictor drives exactly two streams")
        with open(arg) as fh:
            return LogisticPredictor.from_json(fh.read())
    raise InvalidInputError(f"--weights must be fixed:<v>, file:<path> or predictor:<path>, got {spec!r}")


# --------------------------------------------------------------------------


def cmd_simulate(a):
    spec = ScenarioSpec.from_dict(io.read_json(a.spec))
    if a.seed is not None:
        spec = ScenarioSpec(spec.K, spec.model, a.seed, spec.disturbances, spec.init_state, spec.seq_id, spec.group)
    rec = simulate_sequence(spec)
    n = io.write_jsonl(a.out, rec.to_rows())
    print(f"wrote {n} steps to {a.out}")


def cmd_track(a):
    model = _load_model(a.model)
    rec = _load_record(a.input, model)
    frames = rec.frames()
    source = _weights_source(a.weights, model, rec.K)
    rows, est = [], []
    for k, belief, w in iter_filter(default_initial_belief(frames), frames, source, model):
        rows.append(belief_record(k + 1, belief, w))
        est.append(belief.mean[0])
    io.write_jsonl(a.out, rows)
    if rec.has_truth:
        crmse = circular_rmse(np.array(est), rec.azimuth, EvalConfig(a.grace))
        print(f"cRMSE: {crmse:.4f} deg")


def cmd_odsw(a):
    model = _load_model(a.model)
    rec = _load_record(a.input, model)
    if not rec.has_truth:
        raise InvalidInputError("oracle weights need ground-truth states ('x') on every line")
    prior = DirichletPrior(a.alpha) if a.prior == "dirichlet" else GaussianPriorParams(a.mu, a.sigma2)
    rec.weights = odsw_sequence(rec.states, rec.frames(), model, prior)
    io.write_jsonl(a.out, rec.to_rows())
    print(f"mean weights: {np.round(rec.weights.mean(axis=0), 4).tolist()}")


def cmd_train(a):
    Z, T = [], []
    for path in a.input:
        rec = _load_record(path)
        if rec.weights is None:
            raise InvalidInputError(f"{path}: no 'weights' targets; run the odsw subcommand first")
        Z.append(rec.z)
        T.append(rec.weights)
    cfg = SgdConfig(a.lr, a.epochs, a.batch_size, a.seed)
    pred, losses = train_sgd(TrainingSet(np.vstack(Z), np.vstack(T)), cfg)
    io.write_json(a.out, pred.to_dict())
    print(f"final loss: {losses[-1]:.6f}")


def cmd_eval(a):
    conditions = _str_list(a.conditions)
    unknown = [c for c in conditions if c not in CONDITIONS]
    if unknown:
        raise InvalidInputError(f"unknown conditions {unknown}; choose from {sorted(CONDITIONS)}")
    all_methods = default_methods(a.alpha, a.mu, a.sigma2, a.seed)
    names = _str_list(a.methods)
    bad = [m for m in names if m not in all_methods]
    if bad:
        raise InvalidInputError(f"unknown methods {bad}; choose from {sorted(all_methods)}")
    methods = {m: all_methods[m] for m in names}
    rows, summaries = run_suite(conditions, methods, a.sequences, a.K, a.seed, a.groups, EvalConfig(a.grace))
    if a.out:
        io.write_csv(a.out, ["condition", "sequence_id", "crmse_deg"],
                     [(f"{c}/{m}", sid, f"{v:.6f}") for c, m, sid, v in rows])
    print(format_table(summaries, names, conditions))


def cmd_bench(a):
    grid = [(dx, dym, m) for dx in a.dx for dym in a.dym for m in a.m]
    results = timing_benchmark(grid, a.runs, a.steps, a.seed)
    if a.out:
        io.write_csv(a.out, ["dx", "dym", "m", "ratio_mean", "ratio_std"],
                     [(r.dx, r.dym, r.m, f"{r.ratio_mean:.6f}", f"{r.ratio_std:.6f}") for r in results])
    for r in results:
        print(f"dx={r.dx:<4d} dym={r.dym:<4d} m={r.m:<2d} ratio {r.ratio_mean:.3f} ± {r.ratio_std:.3f} "
              f"(median {r.ratio_median:.3f})")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="dswtrack", description="Dynamic stream weight tracking experiments.",
                                formatter_class=fmt)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic sequence", formatter_class=fmt)
    s.add_argument("--spec", required=True, help="scenario JSON document")
    s.add_argument("--out", required=True, help="output JSON Lines file")
    s.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("track", help="run the weighted filter over a sequence", formatter_class=fmt)
    s.add_argument("--in", dest="input", required=True, help="sequence JSON Lines file")
    s.add_argument("--model", required=True, help="model JSON document")
    s.add_argument("--weights", default="fixed:0.5,0.5", help="fixed:<v1,..>, file:<jsonl> or predictor:<json>")
    s.add_argument("--out", required=True, help="belief trajectory JSON Lines file")
    s.add_argument("--grace", type=float, default=0.1, help="grace fraction for the printed cRMSE")
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("odsw", help="oracle stream weights from ground truth", formatter_class=fmt)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--prior", choices=("dirichlet", "gaussian"), default="dirichlet")
    s.add_argument("--alpha", type=float, default=1.1, help="Dirichlet concentration")
    s.add_argument("--mu", type=float, default=0.5, help="Gaussian prior mean")
    s.add_argument("--sigma2", type=float, default=0.1, help="Gaussian prior variance")
    s.add_argument("--out", required=True, help="sequence with a 'weights' field per line")
    s.set_defaults(func=cmd_odsw)

    s = sub.add_parser("train", help="fit the logistic weight predictor", formatter_class=fmt)
    s.add_argument("--in", dest="input", required=True, nargs="+", help="sequences carrying 'weights' targets")
    s.add_argument("--out", required=True, help="predictor JSON document")
    s.add_argument("--lr", type=float, default=0.05)
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="cross-validated synthetic condition suite", formatter_class=fmt)
    s.add_argument("--conditions", default="clean,snr0", help=f"comma list from {','.join(CONDITIONS)}")
    s.add_argument("--methods", default="ekf-audio,ekf-video,ekf-av,odsw-gauss,odsw-dir,dsw-learned")
    s.add_argument("--sequences", type=int, default=20, help="sequences per condition")
    s.add_argument("--groups", type=int, default=4, help="cross-validation groups")
    s.add_argument("--K", type=int, default=300, help="steps per sequence")
    s.add_argument("--seed", type=int, default=0, help="sequence i uses seed+i; also seeds SGD")
    s.add_argument("--grace", type=float, default=0.1)
    s.add_argument("--alpha", type=float, default=1.1)
    s.add_argument("--mu", type=float, default=0.5)
    s.add_argument("--sigma2", type=float, default=0.1)
    s.add_argument("--out", default=None, help="per-sequence CSV")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="runtime ratio against a stacked EKF", formatter_class=fmt)
    s.add_argument("--dx", type=_int_list, default=[5, 100])
    s.add_argument("--dym", type=_int_list, default=[1])
    s.add_argument("--m", type=_int_list, default=[2])
    s.add_argument("--runs", type=int, default=25)
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None, help="CSV file")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except json.JSONDecodeError as exc:
        print(f"error: parse error at line {exc.lineno} column {exc.colno}: {exc.msg}", file=sys.stderr)
        return EXIT_PARSE
    except NumericalFailureError as exc:
        where = "" if exc.frame is None else f" at step k={exc.frame + 1}"
        print(f"error: numerical failure{where}: {exc.args[0]}", file=sys.stderr)
        return EXIT_NUMERIC
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
