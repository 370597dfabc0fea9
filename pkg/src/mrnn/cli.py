"""Command-line front end: ``mrnn generate | mask | train | impute | benchmark``.

Every subcommand writes a ``<output>.manifest`` (or ``manifest.txt`` for the
benchmark directory) with the fully resolved options as ``key=value`` lines.
Passing that file back through ``--config`` reproduces the run; explicit flags
override values read from a config file.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import model as M
from ._accel import BACKEND
from .dataset import DatasetError, apply_minmax, denormalize, normalize_minmax, parse_csv, write_csv
from .evaluation import METHODS, BenchmarkOptions, benchmark_run, normalize_methods, parse_setting, write_fold_csv, write_summary_csv
from .masking import MaskPlan, Setting, apply_plan, correlated_remove, mcar_remove, read_plan, subsample_patients, subsample_streams, truncate_length, write_plan
from .numeric import Rng
from .synth import generate_synthetic

log = logging.getLogger("mrnn")

REQUIRED = {
    "generate": ("patients", "streams", "out"),
    "mask": ("input", "out"),
    "train": ("input", "out"),
    "impute": ("model", "input", "out"),
    "benchmark": ("input", "out_dir"),
}
# options that describe the invocation rather than the computation
_NOT_CONFIG = {"command", "config", "verbose"}


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    d = M.MRnnConfig()
    p.add_argument("--hidden", type=int, default=d.hidden_size, help="hidden units per recurrent cell")
    p.add_argument("--keep-p", type=float, default=d.keep_p, help="dropout keep probability")
    p.add_argument("--lr", type=float, default=d.learning_rate)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default=d.optimizer)
    p.add_argument("--impute-width", type=int, default=d.impute_width, help="imputation hidden units per stream")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="mrnn", description="Missing-value estimation for irregular multivariate series.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=0, help="root seed, fanned out to named sub-streams")
        p.add_argument("--config", help="key=value file merged under the command-line flags")
        p.add_argument("-v", "--verbose", action="store_true")
        subs[name] = p
        return p

    g = add("generate", "write a synthetic dataset")
    g.add_argument("--patients", type=int)
    g.add_argument("--streams", type=int)
    g.add_argument("--length", type=int, default=20, help="maximum stamps per record")
    g.add_argument("--min-length", type=int, help="minimum stamps per record (default: --length)")
    g.add_argument("--intra-corr", type=float, default=0.7)
    g.add_argument("--inter-corr", type=float, default=0.4)
    g.add_argument("--label-weights", type=_floats, help="comma-separated weights; enables labels")
    g.add_argument("--label-bias", type=float, default=0.0)
    g.add_argument("--missing-rate", type=float, default=0.0)
    g.add_argument("--gap-scale", type=float, default=1.0)
    g.add_argument("--time-coupled", action="store_true", help="let stamp gaps drive the process")
    g.add_argument("--out")

    m = add("mask", "degrade a dataset and record what was removed")
    m.add_argument("--input")
    m.add_argument("--setting", choices=[s.value.lower() for s in Setting] + ["streams", "patients", "length"], default="mcar")
    m.add_argument("--rate", type=float, default=0.3)
    m.add_argument("--topk", type=int, default=4)
    m.add_argument("--keep", type=int, help="count kept by the stream/patient/length settings")
    m.add_argument("--plan", help="replay an existing plan instead of drawing one")
    m.add_argument("--out")
    m.add_argument("--plan-out", help="plan path (default: <out stem>.plan.csv)")

    t = add("train", "fit a model and write its archive")
    t.add_argument("--input")
    t.add_argument("--out")
    t.add_argument("--history", help="loss-history CSV (default: <out stem>.history.csv)")
    t.add_argument("--loss", choices=[v.value for v in M.LossMode], default="mse")
    t.add_argument("--ablation", choices=[v.value for v in M.Ablation], default="full")
    t.add_argument("--mi-draws", type=int, default=M.MRnnConfig().mi_draws)
    _add_model_flags(t)

    i = add("impute", "complete a dataset with a trained model")
    i.add_argument("--model")
    i.add_argument("--input")
    i.add_argument("--out")
    i.add_argument("--mode", choices=("single", "multi"), default="single")
    i.add_argument("--draws", type=int, help="number of draws in multi mode (default: archive's mi_draws)")

    b = add("benchmark", "cross-validated comparison of imputation methods")
    b.add_argument("--input")
    b.add_argument("--out-dir")
    b.add_argument("--methods", default="mrnn,mean,locf,linear,spline,zero", help=f"comma list from {', '.join(METHODS)}")
    b.add_argument("--settings", default="mcar=0.3", help="';'-separated settings such as 'mcar=0.3;correlated=0.3,topk=4'")
    b.add_argument("--folds", type=int, default=5)
    b.add_argument("--reference", default="mrnn")
    b.add_argument("--predictor-epochs", type=int, default=BenchmarkOptions().predictor_epochs)
    b.add_argument("--no-prediction", action="store_true", help="skip the AUROC and congeniality scores")
    _add_model_flags(b)
    return parser, subs


# ----------------------------------------------------------------- config

def read_config(path) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{n}: expected key=value")
        out[key.strip().replace("-", "_")] = val.strip()
    return out


def _coerce(parser: argparse.ArgumentParser, values: dict[str, str]) -> dict:
    actions = {a.dest: a for a in parser._actions}
    out = {}
    for key, raw in values.items():
        act = actions.get(key)
        if act is None or key in _NOT_CONFIG:
            continue
        if raw == "":
            out[key] = None
        elif isinstance(act, argparse._StoreTrueAction):
            out[key] = raw.lower() in ("1", "true", "yes")
        elif act.type is not None:
            out[key] = act.type(raw)
        else:
            out[key] = raw
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_manifest(path, args: argparse.Namespace, **extra) -> None:
    items = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
    lines = [f"command={args.command}", f"version={__version__}", f"backend={BACKEND}"]
    lines += [f"{k}={_fmt(v)}" for k, v in sorted(items.items())]
    lines += [f"{k}={_fmt(v)}" for k, v in sorted(extra.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest")


def _sibling(out, suffix: str) -> Path:
    out = Path(out)
    return out.with_name(out.stem + suffix)


# ----------------------------------------------------------------- commands

def cmd_generate(args) -> None:
    ds = generate_synthetic(
        args.patients, args.streams, args.length, args.intra_corr, args.inter_corr,
        label_weights=args.label_weights, rng=Rng(args.seed).child("generate"),
        min_len=args.min_length, label_bias=args.label_bias, missing_rate=args.missing_rate,
        gap_scale=args.gap_scale, time_coupled=args.time_coupled,
    )
    write_csv(ds, args.out)
    write_manifest(_manifest_path(args.out), args)


def cmd_mask(args) -> None:
    ds = parse_csv(args.input)
    rng = Rng(args.seed).child("mask")
    setting = args.setting.upper()
    plan_out = args.plan_out or _sibling(args.out, ".plan.csv")
    if args.plan:
        plan = read_plan(args.plan)
        if plan.setting.value != setting:
            raise ValueError(f"plan was recorded for setting {plan.setting.value}, not {setting}")
        out = apply_plan(ds, plan)
    elif setting == "MCAR":
        out, plan = mcar_remove(ds, args.rate, rng)
    elif setting == "CORRELATED":
        out, plan = correlated_remove(ds, args.rate, args.topk, rng)
    else:
        if args.keep is None:
            raise ValueError(f"--keep is required for setting {args.setting}")
        if setting in ("STREAMS", "STREAM_SUBSET"):
            out, tag = subsample_streams(ds, args.keep, rng), Setting.STREAM_SUBSET
        elif setting in ("PATIENTS", "SAMPLE_SUBSET"):
            out, tag = subsample_patients(ds, args.keep, rng), Setting.SAMPLE_SUBSET
        else:
            out, tag = truncate_length(ds, args.keep), Setting.LENGTH_TRUNCATE
        plan = MaskPlan((), rng.seed, tag)
    write_csv(out, args.out)
    write_plan(plan, plan_out)
    write_manifest(_manifest_path(args.out), args, plan_out=str(plan_out), removed=len(plan))


def _model_config(args, **extra) -> M.MRnnConfig:
    return M.MRnnConfig(
        hidden_size=args.hidden, keep_p=args.keep_p, learning_rate=args.lr, epochs=args.epochs,
        batch_size=args.batch_size, seed=args.seed, optimizer=args.optimizer, impute_width=args.impute_width,
        **extra,
    )


def cmd_train(args) -> None:
    ds = normalize_minmax(parse_csv(args.input))
    cfg = _model_config(args, loss_mode=args.loss, ablation=args.ablation, mi_draws=args.mi_draws)
    extra = None
    if cfg.loss_mode == M.LossMode.CROSS_ENTROPY:
        from .predictor import train_prediction_oriented

        joint = train_prediction_oriented(ds, cfg)
        model, history = joint.imputer, joint.history
        extra = {"predictor": M._encode_params(joint.head.params)}
    else:
        model = M.train(ds, cfg)
        history = model.history
    M.save_model(model, args.out, extra)
    hist = args.history or _sibling(args.out, ".history.csv")
    with Path(hist).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for e, v in enumerate(history):
            w.writerow([e, repr(float(v))])
    write_manifest(_manifest_path(args.out), args, history_out=str(hist))


def _draw_path(out, k: int) -> Path:
    out = Path(out)
    return out.with_name(f"{out.stem}_draw{k}{out.suffix}")


def cmd_impute(args) -> None:
    model = M.load_model(args.model)
    raw = parse_csv(args.input)
    if raw.n_streams != model.n_streams:
        raise DatasetError(f"model expects {model.n_streams} streams, dataset has {raw.n_streams}")
    ds = apply_minmax(raw, model.normalization) if model.normalization is not None else raw
    written = []
    if args.mode == "single":
        res = [M.impute_single(model, ds)]
        paths = [Path(args.out)]
    else:
        res = M.impute_multiple(model, ds, args.draws, Rng(args.seed).child("dropout"))
        paths = [_draw_path(args.out, k) for k in range(len(res))]
    for r, p in zip(res, paths):
        write_csv(_restore(raw, denormalize(r.dataset)), p)
        written.append(str(p))
    write_manifest(_manifest_path(args.out), args, outputs=written)


def _restore(raw, completed):
    """Put the input's own observed values back so they round-trip exactly."""
    recs = [c.with_values(np.where(r.observed, r.values, c.values), c.observed) for r, c in zip(raw.records, completed.records)]
    return completed.with_records(recs)


def cmd_benchmark(args) -> None:
    ds = parse_csv(args.input)
    methods = normalize_methods(args.methods.split(","))
    settings = [parse_setting(s) for s in args.settings.split(";") if s.strip()]
    opts = BenchmarkOptions(
        mrnn=_model_config(args), reference=args.reference, predictor_epochs=args.predictor_epochs,
        score_prediction=not args.no_prediction, score_congeniality=not args.no_prediction,
    )
    report = benchmark_run(ds, methods, settings, args.folds, Rng(args.seed), opts)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_fold_csv(report, out / "folds.csv")
    write_summary_csv(report, out / "summary.csv")
    write_manifest(out / "manifest.txt", args)
    failed = [f for f in report.folds if f.error]
    if failed:
        print(f"warning: {len(failed)} arm(s) failed; see the error column of summary.csv", file=sys.stderr)


COMMANDS = {
    "generate": cmd_generate,
    "mask": cmd_mask,
    "train": cmd_train,
    "impute": cmd_impute,
    "benchmark": cmd_benchmark,
}


def main(argv=None) -> int:
    parser, subs = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    sub = subs[args.command]
    if args.config:
        try:
            sub.set_defaults(**_coerce(sub, read_config(args.config)))
        except (OSError, ValueError) as exc:
            sub.error(f"--config: {exc}")
        args = parser.parse_args(argv)
    missing = [k for k in REQUIRED[args.command] if getattr(args, k) is None]
    if missing:
        sub.error("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (DatasetError, ValueError, OSError, M.TrainingDiverged) as exc:
        print(f"mrnn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
