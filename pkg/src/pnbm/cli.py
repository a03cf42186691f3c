"""``pnbm`` command line: ingest, split, train, evaluate, sweep, stability."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import plotting, similarity
from .config import ExperimentConfig, load_config, parse_values
from .data import SplitSpec, center, filter_min_counts, load_ratings, read_split, split, write_split
from .errors import ConfigError, DivergenceError, EmptyResultError, PNBMError
from .evaluation import (EvalReport, density_sweep, format_table, repeat_protocol,
                         rmse, run_once, stability, write_reports)
from .mlsd import load_checkpoint, save_checkpoint
from .training import make_baseline, train

logger = logging.getLogger("pnbm")

HISTORY_COLUMNS = ("epoch", "objective", "valid_rmse", "test_rmse")

# flag name -> config field
_FLAG_FIELDS = {
    "data": "data", "format": "format", "split_dir": "split_dir",
    "min_item_ratings": "min_item_ratings", "fractions": "fractions", "seed": "seed",
    "profile": "profile", "epochs": "epochs", "beta": "beta", "lambdas": "lambdas",
    "phi": "phi", "variant": "variant", "reg_form": "reg_form", "mu": "mu",
    "init_scale": "init_scale", "k": "k", "repeats": "repeats",
    "repeat_mode": "repeat_mode", "baseline": "baseline",
}


def _experiment_flags(p):
    g = p.add_argument_group("experiment")
    g.add_argument("--config", help="flat key = value config file; flags override it")
    g.add_argument("--data", help="ratings file")
    g.add_argument("--format", choices=("tsv", "double-colon"))
    g.add_argument("--split", dest="split_dir", help="split directory written by 'pnbm split'")
    g.add_argument("--min-item-ratings", type=int)
    g.add_argument("--fractions", help="train,valid,test fractions (default 0.85,0.05,0.1)")
    g.add_argument("--seed", type=int)
    g.add_argument("--profile")
    g.add_argument("--epochs", type=int)
    g.add_argument("--beta", type=float)
    g.add_argument("--lambda", dest="lambdas", help="one regularizer per layer, comma separated")
    g.add_argument("--phi", help="one importance per layer, comma separated")
    g.add_argument("--variant", choices=("linear", "tanh"))
    g.add_argument("--reg-form", choices=("alg1", "eq12"))
    g.add_argument("--mu", type=float)
    g.add_argument("--init-scale", type=float)
    g.add_argument("--k", type=int, help="prediction neighbors (default 200)")
    g.add_argument("--repeats", type=int)
    g.add_argument("--repeat-mode", choices=("splits", "seeds"))
    g.add_argument("--baseline", help="profile used for INC%% ('none' to skip)")


def experiment_config(args):
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    raw = {}
    for flag, name in _FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            raw[name] = str(value)
    cfg = replace(cfg, **parse_values(raw))
    if cfg.data is not None:
        cfg.data = str(Path(cfg.data).resolve())
    if cfg.split_dir is not None:
        cfg.split_dir = str(Path(cfg.split_dir).resolve())
    # an empty value in a config file falls back to the field default
    for f in fields(cfg):
        if getattr(cfg, f.name) is None and f.default is not None:
            setattr(cfg, f.name, f.default)
    return cfg


def load_dataset(cfg):
    if cfg.data is None:
        raise ConfigError("no dataset given (--data)")
    ds = load_ratings(cfg.data, cfg.format)
    if cfg.min_item_ratings:
        ds = filter_min_counts(ds, cfg.min_item_ratings)
    return ds


def load_parts(cfg):
    if cfg.split_dir is not None:
        return read_split(cfg.split_dir)
    return split(load_dataset(cfg), SplitSpec(*cfg.fractions, seed=cfg.seed))


def write_history(history, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in history.records:
            w.writerow([r.epoch, repr(r.train_objective), repr(r.validation_rmse),
                        repr(r.test_rmse)])


def write_timing(history, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "seconds"))
        for r in history.records:
            w.writerow([r.epoch, f"{r.wall_time:.3f}"])


def read_history_column(path, column):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise EmptyResultError(f"{path} has no epochs")
    if column not in rows[0]:
        raise ConfigError(f"{path} has no column {column!r}")
    return [float(r[column]) for r in rows]


def _out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---- subcommands ----------------------------------------------------------

def cmd_ingest(args):
    cfg = experiment_config(args)
    ds = load_dataset(cfg)
    print(f"users={ds.num_users} items={ds.num_items} ratings={len(ds)} "
          f"density={100 * ds.density:.2f}%")
    print(f"scale={ds.scale_min:g}..{ds.scale_max:g}")
    return 0


def cmd_split(args):
    cfg = experiment_config(args)
    parts = split(load_dataset(cfg), SplitSpec(*cfg.fractions, seed=cfg.seed))
    out = _out(args)
    write_split(out, *parts)
    print(" ".join(f"{n}={len(p)}" for n, p in zip(("train", "valid", "test"), parts)))
    return 0


def cmd_train(args):
    cfg = experiment_config(args)
    profile = cfg.resolved_profile()
    if not profile.trainable:
        raise ConfigError(f"profile {profile.name} has nothing to train; use 'pnbm evaluate'")
    out = _out(args)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")

    parts = load_parts(cfg)
    view = center(parts[0])
    layers = make_baseline(profile, parts[0], view, seed=cfg.seed, init_scale=cfg.init_scale)
    tc = profile.train_config(epochs=cfg.epochs, seed=cfg.seed, eval_k=cfg.k)
    try:
        best, history = train(layers, parts, tc, view)
    except DivergenceError as exc:
        if exc.history is not None:
            write_history(exc.history, out / "history.csv")
            write_timing(exc.history, out / "timing.csv")
        raise
    write_history(history, out / "history.csv")
    write_timing(history, out / "timing.csv")
    save_checkpoint(best, out / "best.ckpt")
    plotting.plot_history({profile.name: history}, out / "history.png", title=profile.name)
    b = history.best_epoch
    rec = history.records[b - 1]
    print(f"best epoch {b}: valid_rmse={rec.validation_rmse:.6f} test_rmse={rec.test_rmse:.6f}")
    return 0


def _evaluate_checkpoint(args, cfg):
    profile = cfg.resolved_profile()
    ckpt = load_checkpoint(args.checkpoint)
    parts = load_parts(cfg)
    view = center(parts[0])
    omegas = [similarity.build(kind, parts[0], view) for kind in ckpt.omega_kinds]
    layers = ckpt.to_layers(omegas)
    part = {"train": parts[0], "valid": parts[1], "test": parts[2]}[args.part]
    value = rmse(layers, part, view, cfg.k, args.jobs)
    reports = [EvalReport(profile.name, value, 1, [value])]
    if cfg.baseline != "none" and cfg.baseline != profile.name:
        res = _baseline_on(cfg, parts, view, args.part)
        reports.append(EvalReport(cfg.baseline, res, 1, [res]))
    return reports


def _baseline_on(cfg, parts, view, part_name):
    res = run_once(cfg.baseline, parts, seed=cfg.seed, epochs=cfg.epochs, k=cfg.k, view=view,
                   init_scale=cfg.init_scale, keep_model=True)
    part = {"train": parts[0], "valid": parts[1], "test": parts[2]}[part_name]
    return rmse(res.model, part, view, cfg.k)


def _profiles(cfg):
    names = [p.strip() for p in cfg.profile.split(",") if p.strip()]
    if len(names) == 1:
        return [cfg.resolved_profile()]
    return [replace(cfg, profile=n).resolved_profile() for n in names]


def cmd_evaluate(args):
    cfg = experiment_config(args)
    out = _out(args)
    if args.checkpoint:
        reports = _evaluate_checkpoint(args, cfg)
    else:
        ds = load_dataset(cfg)
        profiles = _profiles(cfg)
        names = [p.name for p in profiles]
        if cfg.baseline != "none" and cfg.baseline not in names:
            profiles.append(replace(cfg, profile=cfg.baseline).resolved_profile())
        reports = [repeat_protocol(p, ds, cfg.repeats, cfg.seed, cfg.fractions, cfg.epochs,
                                   cfg.k, cfg.repeat_mode, init_scale=cfg.init_scale)
                   for p in profiles]
    baseline = None if cfg.baseline == "none" else cfg.baseline
    write_reports(reports, out / "report.json", out / "report.txt", baseline)
    curves = {r.model_kind: r.mean_history for r in reports if r.mean_history}
    if curves:
        plotting.plot_history(curves, out / "curves.png", title="mean test RMSE")
    plotting.plot_reports(reports, out / "report.png")
    sys.stdout.write(format_table(reports))
    return 0


SWEEP_COLUMNS = ("slice", "users", "items", "ratings", "density", "ratings_per_user",
                 "model", "rmse", "inc_percent")


def cmd_sweep(args):
    cfg = experiment_config(args)
    out = _out(args)
    ds = load_dataset(cfg)
    profiles = _profiles(cfg)
    slices = density_sweep(ds, profiles, args.slices, cfg.repeats, cfg.seed, cfg.epochs, cfg.k,
                           args.min_users, cfg.fractions, init_scale=cfg.init_scale)
    if not slices:
        raise EmptyResultError("every density slice was skipped")
    baseline = None if cfg.baseline == "none" else cfg.baseline
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for sl in slices:
            reports = list(sl.reports.values())
            d = out / f"slice_{sl.index:02d}"
            d.mkdir(exist_ok=True)
            write_reports(reports, d / "report.json", d / "report.txt", baseline)
            for r in reports:
                inc = "" if r.inc_percent is None else repr(r.inc_percent)
                w.writerow([sl.index, sl.users, sl.items, sl.ratings, repr(sl.density),
                            repr(sl.mean_ratings_per_user), r.model_kind, repr(r.rmse), inc])
    plotting.plot_sweep(slices, out / "sweep.png")
    print(f"{len(slices)} slices written to {out}")
    return 0


def cmd_stability(args):
    h = read_history_column(args.history, args.column)
    st = stability(h, tol=args.tol, budget=args.budget, min_persist=args.min_persist)
    print(json.dumps({"epsilon": st.epsilon, "zeta": st.zeta, "censored": st.censored,
                      "converged": st.converged, "label": str(st)}))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="pnbm", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="load a ratings file and print its summary")
    _experiment_flags(s)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("split", help="write a train/valid/test split")
    _experiment_flags(s)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", help="train one profile; writes history, checkpoint, config")
    _experiment_flags(s)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="RMSE/INC%% report for a checkpoint or profile list")
    _experiment_flags(s)
    s.add_argument("--checkpoint")
    s.add_argument("--part", choices=("train", "valid", "test"), default="test")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="evaluate profiles on user-density slices")
    _experiment_flags(s)
    s.add_argument("--slices", type=int, default=10)
    s.add_argument("--min-users", type=int, default=50)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("stability", help="epsilon/zeta of one history column")
    s.add_argument("history")
    s.add_argument("--column", default="test_rmse")
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--budget", type=int, default=200)
    s.add_argument("--min-persist", type=int, default=10)
    s.set_defaults(func=cmd_stability)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PNBMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
