"""Command-line entry point: ``ssvepnet <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data integrity error,
4 numerical error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .. import dataio
from ..dsp import PreprocessConfig, preprocess_dataset
from ..errors import ConfigError, DataIntegrityError, SsvepError
from ..features import geometric_mean, sample_covariance, tangent_space
from ..models import ScuSpec, TrainConfig, parse_arch, predict, read_config, train
from ..nn import load_checkpoint, save_checkpoint
from .experiment import grid_search, run_experiment
from .folds import holdout_split
from .methods import MethodSpec
from .report import ConfusionMatrix, ExperimentReport, emit_report

log = logging.getLogger("ssvepnet")

# named synthetic noise profiles for `gen`
PROFILES = {
    "clean": dict(noise=0.5, line=0.5, pink=0.5, alpha=0.0, jitter=0.1),
    "moderate": dict(noise=2.0, line=3.0, pink=0.5, alpha=3.0, jitter=0.3),
}


def profile_dataset(profile, trials, subjects, seed, **overrides):
    """Synthetic dataset from a named noise profile; ``overrides`` replace profile entries."""
    prof = dict(PROFILES[profile])
    prof.update({k: v for k, v in overrides.items() if v is not None})
    subs = tuple(replace(s, noise_sigma=s.noise_sigma * prof["noise"])
                 for s in dataio.default_subjects(trials, subjects))
    cfg = dataio.SynthConfig(subs, line_noise_amp=prof["line"], pink_noise_amp=prof["pink"],
                             alpha_burst_amp=prof["alpha"], phase_jitter_rad=prof["jitter"], seed=seed)
    return dataio.synth_dataset(cfg)


def _band(text):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from None
    return lo, hi


def _write_out(text, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load(path, subjects=None):
    ds = dataio.read_archive(path)
    if subjects:
        ds = ds.select_subjects(subjects.split(","))
    return ds


def cmd_gen(a):
    ds = profile_dataset(a.profile, a.trials, a.subjects, a.seed,
                         **{k: getattr(a, k) for k in ("noise", "line", "pink", "alpha", "jitter")})
    dataio.write_archive(ds, a.out)
    log.info("wrote %d trials to %s", len(ds), a.out)


def _pre_cfg(a):
    return PreprocessConfig(a.notch_hz, a.notch_q, a.band, a.order)


def cmd_preprocess(a):
    dataio.write_archive(preprocess_dataset(_load(a.inp), _pre_cfg(a)), a.out)


def cmd_features(a):
    ds = _load(a.inp)
    covs = sample_covariance(ds.samples(), a.shrinkage)
    z = tangent_space(covs, geometric_mean(covs))
    lines = ["subject\tlabel\t" + "\t".join(f"t{i}" for i in range(z.shape[1]))]
    for t, row in zip(ds.trials, z):
        lines.append(f"{t.subject_id}\t{t.label}\t" + "\t".join(f"{v:.10g}" for v in row))
    _write_out("\n".join(lines) + "\n", a.out)


def cmd_train(a):
    ds = _load(a.inp, a.subjects)
    cfg, spec = read_config(a.cfg) if a.cfg else (TrainConfig(), ScuSpec())
    if a.seed is not None:
        cfg, spec = replace(cfg, seed=a.seed), replace(spec, seed=a.seed)
    x = ds.samples()
    spec = replace(spec, channels=x.shape[1], length=x.shape[2])
    net = parse_arch(a.arch, spec, a.hidden)
    res = train(net, x, ds.labels, cfg,
                on_epoch=lambda e, loss: log.info("epoch %d loss %.6f", e + 1, loss))
    save_checkpoint(res.model, a.out)
    log.info("final loss %.6f; checkpoint %s", res.history[-1], a.out)


def cmd_eval(a):
    ds = _load(a.inp, a.subjects)
    model = load_checkpoint(a.model)
    labels, _ = predict(model, ds)
    conf = ConfusionMatrix.from_labels(ds.labels, labels, model.n_classes)
    r = ExperimentReport(a.name or Path(a.inp).name, (conf.accuracy,), conf,
                         {"design": "eval", "method": model.name, "pre": False, "checkpoint": str(a.model)})
    _write_out(emit_report(r, a.format), a.out)


def _parse_grid(text):
    grid = {}
    for part in filter(None, text.split(";")):
        key, _, vals = part.partition("=")
        if not vals:
            raise ConfigError(f"grid entry {part!r} must look like name=v1,v2")
        grid[key.strip()] = [json.loads(v) for v in vals.split(",")]
    return grid


def cmd_xval(a):
    ds = _load(a.inp, a.subjects)
    pre = a.pre == "on"
    tcfg = TrainConfig(**({"epochs": a.epochs} if a.epochs else {}))
    spec = MethodSpec(a.method, train=tcfg)
    if a.grid:
        # one validation split carved from the whole pool, decided before CV
        tr, va = holdout_split(ds.labels, 0.2, a.seed)
        g = grid_search(_parse_grid(a.grid), ds, tr, va, spec, pre, a.seed, a.threads)
        for params, score in g.table:
            log.info("grid %s -> %.4f", params, score)
        spec = spec.with_params(**g.best)
    r = run_experiment(a.design, ds, spec, pre=pre, k=a.k, seed=a.seed, subject=a.subject,
                       held_out=a.held_out, threads=a.threads)
    if a.save:
        Path(a.save).write_text(json.dumps(r.to_dict(), sort_keys=True) + "\n", encoding="utf-8")
    _write_out(emit_report(r, a.format), a.out)


def cmd_report(a):
    try:
        d = json.loads(Path(a.inp).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise DataIntegrityError(f"{a.inp}: not a report: {exc}") from exc
    _write_out(emit_report(ExperimentReport.from_dict(d), a.format), a.out)


def build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, help="default 0 (train: the config file's seed)")
    shared.add_argument("--threads", type=int, default=1, help="parallel folds / grid points")
    shared.add_argument("--format", choices=("text", "csv", "svg"), default="text")
    shared.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ssvepnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[shared], help="write a synthetic archive")
    g.add_argument("--out", required=True)
    g.add_argument("--subjects", type=int, default=1, choices=range(1, 5))
    g.add_argument("--trials", type=int, default=100, help="trials per class per subject")
    g.add_argument("--profile", choices=sorted(PROFILES), default="moderate")
    for name in ("noise", "line", "pink", "alpha", "jitter"):
        g.add_argument(f"--{name}", type=float)
    g.set_defaults(fn=cmd_gen)

    pp = sub.add_parser("preprocess", parents=[shared], help="decimate, re-reference and filter")
    pp.add_argument("--in", dest="inp", required=True)
    pp.add_argument("--out", required=True)
    pp.add_argument("--notch-hz", type=float, default=50.0)
    pp.add_argument("--notch-q", type=float, default=30.0)
    pp.add_argument("--band", type=_band, default=(9.0, 100.0))
    pp.add_argument("--order", type=int, default=4)
    pp.set_defaults(fn=cmd_preprocess)

    f = sub.add_parser("features", parents=[shared], help="tangent-space feature table")
    f.add_argument("--in", dest="inp", required=True)
    f.add_argument("--out")
    f.add_argument("--shrinkage", type=float, default=1e-3)
    f.set_defaults(fn=cmd_features)

    t = sub.add_parser("train", parents=[shared], help="train a network and save a checkpoint")
    t.add_argument("--arch", default="scu", help="scu | deep-scu:N | rnn | lstm | gru")
    t.add_argument("--in", dest="inp", required=True)
    t.add_argument("--cfg", help="key = value config file")
    t.add_argument("--out", required=True)
    t.add_argument("--subjects", help="comma-separated subject ids")
    t.add_argument("--hidden", type=int, default=64)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", parents=[shared], help="score a checkpoint on an archive")
    e.add_argument("--model", required=True)
    e.add_argument("--in", dest="inp", required=True)
    e.add_argument("--subjects")
    e.add_argument("--name")
    e.add_argument("--out")
    e.set_defaults(fn=cmd_eval)

    x = sub.add_parser("xval", parents=[shared], help="run an experiment design")
    x.add_argument("--in", dest="inp", required=True)
    x.add_argument("--design", default="single", choices=("single", "per-subject", "pooled", "unseen"))
    x.add_argument("--method", default="cnn")
    x.add_argument("--pre", choices=("on", "off"), default="off")
    x.add_argument("--k", type=int, default=10)
    x.add_argument("--subject")
    x.add_argument("--subjects", help="restrict to these comma-separated subject ids")
    x.add_argument("--held-out")
    x.add_argument("--epochs", type=int)
    x.add_argument("--grid", help='e.g. "lr=0.001,0.01;lambda_l2=0.0001,0.001"')
    x.add_argument("--save", help="also write the report as JSON for `report`")
    x.add_argument("--out")
    x.set_defaults(fn=cmd_xval)

    r = sub.add_parser("report", parents=[shared], help="render a saved report")
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--out")
    r.set_defaults(fn=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.seed is None and args.command != "train":
        args.seed = 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return ConfigError.exit_code
    try:
        args.fn(args)
    except SsvepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataIntegrityError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
