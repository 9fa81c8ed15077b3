"""Experiment designs (single subject, per subject, pooled, unseen subject)
and validation-split grid search."""
from __future__ import annotations

import hashlib
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from ..dataio import Dataset
from ..dsp import PreprocessConfig, preprocess_dataset
from ..errors import ConfigError, DataIntegrityError
from .folds import check_disjoint, kfold_split
from .methods import MethodSpec, fit
from .report import ConfusionMatrix, ExperimentReport

DESIGNS = ("single_subject", "per_subject", "pooled", "unseen_subject")
DESIGN_ALIASES = {"single": "single_subject", "per-subject": "per_subject", "pooled": "pooled",
                  "unseen": "unseen_subject"}


def _design(name):
    name = DESIGN_ALIASES.get(name, name)
    if name not in DESIGNS:
        raise ConfigError(f"unknown design {name!r}; choose from {', '.join(DESIGNS)}")
    return name


def _derive_seed(seed, *stream):
    return int(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, *stream]).generate_state(1, np.uint64)[0])


def dataset_digest(ds: Dataset) -> str:
    h = hashlib.sha256()
    h.update(repr(ds.montage.to_dict()).encode())
    for t in ds.trials:
        h.update(f"{t.subject_id}|{t.label}|".encode())
        h.update(t.samples.tobytes())
        if t.reference is not None:
            h.update(t.reference.tobytes())
    return h.hexdigest()[:16]


def _fitter(method):
    """Returns ``(name, settings, fit_fn)`` for a MethodSpec, a method name or
    a plain ``fit(x, y, seed)`` callable."""
    if isinstance(method, str):
        method = MethodSpec(method)
    if isinstance(method, MethodSpec):
        return method.name, method.to_dict(), lambda x, y, seed: fit(method, x, y, seed)
    if callable(method):
        name = getattr(method, "__name__", type(method).__name__)
        return name, {"callable": name}, method
    raise ConfigError(f"unsupported method {method!r}")


def _evaluate(fit_fn, x, y, train_idx, test_idx, seed, n_classes):
    check_disjoint(train_idx, test_idx)
    model = fit_fn(x[train_idx], y[train_idx], seed)
    pred = np.asarray(model.predict(x[test_idx]))
    return ConfusionMatrix.from_labels(y[test_idx], pred, n_classes)


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))      # index ordered regardless of scheduling


def _cross_validate(name, fit_fn, x, y, k, seed, threads, n_classes, settings):
    plan = kfold_split(y, k, seed)
    folds = list(plan.folds())

    def one(item):
        f, tr, te = item
        return _evaluate(fit_fn, x, y, tr, te, _derive_seed(seed, f), n_classes)

    confs = _map(one, folds, threads)
    audit = {"folds": [{"fold": f, "n_train": int(len(tr)), "n_test": int(len(te)),
                        "overlap": int(np.intersect1d(tr, te).size)} for f, tr, te in folds]}
    total = confs[0]
    for c in confs[1:]:
        total = total + c
    return ExperimentReport(name, tuple(c.accuracy for c in confs), total, settings, audit=audit)


def run_experiment(design, ds: Dataset, method="cnn", pre=False, k=10, seed=0, subject=None,
                   held_out=None, train_subjects=None, threads=1,
                   pre_cfg: PreprocessConfig = PreprocessConfig()) -> ExperimentReport:
    """Evaluate ``method`` on ``ds`` under one of the four designs.

    single_subject and pooled run k-fold CV over one subject or all of them;
    per_subject runs an independent CV per subject and reports the mean of
    the subject means; unseen_subject trains once on ``train_subjects``
    (default: everyone but ``held_out``) and tests on every trial of the
    held-out subject.
    """
    design = _design(design)
    name, method_settings, fit_fn = _fitter(method)
    if len(ds) == 0:
        raise ConfigError("empty dataset")
    data = preprocess_dataset(ds, pre_cfg) if pre else ds
    x, y = data.samples(), data.labels
    subjects = np.array(data.subjects)
    ids = data.subject_ids()
    n_classes = 4
    settings = {"design": design, "method": name, "pre": bool(pre), "k": k, "seed": seed,
                "method_params": method_settings, "dataset": dataset_digest(ds),
                "preprocess": asdict(pre_cfg) if pre else None}

    if design in ("single_subject", "pooled"):
        if design == "single_subject":
            subject = ids[0] if subject is None else subject
            if subject not in ids:
                raise ConfigError(f"subject {subject!r} not in dataset (have {ids})")
            idx = np.flatnonzero(subjects == subject)
            settings["subject"] = subject
            label = subject
        else:
            idx = np.arange(len(y))
            label = "pooled"
        return _cross_validate(label, fit_fn, x[idx], y[idx], k, seed, threads, n_classes, settings)

    if design == "per_subject":
        reports = []
        for sid in ids:
            idx = np.flatnonzero(subjects == sid)
            reports.append(_cross_validate(sid, fit_fn, x[idx], y[idx], k, seed, threads, n_classes,
                                           dict(settings, subject=sid)))
        total = reports[0].confusion
        for r in reports[1:]:
            total = total + r.confusion
        return ExperimentReport("per-subject mean", tuple(r.mean for r in reports), total, settings,
                                subjects=tuple(reports))

    # unseen subject
    if len(ids) < 2:
        raise ConfigError("unseen-subject design needs at least 2 subjects")
    held_out = ids[-1] if held_out is None else held_out
    if held_out not in ids:
        raise ConfigError(f"held-out subject {held_out!r} not in dataset (have {ids})")
    pool = [s for s in ids if s != held_out] if train_subjects is None else list(train_subjects)
    if held_out in pool:
        raise DataIntegrityError(f"held-out subject {held_out!r} is part of the training pool")
    missing = set(pool) - set(ids)
    if missing or not pool:
        raise ConfigError(f"training subjects {sorted(missing) or pool} not in dataset")
    tr = np.flatnonzero(np.isin(subjects, pool))
    te = np.flatnonzero(subjects == held_out)
    if set(subjects[tr]) & set(subjects[te]):
        raise DataIntegrityError("training and test sets share a subject")
    settings.update(held_out=held_out, train_subjects=pool)
    conf = _evaluate(fit_fn, x, y, tr, te, _derive_seed(seed, 0), n_classes)
    audit = {"train_subjects": sorted(set(subjects[tr].tolist())),
             "test_subjects": sorted(set(subjects[te].tolist())),
             "n_train": int(len(tr)), "n_test": int(len(te)),
             "overlap": int(np.intersect1d(tr, te).size)}
    return ExperimentReport(held_out, (conf.accuracy,), conf, settings, audit=audit)


@dataclass(frozen=True)
class GridResult:
    best: dict
    best_score: float
    table: tuple        # ((params, validation accuracy), ...) in grid order


def grid_search(param_grid: dict, ds: Dataset, train_idx, val_idx, method="cnn", pre=False, seed=0,
                threads=1, pre_cfg: PreprocessConfig = PreprocessConfig()) -> GridResult:
    """Exhaustive search over ``param_grid`` (name -> candidate values) scored
    by validation accuracy. Ties go to the first point in grid order, which is
    the Cartesian product in the grid's key order."""
    if not param_grid or any(len(v) == 0 for v in param_grid.values()):
        raise ConfigError("grid must name at least one parameter with at least one value")
    train_idx = np.asarray(train_idx, dtype=np.int64)
    val_idx = np.asarray(val_idx, dtype=np.int64)
    check_disjoint(train_idx, val_idx, "grid search")
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise ConfigError("grid search needs non-empty training and validation sets")
    base = MethodSpec(method) if isinstance(method, str) else method
    data = preprocess_dataset(ds, pre_cfg) if pre else ds
    x, y = data.samples(), data.labels
    keys = list(param_grid)
    points = [dict(zip(keys, vals)) for vals in itertools.product(*(param_grid[k] for k in keys))]

    def one(p):
        spec = base.with_params(**p)
        conf = _evaluate(lambda a, b, s: fit(spec, a, b, s), x, y, train_idx, val_idx, seed, 4)
        return conf.accuracy

    scores = _map(one, points, threads)
    best = int(np.argmax(scores))                 # first maximum
    return GridResult(points[best], scores[best], tuple(zip(points, scores)))
