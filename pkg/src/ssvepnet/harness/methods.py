"""Classifier methods behind a common fit/predict interface.

Inputs are ``(trials, channels, time)`` arrays. Methods that need the Fz
reference for preprocessing receive whole :class:`Dataset` objects from the
experiment runner; preprocessing is a fixed per-trial transform with no
learned statistics, so applying it before splitting leaks nothing.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import classic
from ..errors import ConfigError
from ..features import DEFAULT_SHRINKAGE, geometric_mean, sample_covariance, tangent_space
from ..models import ScuSpec, TrainConfig, build_recurrent, build_scu_cnn, predict, train

NEURAL = ("cnn", "rnn", "lstm", "gru")
CLASSIC = ("svm-linear", "svm-gaussian", "lda", "mdm")


@dataclass(frozen=True)
class MethodSpec:
    """Classifier name plus every hyperparameter it may use."""

    name: str
    train: TrainConfig = field(default_factory=TrainConfig)
    filters: int = 16
    dropout_p: float | None = None      # None: 0.5 for CNNs, 0.001 for recurrent nets
    hidden: int = 64
    svm_c: float = 1.0
    svm_gamma: float | None = None
    svm_tol: float = 1e-3
    lda_ridge: float | None = None
    shrinkage: float = DEFAULT_SHRINKAGE

    def __post_init__(self):
        parse_method_name(self.name)

    @property
    def blocks(self):
        return parse_method_name(self.name)[1]

    @property
    def is_neural(self):
        return parse_method_name(self.name)[0] in NEURAL

    def with_params(self, **params):
        """Copy with overrides; TrainConfig fields are routed to ``train``."""
        tkeys = set(asdict(self.train))
        tvals = {k: v for k, v in params.items() if k in tkeys}
        rest = {k: v for k, v in params.items() if k not in tkeys}
        unknown = set(rest) - set(asdict(self))
        if unknown:
            raise ConfigError(f"unknown hyperparameter(s) {sorted(unknown)}")
        return replace(self, train=replace(self.train, **tvals), **rest)

    def to_dict(self):
        return asdict(self)


def parse_method_name(name):
    """``"deep-scu:5"`` -> ``("cnn", 5)``; other names map to ``(name, 1)``."""
    if name.startswith("deep-scu:"):
        try:
            n = int(name.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad block count in method {name!r}") from None
        if not 1 <= n <= 5:
            raise ConfigError(f"deep-scu block count must lie in 1..5, got {n}")
        return "cnn", n
    if name in NEURAL or name in CLASSIC:
        return name, 1
    raise ConfigError(f"unknown method {name!r}; choose from cnn, deep-scu:N, rnn, lstm, gru, "
                      "svm-linear, svm-gaussian, lda, mdm")


class Fitted:
    def predict(self, x):
        raise NotImplementedError


@dataclass
class FittedNetwork(Fitted):
    model: object
    history: list

    def predict(self, x):
        return predict(self.model, x)[0]


@dataclass
class FittedTangent(Fitted):
    """Tangent-space classifier: reference and scaling come from training data only."""

    reference: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    model: object
    shrinkage: float

    def features(self, x):
        z = tangent_space(sample_covariance(x, self.shrinkage), self.reference)
        return (z - self.mean) / self.scale

    def predict(self, x):
        f = self.features(x)
        if isinstance(self.model, classic.LdaModel):
            return np.asarray(classic.lda_classify(self.model, f)[0])
        return np.asarray(classic.svm_classify(self.model, f)[0])


@dataclass
class FittedMdm(Fitted):
    model: classic.MdmModel
    shrinkage: float

    def predict(self, x):
        covs = sample_covariance(x, self.shrinkage)
        return np.array([classic.mdm_classify(self.model, c)[0] for c in covs])


def fit(spec: MethodSpec, x, y, seed=0) -> Fitted:
    """Train ``spec`` on arrays ``x`` (trials, channels, time) and labels ``y``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    kind, blocks = parse_method_name(spec.name)
    if kind == "cnn":
        p = 0.5 if spec.dropout_p is None else spec.dropout_p
        net = build_scu_cnn(ScuSpec(n_scu_blocks=blocks, filters=spec.filters, dropout_p=p,
                                    channels=x.shape[1], length=x.shape[2], seed=seed))
        res = train(net, x, y, replace(spec.train, seed=seed))
        return FittedNetwork(res.model, res.history)
    if kind in ("rnn", "lstm", "gru"):
        p = 0.001 if spec.dropout_p is None else spec.dropout_p
        cell = "vanilla" if kind == "rnn" else kind
        net = build_recurrent(cell, spec.hidden, x.shape[1], x.shape[2], dropout_p=p, seed=seed)
        res = train(net, x, y, replace(spec.train, seed=seed))
        return FittedNetwork(res.model, res.history)
    covs = sample_covariance(x, spec.shrinkage)
    if kind == "mdm":
        return FittedMdm(classic.mdm_train(covs, y), spec.shrinkage)
    reference = geometric_mean(covs)
    z = tangent_space(covs, reference)
    mean = z.mean(axis=0)
    scale = z.std(axis=0)
    scale[scale == 0] = 1.0
    f = (z - mean) / scale
    if kind == "lda":
        model = classic.lda_train(f, y, spec.lda_ridge)
    else:
        model = classic.svm_train(f, y, kernel=kind.split("-")[1], c=spec.svm_c, tol=spec.svm_tol,
                                  gamma=spec.svm_gamma, seed=seed)
    return FittedTangent(reference, mean, scale, model, spec.shrinkage)
