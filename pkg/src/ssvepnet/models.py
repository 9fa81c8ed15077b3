"""SCU-CNN, its deeper variant, recurrent baselines and the training loop."""
from __future__ import annotations

import ast
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalError
from .nn import (AdamState, BatchNorm1d, Conv1d, Dense, Dropout, Flatten, MaxPool1d, Network,
                 ReLU, Recurrent, adam_step)
from .rng import make_rng

MAX_SCU_BLOCKS = 5
STREAM_SHUFFLE = 101


def _layer_seed(seed, index):
    return int(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, index]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ScuSpec:
    """Shape of an SCU network: ``n_scu_blocks`` of conv -> BN -> ReLU -> pool,
    then flatten -> dropout -> dense."""

    n_scu_blocks: int = 1
    filters: int = 16
    first_kernel: int = 10
    first_stride: int = 4
    later_kernel: int = 3
    later_stride: int = 1
    pool: int = 2
    dropout_p: float = 0.5
    n_classes: int = 4
    channels: int = 7
    length: int = 1500
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_scu_blocks <= MAX_SCU_BLOCKS:
            raise ConfigError(f"n_scu_blocks must lie in 1..{MAX_SCU_BLOCKS}, got {self.n_scu_blocks}")
        for name in ("filters", "first_kernel", "first_stride", "later_kernel", "later_stride", "pool",
                     "n_classes", "channels", "length"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0 <= self.dropout_p < 1:
            raise ConfigError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")

    def block(self, i):
        """(kernel, stride) of block ``i`` (0-based)."""
        return (self.first_kernel, self.first_stride) if i == 0 else (self.later_kernel, self.later_stride)

    def length_trace(self):
        """Sequence length entering the network and after every block."""
        trace = [self.length]
        n = self.length
        for i in range(self.n_scu_blocks):
            k, s = self.block(i)
            if n < k:
                raise ConfigError(f"SCU block {i + 1}: input length {n} shorter than kernel {k}")
            n = (n - k) // s + 1
            if n < self.pool:
                raise ConfigError(f"SCU block {i + 1}: conv output length {n} shorter than pool {self.pool}")
            n //= self.pool
            trace.append(n)
        return trace

    def flat_features(self):
        return self.filters * self.length_trace()[-1]


def build_scu_cnn(spec: ScuSpec | None = None) -> Network:
    spec = spec or ScuSpec()
    trace = spec.length_trace()
    layers = []
    c_in = spec.channels
    for i in range(spec.n_scu_blocks):
        k, s = spec.block(i)
        layers += [Conv1d(c_in, spec.filters, k, s, seed=_layer_seed(spec.seed, i)),
                   BatchNorm1d(spec.filters), ReLU(), MaxPool1d(spec.pool)]
        c_in = spec.filters
    flat = spec.filters * trace[-1]
    layers += [Flatten(), Dropout(spec.dropout_p, seed=_layer_seed(spec.seed, 100)),
               Dense(flat, spec.n_classes, seed=_layer_seed(spec.seed, 101))]
    name = "scu-cnn" if spec.n_scu_blocks == 1 else f"deep-scu:{spec.n_scu_blocks}"
    net = Network(layers, (spec.channels, spec.length), spec.n_classes, name=name)
    # per-block lengths recorded by the network must agree with the spec's arithmetic
    runtime = [net.shape_trace[0][1]] + [net.shape_trace[4 * (i + 1)][1] for i in range(spec.n_scu_blocks)]
    assert runtime == trace, (runtime, trace)
    return net


def build_deep_scu_cnn(spec: ScuSpec) -> Network:
    if spec.n_scu_blocks < 2:
        raise ConfigError("the deep variant needs at least 2 SCU blocks")
    return build_scu_cnn(spec)


def build_recurrent(kind, hidden=64, channels=7, length=1500, n_classes=4, dropout_p=0.001, seed=0) -> Network:
    if hidden < 1:
        raise ConfigError("hidden size must be >= 1")
    layers = [Recurrent(kind, channels, hidden, seed=_layer_seed(seed, 0)),
              Dropout(dropout_p, seed=_layer_seed(seed, 100)),
              Dense(hidden, n_classes, seed=_layer_seed(seed, 101))]
    return Network(layers, (channels, length), n_classes, name=kind)


def parse_arch(arch: str, spec: ScuSpec | None = None, hidden=64) -> Network:
    """Build from a CLI architecture name: ``scu``/``cnn``, ``deep-scu:N``,
    ``rnn``/``vanilla``, ``lstm`` or ``gru``."""
    spec = spec or ScuSpec()
    if arch in ("scu", "cnn"):
        return build_scu_cnn(replace(spec, n_scu_blocks=1))
    if arch.startswith("deep-scu:"):
        try:
            n = int(arch.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad block count in {arch!r}") from None
        return build_scu_cnn(replace(spec, n_scu_blocks=n))
    kinds = {"rnn": "vanilla", "vanilla": "vanilla", "lstm": "lstm", "gru": "gru"}
    if arch in kinds:
        return build_recurrent(kinds[arch], hidden, spec.channels, spec.length, spec.n_classes,
                               seed=spec.seed)
    raise ConfigError(f"unknown architecture {arch!r}")


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    lambda_l2: float = 1e-4
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr < 0 or self.lambda_l2 < 0:
            raise ConfigError("lr and lambda_l2 must be >= 0")


# lambda as stated with the objective vs. as listed with the experiment settings
PRESETS = {
    "paper-method": TrainConfig(lambda_l2=1e-4),
    "paper-results": TrainConfig(lambda_l2=1e-3),
}


def read_config(path):
    """Parse ``key = value`` lines into ``(TrainConfig, ScuSpec)``.

    Keys may name any TrainConfig or ScuSpec field, plus ``preset``. Both
    types have a ``seed``: the key ``seed`` sets the shuffling seed and, unless
    ``init_seed`` is also given, the weight-initialisation seed. Values are
    Python literals; ``#`` starts a comment.
    """
    train_keys = {f.name for f in fields(TrainConfig)}
    spec_keys = {f.name for f in fields(ScuSpec)} - {"seed"} | {"init_seed"}
    tvals, svals = {}, {}
    base = TrainConfig()
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        try:
            value = ast.literal_eval(raw)
        except (ValueError, SyntaxError):
            value = raw
        if key == "preset":
            if value not in PRESETS:
                raise ConfigError(f"{path}:{lineno}: unknown preset {value!r}")
            base = PRESETS[value]
        elif key in train_keys:
            tvals[key] = value
        elif key in spec_keys:
            svals["seed" if key == "init_seed" else key] = value
        else:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
    if "seed" in tvals:
        svals.setdefault("seed", tvals["seed"])
    try:
        return replace(base, **tvals), ScuSpec(**svals)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def write_config(path, cfg: TrainConfig, spec: ScuSpec | None = None):
    items = asdict(cfg)
    if spec is not None:
        items |= {("init_seed" if k == "seed" else k): v for k, v in asdict(spec).items()}
    Path(path).write_text("".join(f"{k} = {v!r}\n" for k, v in items.items()), encoding="utf-8")


@dataclass
class TrainResult:
    model: Network
    history: list = field(default_factory=list)


def _as_arrays(data, labels=None):
    if labels is None:                       # a Dataset
        return data.samples(), np.asarray(data.labels)
    return np.asarray(data, dtype=np.float64), np.asarray(labels)


def train(model: Network, data, labels=None, cfg: TrainConfig | None = None, on_epoch=None) -> TrainResult:
    """Minimise mean CCE + ``lambda_l2 * sum ||w||^2`` with Adam over seeded
    shuffled mini-batches. Returns the per-epoch mean training loss."""
    cfg = cfg or TrainConfig()
    x, y = _as_arrays(data, labels)
    if len(x) == 0:
        raise ConfigError("empty training set")
    if len(x) != len(y):
        raise ConfigError(f"{len(x)} inputs but {len(y)} labels")
    if y.min() < 0 or y.max() >= model.n_classes:
        raise ConfigError(f"labels must lie in 0..{model.n_classes - 1}")
    rng = make_rng(cfg.seed, STREAM_SHUFFLE)
    opt = AdamState(lr=cfg.lr)
    params = model.parameters()
    history = []
    n = len(x)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            try:
                loss = model.loss_and_grad(x[idx], y[idx], cfg.lambda_l2, train=True)
            except NumericalError as exc:
                raise NumericalError(f"training aborted at epoch {epoch}, batch {bi}: {exc}") from exc
            adam_step(opt, params, model.gradients())
            total += loss * len(idx)
        history.append(total / n)
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return TrainResult(model, history)


def predict(model: Network, data, batch_size=64):
    """Eval-mode labels (argmax, ties to the lowest index) and probabilities."""
    x = data.samples() if hasattr(data, "samples") else np.asarray(data, dtype=np.float64)
    return model.predict(x, batch_size)
