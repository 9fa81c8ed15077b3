"""Sequential network with a softmax head, gradient checking and checkpoints."""
from __future__ import annotations

import copy
import json
import struct
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataIntegrityError, NumericalError
from .layers import BatchNorm1d, Conv1d, Dense, Dropout, Flatten, MaxPool1d, ReLU
from .losses import cce_loss, l2_penalty, one_hot, softmax, softmax_cce_grad
from .recurrent import Recurrent

CHECKPOINT_MAGIC = b"SCUNET01"
CHECKPOINT_VERSION = 1

LAYER_TYPES = {cls.kind: cls for cls in (Conv1d, BatchNorm1d, ReLU, MaxPool1d, Flatten, Dropout,
                                          Dense, Recurrent)}


def _check_finite(a, where):
    if a is not None and not np.all(np.isfinite(a)):
        raise NumericalError(f"non-finite values after {where}")


class Network:
    """Layers applied in order, producing logits for ``n_classes``.

    ``shape_trace`` lists the per-sample shape after every layer and is
    validated at construction time.
    """

    def __init__(self, layers, input_shape, n_classes, name="network"):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.n_classes = n_classes
        self.name = name
        shape = self.input_shape
        trace = [shape]
        for i, layer in enumerate(self.layers):
            try:
                shape = tuple(layer.output_shape(shape))
            except ConfigError as exc:
                raise ConfigError(f"layer {i} ({layer.kind}): {exc}") from exc
            trace.append(shape)
        if shape != (n_classes,):
            raise ConfigError(f"network output shape {shape} != ({n_classes},)")
        self.shape_trace = trace
        if self.layers:
            self.layers[0].need_input_grad = False

    # -- forward / backward -------------------------------------------------
    def forward(self, x, train=False):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ConfigError(f"input shape {x.shape[1:]} != expected {self.input_shape}")
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, train)
            _check_finite(x, f"forward of layer {i} ({layer.kind})")
        return x

    def backward(self, grad):
        for i in range(len(self.layers) - 1, -1, -1):
            grad = self.layers[i].backward(grad)
            _check_finite(grad, f"backward of layer {i} ({self.layers[i].kind})")
        return grad

    def predict_proba(self, x, batch_size=64):
        x = np.asarray(x, dtype=np.float64)
        out = [softmax(self.forward(x[i:i + batch_size], train=False))
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.n_classes))

    def predict(self, x, batch_size=64):
        probs = self.predict_proba(x, batch_size)
        return np.argmax(probs, axis=1), probs

    # -- parameters -----------------------------------------------------------
    def named_parameters(self):
        """``(layer_index, name, array)`` in declaration order."""
        return [(i, k, v) for i, layer in enumerate(self.layers) for k, v in layer.params.items()]

    def parameters(self):
        return [v for _, _, v in self.named_parameters()]

    def gradients(self):
        return [layer.grads[k] for layer in self.layers for k in layer.params]

    def weights(self):
        """Arrays subject to the L2 penalty."""
        return [layer.params[k] for layer in self.layers for k in layer.decay]

    def n_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    # -- objective ------------------------------------------------------------
    def objective(self, x, labels, lam=0.0, train=True):
        """Mean CCE of the softmax head plus ``lam * sum ||w||^2``."""
        y = labels if np.ndim(labels) == 2 else one_hot(labels, self.n_classes)
        probs = softmax(self.forward(x, train))
        pen, _ = l2_penalty(self.weights(), lam)
        return cce_loss(probs, y) + pen

    def loss_and_grad(self, x, labels, lam=0.0, train=True):
        """Forward, loss and full backward pass; gradients land in ``layer.grads``."""
        y = labels if np.ndim(labels) == 2 else one_hot(labels, self.n_classes)
        self.zero_grad()
        probs = softmax(self.forward(x, train))
        loss = cce_loss(probs, y)
        pen, pen_grads = l2_penalty(self.weights(), lam)
        self.backward(softmax_cce_grad(probs, y))
        j = 0
        for layer in self.layers:
            for k in layer.decay:
                layer.grads[k] += pen_grads[j]
                j += 1
        total = loss + pen
        if not np.isfinite(total):
            raise NumericalError(f"non-finite loss {total}")
        return total

    # -- modes ----------------------------------------------------------------
    @contextmanager
    def deterministic(self):
        """Freeze dropout masks and snapshot batch-norm buffers; restore on exit."""
        saved = [copy.deepcopy(layer.buffers) for layer in self.layers]
        drops = [layer for layer in self.layers if isinstance(layer, Dropout)]
        for d in drops:
            d.frozen = True
        try:
            yield self
        finally:
            for d in drops:
                d.frozen = False
            for layer, buf in zip(self.layers, saved):
                layer.buffers = buf

    def descriptor(self) -> dict:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "n_classes": self.n_classes,
            "layers": [{"kind": layer.kind, "config": layer.config()} for layer in self.layers],
        }

    def __repr__(self):
        body = "\n".join(f"  {layer!r}  -> {s}" for layer, s in zip(self.layers, self.shape_trace[1:]))
        return f"Network({self.name}, input={self.input_shape})\n{body}"


def network_from_descriptor(d: dict) -> Network:
    layers = []
    for spec in d["layers"]:
        try:
            cls = LAYER_TYPES[spec["kind"]]
        except KeyError:
            raise DataIntegrityError(f"unknown layer kind {spec['kind']!r}") from None
        layers.append(cls(**spec["config"]))
    return Network(layers, tuple(d["input_shape"]), int(d["n_classes"]), d.get("name", "network"))


def _rel_err(a, n, floor):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(model: Network, x, labels, epsilon=1e-5, lam=0.0, floor=1e-6):
    """Largest relative error between analytic and central-difference gradients
    over every parameter element.

    Runs with frozen dropout masks and batch statistics of the probe batch;
    running statistics are restored afterwards. Elementwise relative error is
    ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps round-off on
    vanishing gradients from dominating.
    """
    params = model.parameters()
    if not params:
        return 0.0
    with model.deterministic():
        model.forward(x, train=True)        # draw the dropout masks once
        model.loss_and_grad(x, labels, lam, train=True)
        analytic = [g.copy() for g in model.gradients()]
        worst = 0.0
        for p, a in zip(params, analytic):
            flat = p.reshape(-1)
            num = np.empty(flat.size)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + epsilon
                fp = model.objective(x, labels, lam, train=True)
                flat[i] = old - epsilon
                fm = model.objective(x, labels, lam, train=True)
                flat[i] = old
                num[i] = (fp - fm) / (2 * epsilon)
            worst = max(worst, float(np.max(_rel_err(a.reshape(-1), num, floor))))
    return worst


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: Network, path):
    """``SCUNET01`` + u32 descriptor length + UTF-8 JSON descriptor + float64 LE
    parameters (declaration order) followed by batch-norm buffers."""
    desc = model.descriptor()
    desc["version"] = CHECKPOINT_VERSION
    desc["params"] = [[i, k, list(v.shape)] for i, k, v in model.named_parameters()]
    desc["buffers"] = [[i, k, list(np.shape(v))] for i, layer in enumerate(model.layers)
                       for k, v in layer.buffers.items()]
    blob = json.dumps(desc, sort_keys=True).encode("utf-8")
    arrays = [v for _, _, v in model.named_parameters()]
    arrays += [layer.buffers[k] for layer in model.layers for k in layer.buffers]
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> Network:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise DataIntegrityError(f"{path}: not a checkpoint (bad magic)")
    if len(raw) < 12:
        raise DataIntegrityError(f"{path}: truncated header")
    (n,) = struct.unpack("<I", raw[8:12])
    try:
        desc = json.loads(raw[12:12 + n].decode("utf-8"))
    except ValueError as exc:
        raise DataIntegrityError(f"{path}: corrupt descriptor: {exc}") from exc
    if desc.get("version") != CHECKPOINT_VERSION:
        raise DataIntegrityError(f"{path}: unsupported checkpoint version {desc.get('version')}")
    model = network_from_descriptor(desc)
    data = np.frombuffer(raw[12 + n:], dtype="<f8")
    expected = sum(int(np.prod(s)) for _, _, s in desc["params"] + desc["buffers"])
    if data.size != expected:
        raise DataIntegrityError(f"{path}: {data.size} values stored, descriptor needs {expected}")
    off = 0
    for i, k, shape in desc["params"]:
        size = int(np.prod(shape))
        model.layers[i].params[k][...] = data[off:off + size].reshape(shape)
        off += size
    for i, k, shape in desc["buffers"]:
        size = int(np.prod(shape))
        model.layers[i].buffers[k] = data[off:off + size].reshape(shape).copy()
        off += size
    return model
