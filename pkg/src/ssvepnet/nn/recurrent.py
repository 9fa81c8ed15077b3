"""Vanilla RNN, LSTM and GRU cells unrolled over time with BPTT.

Input is ``(batch, channels, length)``: one time step is the vector of all
channels at that sample. The layer returns the last hidden state.
"""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from ..rng import make_rng
from .layers import Layer

GATES = {"vanilla": 1, "lstm": 4, "gru": 3}


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Recurrent(Layer):
    """Single-layer recurrent cell with zero initial state.

    Parameters ``w_ih`` (G*H, D), ``w_hh`` (G*H, H) and ``b`` (G*H) with G the
    gate count. LSTM gate order is input, forget, cell, output; GRU order is
    update, reset, candidate with the reset gate applied to ``w_hh h``.
    """

    kind = "recurrent"
    decay = ("w_ih", "w_hh")

    def __init__(self, cell, input_size, hidden, seed=0):
        super().__init__()
        if cell not in GATES:
            raise ConfigError(f"unknown recurrent cell {cell!r}")
        if hidden < 1 or input_size < 1:
            raise ConfigError("hidden and input sizes must be >= 1")
        self.cell, self.input_size, self.hidden, self.seed = cell, input_size, hidden, seed
        g = GATES[cell] * hidden
        rng = make_rng(seed)
        bound = 1.0 / np.sqrt(hidden)
        self.params["w_ih"] = rng.uniform(-bound, bound, (g, input_size))
        self.params["w_hh"] = rng.uniform(-bound, bound, (g, hidden))
        self.params["b"] = np.zeros(g)
        self._init_grads()

    def config(self):
        return {"cell": self.cell, "input_size": self.input_size, "hidden": self.hidden, "seed": self.seed}

    def output_shape(self, in_shape):
        if in_shape[0] != self.input_size:
            raise ConfigError(f"recurrent layer expects {self.input_size} channels, got {in_shape[0]}")
        return (self.hidden,)

    def forward(self, x, train=False, initial_state=None):
        b, d, length = x.shape
        if d != self.input_size:
            raise ConfigError(f"recurrent layer expects {self.input_size} channels, got {d}")
        H = self.hidden
        wih, whh, bias = self.params["w_ih"], self.params["w_hh"], self.params["b"]
        # input projections for every step at once: (length, b, G*H)
        xproj = np.einsum("bdt,gd->tbg", x, wih) + bias
        h = np.zeros((b, H)) if initial_state is None else np.array(initial_state[0], dtype=float)
        c = None
        if self.cell == "lstm":
            c = np.zeros((b, H)) if initial_state is None else np.array(initial_state[1], dtype=float)
        steps = []
        for t in range(length):
            h_prev = h
            if self.cell == "vanilla":
                h = np.tanh(xproj[t] + h_prev @ whh.T)
                steps.append((h_prev, h))
            elif self.cell == "lstm":
                z = xproj[t] + h_prev @ whh.T
                i = _sigmoid(z[:, :H])
                f = _sigmoid(z[:, H:2 * H])
                g = np.tanh(z[:, 2 * H:3 * H])
                o = _sigmoid(z[:, 3 * H:])
                c_prev = c
                c = f * c_prev + i * g
                tc = np.tanh(c)
                h = o * tc
                steps.append((h_prev, c_prev, i, f, g, o, tc))
            else:
                hh = h_prev @ whh.T
                xp = xproj[t]
                zg = _sigmoid(xp[:, :H] + hh[:, :H])
                r = _sigmoid(xp[:, H:2 * H] + hh[:, H:2 * H])
                n = np.tanh(xp[:, 2 * H:] + r * hh[:, 2 * H:])
                h = (1 - zg) * n + zg * h_prev
                steps.append((h_prev, zg, r, n, hh[:, 2 * H:]))
        self._cache = (x, steps)
        self.last_cell_state = c
        return h

    def backward(self, grad):
        x, steps = self._cache
        H = self.hidden
        whh = self.params["w_hh"]
        length = len(steps)
        dz_all = np.zeros((length, x.shape[0], GATES[self.cell] * H))
        dwhh = np.zeros_like(whh)
        dh = grad
        dc = None
        for t in range(length - 1, -1, -1):
            if self.cell == "vanilla":
                h_prev, h = steps[t]
                dz = dh * (1 - h * h)
                dz_all[t] = dz
                dwhh += dz.T @ h_prev
                dh = dz @ whh
            elif self.cell == "lstm":
                h_prev, c_prev, i, f, g, o, tc = steps[t]
                if dc is None:
                    dc = np.zeros_like(dh)
                do = dh * tc
                dc = dc + dh * o * (1 - tc * tc)
                di = dc * g
                df = dc * c_prev
                dg = dc * i
                dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g),
                                     do * o * (1 - o)], axis=1)
                dz_all[t] = dz
                dwhh += dz.T @ h_prev
                dh = dz @ whh
                dc = dc * f
            else:
                h_prev, zg, r, n, hn = steps[t]
                dn = dh * (1 - zg)
                dzg = dh * (h_prev - n)
                dn_pre = dn * (1 - n * n)
                dr = dn_pre * hn
                dz_pre = dzg * zg * (1 - zg)
                dr_pre = dr * r * (1 - r)
                # x-side pre-activations
                dz = np.concatenate([dz_pre, dr_pre, dn_pre], axis=1)
                dz_all[t] = dz
                # h-side pre-activations: reset gate scales the candidate block
                dhh = np.concatenate([dz_pre, dr_pre, dn_pre * r], axis=1)
                dwhh += dhh.T @ h_prev
                dh = dh * zg + dhh @ whh
        self.grads["w_ih"] += np.einsum("tbg,bdt->gd", dz_all, x)
        self.grads["w_hh"] += dwhh
        self.grads["b"] += dz_all.sum(axis=(0, 1))
        if not self.need_input_grad:
            return None
        return np.einsum("tbg,gd->bdt", dz_all, self.params["w_ih"])
