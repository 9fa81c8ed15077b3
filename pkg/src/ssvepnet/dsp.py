"""Baseline preprocessing chain: decimate, re-reference, notch, bandpass.

Filters are cascades of second-order sections stored as rows
``[b0, b1, b2, 1, a1, a2]``. Every stage is linear so the whole chain is
linear in its input.
"""
from __future__ import annotations

import functools
import logging
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .dataio import Dataset, Montage, Trial
from .errors import ConfigError, SsvepError

log = logging.getLogger(__name__)

DECIMATION_ORDER = 8
DECIMATION_MIN_LENGTH = 64


class FilterDesignError(ConfigError):
    pass


class SignalLengthError(ConfigError):
    pass


@dataclass(frozen=True, eq=False)
class BiquadCascade:
    sections: np.ndarray

    def __post_init__(self):
        sos = np.array(self.sections, dtype=np.float64, ndmin=2, copy=True)
        if sos.ndim != 2 or sos.shape[1] != 6:
            raise FilterDesignError(f"sections must be (n, 6), got {sos.shape}")
        if not np.allclose(sos[:, 3], 1.0):
            raise FilterDesignError("sections must be normalised to a0 = 1")
        sos.setflags(write=False)
        object.__setattr__(self, "sections", sos)

    @property
    def order(self) -> int:
        return 2 * len(self.sections)

    def is_stable(self) -> bool:
        a1, a2 = self.sections[:, 4], self.sections[:, 5]
        return bool(np.all(np.abs(a2) < 1) and np.all(np.abs(a1) < 1 + a2))

    def frequency_response(self, freqs_hz, fs):
        """Complex response evaluated analytically on the unit circle."""
        z = np.exp(-1j * 2 * np.pi * np.asarray(freqs_hz, dtype=float) / fs)
        h = np.ones_like(z)
        for b0, b1, b2, _, a1, a2 in self.sections:
            h = h * (b0 + b1 * z + b2 * z * z) / (1 + a1 * z + a2 * z * z)
        return h

    @classmethod
    def identity(cls) -> "BiquadCascade":
        return cls(np.array([[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]]))


def _require_stable(c: BiquadCascade) -> BiquadCascade:
    if not c.is_stable():
        raise FilterDesignError("designed cascade has poles on or outside the unit circle")
    return c


@functools.lru_cache(maxsize=None)
def design_notch(f0: float, fs: float, q: float = 30.0) -> BiquadCascade:
    """Single-biquad notch at ``f0`` with unit gain at DC and Nyquist."""
    if q <= 0:
        raise FilterDesignError(f"notch quality factor must be positive, got {q}")
    if not 0 < f0 < fs / 2:
        raise FilterDesignError(f"notch frequency {f0} Hz must lie in (0, {fs / 2}) Hz")
    w0 = 2 * np.pi * f0 / fs
    alpha = np.sin(w0) / (2 * q)
    cosw = np.cos(w0)
    a0 = 1 + alpha
    sos = np.array([[1 / a0, -2 * cosw / a0, 1 / a0, 1.0, -2 * cosw / a0, (1 - alpha) / a0]])
    return _require_stable(BiquadCascade(sos))


@functools.lru_cache(maxsize=None)
def design_bandpass(lo: float, hi: float, order: int, fs: float) -> BiquadCascade:
    """Butterworth bandpass of total (even) ``order`` as second-order sections."""
    if order < 2 or order % 2:
        raise FilterDesignError(f"bandpass order must be a positive even integer, got {order}")
    if not 0 < lo < hi < fs / 2:
        raise FilterDesignError(f"invalid band {lo}-{hi} Hz at fs={fs} Hz (Nyquist {fs / 2})")
    sos = signal.butter(order // 2, [lo, hi], btype="bandpass", fs=fs, output="sos")
    return _require_stable(BiquadCascade(sos))


@functools.lru_cache(maxsize=None)
def design_lowpass(cutoff: float, order: int, fs: float) -> BiquadCascade:
    if not 0 < cutoff < fs / 2:
        raise FilterDesignError(f"lowpass cutoff {cutoff} Hz outside (0, {fs / 2})")
    sos = signal.butter(order, cutoff, btype="lowpass", fs=fs, output="sos")
    return _require_stable(BiquadCascade(sos))


def filtfilt(f: BiquadCascade, x) -> np.ndarray:
    """Zero-phase forward/backward application along the last axis.

    The signal is extended by odd reflection of ``3 * order`` samples at each
    end and both passes start from the steady-state initial conditions of the
    edge sample, so constants pass through unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    pad = 3 * f.order
    if n < pad:
        raise SignalLengthError(f"signal of {n} samples shorter than 3 x filter order = {pad}")
    pad = min(pad, n - 1)
    rows = x.reshape(-1, n)
    if pad:
        head = 2 * rows[:, :1] - rows[:, pad:0:-1]
        tail = 2 * rows[:, -1:] - rows[:, -2:-pad - 2:-1]
        rows = np.concatenate([head, rows, tail], axis=1)
    sos = np.array(f.sections)
    zi = signal.sosfilt_zi(sos)[:, None, :]

    def run(sig):
        y, _ = signal.sosfilt(sos, sig, axis=-1, zi=zi * sig[None, :, :1])
        return y

    y = run(rows)
    y = run(y[:, ::-1])[:, ::-1]
    if pad:
        y = y[:, pad:-pad]
    return np.ascontiguousarray(y).reshape(x.shape)


def decimate_by_2(x, fs: float):
    """Anti-alias (zero-phase 8th-order Butterworth at 0.8 x new Nyquist) and keep
    every second sample. Returns ``(y, fs / 2)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < DECIMATION_MIN_LENGTH:
        raise SignalLengthError(
            f"decimation needs at least {DECIMATION_MIN_LENGTH} samples, got {x.shape[-1]}")
    new_fs = fs / 2.0
    lp = design_lowpass(0.8 * new_fs / 2.0, DECIMATION_ORDER, fs)
    y = filtfilt(lp, x)
    return np.ascontiguousarray(y[..., ::2]), new_fs


def rereference(x, reference_row: int) -> np.ndarray:
    """Subtract row ``reference_row`` from every row, then drop it."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not -n <= reference_row < n:
        raise ConfigError(f"reference row {reference_row} out of range for {n} channels")
    reference_row %= n
    y = x - x[reference_row]
    return np.delete(y, reference_row, axis=0)


@dataclass(frozen=True)
class PreprocessConfig:
    notch_hz: float = 50.0
    notch_q: float = 30.0
    band: tuple = (9.0, 100.0)
    order: int = 4


def _stage(name, fn, *args):
    try:
        return fn(*args)
    except SsvepError as exc:
        raise type(exc)(f"{name}: {exc}") from exc


def preprocess_array(x, reference, fs: float, cfg: PreprocessConfig = PreprocessConfig()):
    """Run the chain on a channels x time array plus a reference row.

    Returns ``(y, new_fs)``.
    """
    stacked = np.vstack([np.asarray(x, dtype=np.float64), np.asarray(reference, dtype=np.float64)[None]])
    y, fs2 = _stage("decimate", decimate_by_2, stacked, fs)
    y = _stage("rereference", rereference, y, y.shape[0] - 1)
    notch = _stage("notch", design_notch, cfg.notch_hz, fs2, cfg.notch_q)
    y = _stage("notch", filtfilt, notch, y)
    band = _stage("bandpass", design_bandpass, cfg.band[0], cfg.band[1], cfg.order, fs2)
    y = _stage("bandpass", filtfilt, band, y)
    return y, fs2


def preprocess_trial(t: Trial, montage: Montage | None = None,
                     cfg: PreprocessConfig = PreprocessConfig()) -> Trial:
    """Decimate to half rate, re-reference to Fz, notch and bandpass one trial.

    Trials without a stored reference are referenced to a zero row, which
    leaves the channels unchanged by that stage.
    """
    ref = t.reference
    if ref is None:
        log.debug("trial of %s has no reference signal; using zeros", t.subject_id)
        ref = np.zeros(t.n_samples)
    y, fs2 = preprocess_array(t.samples, ref, t.sample_rate_hz, cfg)
    return Trial(t.subject_id, t.label, y, fs2, None)


def preprocess_dataset(ds: Dataset, cfg: PreprocessConfig = PreprocessConfig()) -> Dataset:
    trials = tuple(preprocess_trial(t, ds.montage, cfg) for t in ds.trials)
    montage = ds.montage.with_rate(ds.montage.sample_rate_hz / 2.0, reference=None)
    return Dataset(montage, trials)
