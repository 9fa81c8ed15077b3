"""Trial/dataset model, on-disk archive format and the synthetic SSVEP generator.

Archive layout (a directory)::

    manifest.json      montage + ordered trial records
    trial_00000.bin    b"SSVEPTRL" + float32 LE samples, channel-major
    ...

When a trial carries a reference (Fz) signal it is stored as the last row of
its blob and ``has_reference`` is set in the manifest record.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DataIntegrityError
from .rng import make_rng

DEFAULT_CHANNELS = ("P7", "P3", "Pz", "P4", "P8", "O1", "O2")
DEFAULT_SAMPLE_RATE = 500.0
CLASS_FREQS_HZ = (10.0, 12.0, 15.0, 30.0)

# Occipital dominance of the SSVEP response. Fixed, not configurable.
TOPOGRAPHY = {"P7": 0.4, "P3": 0.6, "Pz": 0.8, "P4": 0.6, "P8": 0.4, "O1": 1.0, "O2": 1.0}
# Propagation delay (s) of the evoked response relative to O1. Makes the
# channel covariance depend on stimulus frequency.
LATENCY_S = {"P7": 0.012, "P3": 0.008, "Pz": 0.005, "P4": 0.007, "P8": 0.014, "O1": 0.0, "O2": 0.002}

BLOB_MAGIC = b"SSVEPTRL"
MANIFEST_NAME = "manifest.json"
ARCHIVE_FORMAT = "ssvep-archive-v1"


class ArchiveError(DataIntegrityError):
    """Base class for archive parse failures."""


class MissingBlobError(ArchiveError):
    pass


class MagicMismatchError(ArchiveError):
    pass


class ShapeMismatchError(ArchiveError):
    pass


class TruncatedBlobError(ArchiveError):
    pass


class SerializationError(DataIntegrityError):
    pass


class GenerationError(ConfigError):
    pass


@dataclass(frozen=True)
class Montage:
    channel_names: tuple = DEFAULT_CHANNELS
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE
    reference: Optional[str] = "Fz"

    def __post_init__(self):
        names = tuple(self.channel_names)
        object.__setattr__(self, "channel_names", names)
        if not names or any(not n for n in names):
            raise ConfigError("montage channel names must be non-empty")
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate channel names in montage: {names}")
        if not self.sample_rate_hz > 0:
            raise ConfigError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if self.reference is not None and self.reference in names:
            raise ConfigError(f"reference {self.reference!r} must not be a montage channel")

    @property
    def n_channels(self) -> int:
        return len(self.channel_names)

    def with_rate(self, sample_rate_hz: float, reference=...) -> "Montage":
        ref = self.reference if reference is ... else reference
        return Montage(self.channel_names, sample_rate_hz, ref)

    def to_dict(self) -> dict:
        return {
            "channel_names": list(self.channel_names),
            "sample_rate_hz": self.sample_rate_hz,
            "reference": self.reference,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Montage":
        return cls(tuple(d["channel_names"]), float(d["sample_rate_hz"]), d.get("reference"))


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Trial:
    """One multichannel recording. ``samples`` is channels x time."""

    subject_id: str
    label: int
    samples: np.ndarray
    sample_rate_hz: float
    reference: Optional[np.ndarray] = None

    def __post_init__(self):
        s = _frozen(self.samples)
        if s.ndim != 2:
            raise DataIntegrityError(f"trial samples must be 2-D, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise DataIntegrityError(f"trial of {self.subject_id} contains non-finite samples")
        if int(self.label) not in range(len(CLASS_FREQS_HZ)):
            raise DataIntegrityError(f"label {self.label} outside 0..{len(CLASS_FREQS_HZ) - 1}")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))
        if self.reference is not None:
            r = _frozen(self.reference)
            if r.shape != (s.shape[1],):
                raise DataIntegrityError(
                    f"reference length {r.shape} does not match {s.shape[1]} samples")
            if not np.all(np.isfinite(r)):
                raise DataIntegrityError("reference contains non-finite samples")
            object.__setattr__(self, "reference", r)

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Trial):
            return NotImplemented
        if (self.subject_id, self.label, self.sample_rate_hz) != (
                other.subject_id, other.label, other.sample_rate_hz):
            return False
        if (self.reference is None) != (other.reference is None):
            return False
        if self.reference is not None and not np.array_equal(self.reference, other.reference):
            return False
        return np.array_equal(self.samples, other.samples)

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    montage: Montage
    trials: tuple = ()

    def __post_init__(self):
        trials = tuple(self.trials)
        object.__setattr__(self, "trials", trials)
        for i, t in enumerate(trials):
            if t.n_channels != self.montage.n_channels:
                raise DataIntegrityError(
                    f"trial {i} has {t.n_channels} channels, montage has {self.montage.n_channels}")
            if t.sample_rate_hz != self.montage.sample_rate_hz:
                raise DataIntegrityError(
                    f"trial {i} sampled at {t.sample_rate_hz} Hz, montage at "
                    f"{self.montage.sample_rate_hz} Hz")

    def __len__(self):
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)

    def __getitem__(self, i):
        return self.trials[i]

    @property
    def labels(self) -> np.ndarray:
        return np.array([t.label for t in self.trials], dtype=np.int64)

    @property
    def subjects(self) -> list:
        return [t.subject_id for t in self.trials]

    def subject_ids(self) -> list:
        """Distinct subject ids in order of first appearance."""
        return list(dict.fromkeys(self.subjects))

    def samples(self) -> np.ndarray:
        """Stack all trials into a (trials, channels, time) array."""
        if not self.trials:
            return np.zeros((0, self.montage.n_channels, 0))
        return np.stack([t.samples for t in self.trials])

    def subset(self, indices) -> "Dataset":
        return Dataset(self.montage, tuple(self.trials[int(i)] for i in indices))

    def select_subjects(self, subject_ids) -> "Dataset":
        keep = set(subject_ids)
        return Dataset(self.montage, tuple(t for t in self.trials if t.subject_id in keep))


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SubjectSpec:
    subject_id: str
    trials_per_class: int
    gain: float = 1.0
    phase_offset_rad: float = 0.0
    noise_sigma: float = 1.0


@dataclass(frozen=True)
class SynthConfig:
    subjects: tuple
    class_freqs_hz: tuple = CLASS_FREQS_HZ
    harmonics: int = 3
    harmonic_decay: float = 0.5
    line_noise_amp: float = 0.0
    pink_noise_amp: float = 0.0
    alpha_burst_amp: float = 0.0
    seed: int = 0
    duration_s: float = 3.0
    # per-trial uniform phase jitter in [-j, j] on top of the subject offset
    phase_jitter_rad: float = 0.0

    def __post_init__(self):
        subjects = tuple(s if isinstance(s, SubjectSpec) else SubjectSpec(*s) for s in self.subjects)
        object.__setattr__(self, "subjects", subjects)
        object.__setattr__(self, "class_freqs_hz", tuple(float(f) for f in self.class_freqs_hz))
        if len(self.class_freqs_hz) != len(CLASS_FREQS_HZ):
            raise ConfigError(f"need {len(CLASS_FREQS_HZ)} class frequencies")
        if any(f <= 0 for f in self.class_freqs_hz):
            raise ConfigError("class frequencies must be positive")
        if self.harmonics < 1:
            raise ConfigError("harmonics must be >= 1")
        if not 0 < self.harmonic_decay <= 1:
            raise ConfigError("harmonic_decay must lie in (0, 1]")
        for name in ("line_noise_amp", "pink_noise_amp", "alpha_burst_amp", "phase_jitter_rad"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        ids = [s.subject_id for s in subjects]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate subject ids: {ids}")
        for s in subjects:
            if s.trials_per_class < 0 or s.noise_sigma < 0:
                raise ConfigError(f"invalid subject spec {s}")


N_PINK_BANKS = 16
PINK_PER_BANK = 4
PINK_F_MIN = 0.5


def _pink_noise(rng, n_rows, t, fs):
    """Pink-ish noise: 16 half-octave banks of random-phase sinusoids, 1/f amplitude.

    Each row is scaled to unit RMS.
    """
    f_max = 0.45 * fs
    ratio = min(math.sqrt(2.0), (f_max / PINK_F_MIN) ** (1.0 / N_PINK_BANKS))
    lo = PINK_F_MIN * ratio ** np.arange(N_PINK_BANKS)
    freqs = lo[None, :, None] * ratio ** rng.uniform(0.0, 1.0, (n_rows, N_PINK_BANKS, PINK_PER_BANK))
    phases = rng.uniform(0.0, 2 * np.pi, freqs.shape)
    freqs = freqs.reshape(n_rows, -1)
    phases = phases.reshape(n_rows, -1)
    amps = 1.0 / freqs
    out = np.einsum("rk,rkt->rt", amps, np.sin(2 * np.pi * freqs[:, :, None] * t + phases[:, :, None]))
    rms = np.sqrt(np.mean(out ** 2, axis=1, keepdims=True))
    return out / np.where(rms > 0, rms, 1.0)


def _alpha_burst(rng, t, duration_s):
    """One Hann-windowed ~10 Hz burst of 1 s (or the whole trial if shorter)."""
    burst_len = min(1.0, duration_s)
    onset = rng.uniform(0.0, duration_s - burst_len) if duration_s > burst_len else 0.0
    freq = rng.uniform(9.0, 11.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    u = (t - onset) / burst_len
    window = np.where((u >= 0) & (u <= 1), np.sin(np.pi * np.clip(u, 0, 1)) ** 2, 0.0)
    return window * np.sin(2 * np.pi * freq * t + phase)


def _check_nyquist(cfg: SynthConfig, fs: float):
    nyq = fs / 2.0
    for f in cfg.class_freqs_hz:
        for h in range(1, cfg.harmonics + 1):
            if h * f >= nyq:
                raise GenerationError(
                    f"harmonic {h} of {f:g} Hz is {h * f:g} Hz, at or above Nyquist {nyq:g} Hz")


def ssvep_waveform(freq, t, gain, phase, harmonics, decay, latencies):
    """Noise-free evoked response, one row per latency."""
    tt = t[None, :] - np.asarray(latencies, dtype=float)[:, None]
    out = np.zeros_like(tt)
    for h in range(1, harmonics + 1):
        out += gain * decay ** (h - 1) * np.sin(2 * np.pi * h * freq * tt + phase)
    return out


def synth_dataset(cfg: SynthConfig, montage: Montage = Montage()) -> Dataset:
    """Generate a deterministic synthetic SSVEP dataset.

    Each channel is the topography-weighted harmonic series of the stimulus
    frequency (delayed by a fixed per-channel latency) plus independent pink
    and white noise and an alpha burst. A common-mode component (50 Hz line
    plus pink drift) is shared by every channel and by the Fz reference, which
    carries no SSVEP. Samples are rounded to float32 precision so that the
    archive round trip is exact.
    """
    fs = montage.sample_rate_hz
    _check_nyquist(cfg, fs)
    n_t = int(round(cfg.duration_s * fs))
    if not math.isclose(n_t, cfg.duration_s * fs, rel_tol=0, abs_tol=1e-9):
        raise ConfigError(f"duration {cfg.duration_s} s is not a whole number of samples at {fs} Hz")
    t = np.arange(n_t) / fs
    names = montage.channel_names
    topo = np.array([TOPOGRAPHY.get(c, 0.0) for c in names])
    lat = np.array([LATENCY_S.get(c, 0.0) for c in names])
    n_ch = len(names)
    has_ref = montage.reference is not None

    rng = make_rng(cfg.seed)
    trials = []
    for subj in cfg.subjects:
        for label, freq in enumerate(cfg.class_freqs_hz):
            for _ in range(subj.trials_per_class):
                jitter = rng.uniform(-cfg.phase_jitter_rad, cfg.phase_jitter_rad)
                phase = subj.phase_offset_rad + jitter
                x = topo[:, None] * ssvep_waveform(
                    freq, t, subj.gain, phase, cfg.harmonics, cfg.harmonic_decay, lat)

                # common-mode: line + pink drift, seen by Fz too
                line_phase = rng.uniform(0.0, 2 * np.pi)
                common = cfg.line_noise_amp * np.sin(2 * np.pi * 50.0 * t + line_phase)
                common = common + cfg.pink_noise_amp * _pink_noise(rng, 1, t, fs)[0]
                own_pink = 0.5 * cfg.pink_noise_amp * _pink_noise(rng, n_ch + 1, t, fs)
                white = subj.noise_sigma * rng.standard_normal((n_ch + 1, n_t))
                alpha = cfg.alpha_burst_amp * _alpha_burst(rng, t, cfg.duration_s)

                x = x + common + own_pink[:n_ch] + white[:n_ch] + topo[:, None] * alpha
                ref = common + own_pink[n_ch] + white[n_ch] if has_ref else None
                x = x.astype(np.float32).astype(np.float64)
                if ref is not None:
                    ref = ref.astype(np.float32).astype(np.float64)
                trials.append(Trial(subj.subject_id, label, x, fs, ref))
    return Dataset(montage, tuple(trials))


# ---------------------------------------------------------------------------
# archive
# ---------------------------------------------------------------------------

def write_archive(ds: Dataset, path) -> None:
    """Write ``ds`` as an archive directory at ``path``.

    Values are stored as float32; datasets whose samples are float32
    representable (everything ``synth_dataset`` produces) round-trip exactly.
    """
    path = Path(path)
    records = []
    blobs = []
    for i, tr in enumerate(ds.trials):
        rows = tr.samples if tr.reference is None else np.vstack([tr.samples, tr.reference])
        if not np.all(np.isfinite(rows)):
            raise SerializationError(f"trial {i} contains non-finite samples")
        name = f"trial_{i:05d}.bin"
        records.append({
            "subject_id": tr.subject_id,
            "label": tr.label,
            "file": name,
            "n_channels": int(rows.shape[0]),
            "n_samples": int(rows.shape[1]),
            "has_reference": tr.reference is not None,
        })
        blobs.append((name, rows))
    manifest = {
        "format": ARCHIVE_FORMAT,
        "montage": ds.montage.to_dict(),
        "sample_rate_hz": ds.montage.sample_rate_hz,
        "n_trials": len(records),
        "trials": records,
    }
    try:
        path.mkdir(parents=True, exist_ok=True)
        for name, rows in blobs:
            with open(path / name, "wb") as fh:
                fh.write(BLOB_MAGIC)
                fh.write(np.ascontiguousarray(rows, dtype="<f4").tobytes())
        with open(path / MANIFEST_NAME, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise DataIntegrityError(f"cannot write archive at {path}: {exc}") from exc


def read_archive(path) -> Dataset:
    path = Path(path)
    mpath = path / MANIFEST_NAME
    if not mpath.is_file():
        raise ArchiveError(f"no {MANIFEST_NAME} in {path}")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ArchiveError(f"unreadable manifest {mpath}: {exc}") from exc
    montage = Montage.from_dict(manifest["montage"])
    fs = montage.sample_rate_hz
    trials = []
    for i, rec in enumerate(manifest["trials"]):
        blob = path / rec["file"]
        if not blob.is_file():
            raise MissingBlobError(f"trial {i}: blob {rec['file']} missing")
        raw = blob.read_bytes()
        if raw[:len(BLOB_MAGIC)] != BLOB_MAGIC:
            raise MagicMismatchError(f"trial {i}: bad magic in {rec['file']}")
        payload = raw[len(BLOB_MAGIC):]
        if len(payload) % 4:
            raise TruncatedBlobError(f"trial {i}: {rec['file']} has a partial sample")
        rows, cols = int(rec["n_channels"]), int(rec["n_samples"])
        have_ref = bool(rec.get("has_reference", False))
        if rows != montage.n_channels + int(have_ref):
            raise ShapeMismatchError(
                f"trial {i}: manifest declares {rows} rows, montage implies "
                f"{montage.n_channels + int(have_ref)}")
        n_vals = len(payload) // 4
        if n_vals < rows * cols:
            if n_vals and n_vals % cols == 0:
                raise ShapeMismatchError(
                    f"trial {i}: blob holds {n_vals // cols}x{cols} values, manifest declares {rows}x{cols}")
            raise TruncatedBlobError(
                f"trial {i}: {rec['file']} truncated ({n_vals} of {rows * cols} values)")
        if n_vals > rows * cols:
            raise ShapeMismatchError(
                f"trial {i}: blob holds {n_vals} values, manifest declares {rows}x{cols}")
        data = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(rows, cols)
        ref = data[-1] if have_ref else None
        x = data[:-1] if have_ref else data
        trials.append(Trial(rec["subject_id"], rec["label"], x, fs, ref))
    return Dataset(montage, tuple(trials))


def default_subjects(trials_per_class=100, n_subjects=1):
    """Nuisance-varied subject specs S01..S0n used by the experiments."""
    table = [
        ("S01", 1.00, 0.00, 1.0),
        ("S02", 0.85, 0.35, 1.1),
        ("S03", 1.15, -0.30, 0.9),
        ("S04", 0.95, 0.15, 1.05),
    ]
    return tuple(SubjectSpec(sid, trials_per_class, g, p, s) for sid, g, p, s in table[:n_subjects])
