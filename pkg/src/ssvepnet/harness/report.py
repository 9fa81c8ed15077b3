"""Confusion matrices, experiment reports and their text/csv/svg renderings."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

from ..errors import ConfigError, DataIntegrityError

REPORT_SCHEMA = "ssvep-report-v1"


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or np.any(c < 0):
            raise DataIntegrityError(f"invalid confusion counts of shape {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_labels(cls, true, pred, n_classes):
        c = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(c, (np.asarray(true, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
        return cls(c)

    def __add__(self, other):
        return ConfusionMatrix(self.counts + other.counts)

    @property
    def accuracy(self):
        total = self.counts.sum()
        return float(np.trace(self.counts) / total) if total else 0.0

    def row_normalized(self):
        rows = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)


def fingerprint(settings: dict) -> str:
    blob = json.dumps(settings, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    """Accuracy per fold, summed confusion matrix and the settings fingerprint.

    ``subjects`` holds the per-subject reports of a per-subject design; the
    parent then carries one accuracy per subject (their means).
    """

    name: str
    per_fold_accuracy: tuple
    confusion: ConfusionMatrix
    settings: dict = field(default_factory=dict)
    subjects: tuple = ()
    audit: dict = field(default_factory=dict)

    def __post_init__(self):
        accs = tuple(float(a) for a in self.per_fold_accuracy)
        if not accs or any(not 0 <= a <= 1 for a in accs):
            raise DataIntegrityError(f"fold accuracies must lie in [0, 1]: {accs}")
        object.__setattr__(self, "per_fold_accuracy", accs)

    @property
    def mean(self):
        return float(np.mean(self.per_fold_accuracy))

    @property
    def std(self):
        return float(np.std(self.per_fold_accuracy))      # population

    @property
    def fingerprint(self):
        return fingerprint(self.settings)

    def summary(self, digits=2):
        return f"{self.mean:.{digits}f}±{self.std:.{digits}f}"

    def to_dict(self):
        return {
            "schema": REPORT_SCHEMA,
            "name": self.name,
            "per_fold_accuracy": list(self.per_fold_accuracy),
            "confusion": self.confusion.counts.tolist(),
            "settings": self.settings,
            "audit": self.audit,
            "subjects": [s.to_dict() for s in self.subjects],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema") != REPORT_SCHEMA:
            raise DataIntegrityError(f"unsupported report schema {d.get('schema')!r}")
        return cls(d["name"], tuple(d["per_fold_accuracy"]), ConfusionMatrix(np.array(d["confusion"])),
                   d.get("settings", {}), tuple(cls.from_dict(s) for s in d.get("subjects", ())),
                   d.get("audit", {}))


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _text(r: ExperimentReport) -> str:
    s = r.settings
    lines = [
        f"design: {s.get('design', '-')}",
        f"method: {s.get('method', '-')}  pre-processing: {'on' if s.get('pre') else 'off'}",
        f"fingerprint: {r.fingerprint}",
    ]
    for sub in r.subjects:
        lines.append(f"{sub.name}: {sub.summary()}")
    label = "mean" if r.subjects else r.name
    lines.append(f"{label}: {r.summary()}")
    lines.append("folds: " + " ".join(f"{a:.4f}" for a in r.per_fold_accuracy))
    lines.append("confusion (rows true, columns predicted):")
    width = max(4, len(str(int(r.confusion.counts.max(initial=0)))) + 1)
    for row in r.confusion.counts:
        lines.append("  " + "".join(f"{int(v):>{width}d}" for v in row))
    norm = r.confusion.row_normalized()
    lines.append("per-class accuracy: " + " ".join(f"{v:.3f}" for v in np.diag(norm)))
    return "\n".join(lines) + "\n"


def _csv(r: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "name", "index", "values"])
    for sub in (*r.subjects, r):
        for i, a in enumerate(sub.per_fold_accuracy):
            w.writerow(["fold", sub.name, i, f"{a:.6f}"])
        w.writerow(["summary", sub.name, "mean", f"{sub.mean:.6f}"])
        w.writerow(["summary", sub.name, "std", f"{sub.std:.6f}"])
        for i, row in enumerate(sub.confusion.counts):
            w.writerow(["confusion", sub.name, i, *map(int, row)])
    return buf.getvalue()


def _svg(r: ExperimentReport, class_names=None) -> str:
    norm = r.confusion.row_normalized()
    k = norm.shape[0]
    names = list(class_names) if class_names else [str(i) for i in range(k)]
    cell, margin = 60, 80
    size = margin + k * cell + 20
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 20}" '
           f'font-family="sans-serif" font-size="12">',
           f'<text x="{margin}" y="16">{escape(r.name)} {escape(r.summary())}</text>']
    for i in range(k):
        y = margin + i * cell
        out.append(f'<text x="{margin - 8}" y="{y + cell // 2 + 4}" text-anchor="end">{escape(names[i])}</text>')
        out.append(f'<text x="{margin + i * cell + cell // 2}" y="{margin - 8}" '
                   f'text-anchor="middle">{escape(names[i])}</text>')
        for j in range(k):
            v = float(norm[i, j])
            shade = int(round(255 * (1 - v)))
            fill = f"rgb({shade},{shade},255)"
            ink = "white" if v > 0.5 else "black"
            x = margin + j * cell
            out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="gray"/>')
            out.append(f'<text x="{x + cell // 2}" y="{y + cell // 2 + 4}" text-anchor="middle" '
                       f'fill="{ink}">{v:.2f}</text>')
    out.append(f'<text x="{margin + k * cell // 2}" y="{size + 14}" text-anchor="middle">predicted</text>')
    out.append(f'<text x="14" y="{margin + k * cell // 2}" transform="rotate(-90 14 {margin + k * cell // 2})" '
               f'text-anchor="middle">true</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(r: ExperimentReport, fmt="text", class_names=None) -> str:
    if fmt == "text":
        return _text(r)
    if fmt == "csv":
        return _csv(r)
    if fmt == "svg":
        return _svg(r, class_names)
    raise ConfigError(f"unknown report format {fmt!r}; choose text, csv or svg")
