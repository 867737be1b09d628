"""Confusion matrix, one-vs-rest rhythm metrics, and report rendering."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .signals import Rhythm

METRICS = ("sens", "spec", "prec", "npv", "acc")
HEADERS = ("Sens.", "Spec.", "Prec.", "NPV", "Acc.")
CSV_COLUMNS = ("rhythm", *METRICS, "support", "flags")


def confusion(preds, labels, classes: int = 3) -> np.ndarray:
    """cm[true, pred] counts; rows true class, columns predicted class."""
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if preds.shape != labels.shape:
        raise ValueError(f"{preds.size} predictions vs {labels.size} labels")
    for name, a in (("prediction", preds), ("label", labels)):
        if a.size and (a.min() < 0 or a.max() >= classes):
            raise ValueError(f"{name} outside 0..{classes - 1}")
    cm = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


@dataclass
class ClassMetrics:
    rhythm: str
    sens: float
    spec: float
    prec: float
    npv: float
    acc: float
    support: int
    flags: list[str] = field(default_factory=list)

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, m) for m in METRICS)


@dataclass
class MetricsReport:
    classes: list[ClassMetrics]
    confusion: np.ndarray | None = None

    def __getitem__(self, rhythm) -> ClassMetrics:
        if isinstance(rhythm, (int, Rhythm)):
            return self.classes[int(rhythm)]
        for c in self.classes:
            if c.rhythm == rhythm:
                return c
        raise KeyError(rhythm)


def _ratio(num: int, den: int, name: str, flags: list[str], exact: bool):
    if den == 0:
        flags.append(f"{name}_zero_denominator")
        return Fraction(0) if exact else 0.0
    return Fraction(int(num), int(den)) if exact else num / den


def one_vs_rest(cm: np.ndarray, c: int) -> tuple[int, int, int, int]:
    """(TP, FN, FP, TN) for class ``c``."""
    total = int(cm.sum())
    tp = int(cm[c, c])
    fn = int(cm[c].sum()) - tp
    fp = int(cm[:, c].sum()) - tp
    return tp, fn, fp, total - tp - fn - fp


def per_class_metrics(cm, *, exact: bool = False) -> MetricsReport:
    """Sensitivity, specificity, precision, NPV and accuracy per rhythm.

    A zero denominator yields 0 and a flag. ``exact=True`` returns
    ``Fraction`` values instead of floats.
    """
    cm = np.asarray(cm, dtype=np.int64)
    total = int(cm.sum())
    out = []
    for c in range(cm.shape[0]):
        tp, fn, fp, tn = one_vs_rest(cm, c)
        flags: list[str] = []
        out.append(ClassMetrics(
            rhythm=Rhythm(c).display,
            sens=_ratio(tp, tp + fn, "sens", flags, exact),
            spec=_ratio(tn, tn + fp, "spec", flags, exact),
            prec=_ratio(tp, tp + fp, "prec", flags, exact),
            npv=_ratio(tn, tn + fn, "npv", flags, exact),
            acc=_ratio(tp + tn, total, "acc", flags, exact),
            support=tp + fn,
            flags=flags,
        ))
    return MetricsReport(out, cm.copy())


def report_text(rep: MetricsReport, title: str = "") -> str:
    """Fixed-width table, percentages to two decimals."""
    lines = [title] if title else []
    lines.append(f"{'Rhythm':<9}" + "".join(f"{h:>8}" for h in HEADERS))
    for c in rep.classes:
        lines.append(f"{c.rhythm:<9}" + "".join(f"{100 * float(v):>8.2f}" for v in c.values()))
    return "\n".join(lines) + "\n"


def report_csv(rep: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for c in rep.classes:
        w.writerow([c.rhythm, *(repr(float(v)) for v in c.values()), c.support, ";".join(c.flags)])
    return buf.getvalue()


def parse_csv(text: str) -> MetricsReport:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows or tuple(rows[0].keys()) != CSV_COLUMNS:
        raise ValueError("not a metrics CSV")
    return MetricsReport([
        ClassMetrics(r["rhythm"], *(float(r[m]) for m in METRICS), int(r["support"]),
                     [f for f in r["flags"].split(";") if f])
        for r in rows
    ])
