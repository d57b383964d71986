"""Confusion matrices, macro-averaged metrics and comparison tables."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .fusion import LABEL_NAMES, N_CLASSES

ZERO_DIVISION_NOTE = "Undefined ratios (0/0) count as 0; macro averages include zero-support classes."


def confusion(preds: Sequence[int], truths: Sequence[int], n_classes: int = N_CLASSES) -> np.ndarray:
    """Counts with rows = true label, columns = predicted label."""
    preds = np.asarray(preds, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if preds.shape != truths.shape:
        raise ValueError(f"length mismatch: {preds.size} predictions vs {truths.size} labels")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (truths, preds), 1)
    return cm


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den != 0)
    return out


@dataclass
class EvalReport:
    model_id: str
    strategy: str  # group key: text, image, early, late, intermediate
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    confusion: np.ndarray = field(repr=False)
    label: str = ""

    @property
    def per_class(self) -> list[tuple[float, float, float, int]]:
        return [
            (float(p), float(r), float(f), int(s))
            for p, r, f, s in zip(self.precision, self.recall, self.f1, self.support)
        ]


def metrics(cm: np.ndarray, model_id: str = "", strategy: str = "", label: str = "") -> EvalReport:
    cm = np.asarray(cm, dtype=np.int64)
    total = cm.sum()
    if total < 1:
        raise ValueError("confusion matrix is empty")
    tp = np.diag(cm).astype(np.float64)
    precision = _ratio(tp, cm.sum(axis=0).astype(np.float64))
    recall = _ratio(tp, cm.sum(axis=1).astype(np.float64))
    f1 = _ratio(2 * precision * recall, precision + recall)
    return EvalReport(
        model_id=model_id,
        strategy=strategy,
        label=label,
        accuracy=float(tp.sum() / total),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        precision=precision,
        recall=recall,
        f1=f1,
        support=cm.sum(axis=1),
        confusion=cm,
    )


def evaluate(preds, truths, **kw) -> EvalReport:
    return metrics(confusion(preds, truths), **kw)


# ---------------------------------------------------------------------------
# rendering

GROUP_TITLES = {
    "text": "Text-based Models",
    "image": "Image-based Models",
    "early": "Early Fusion",
    "late": "Late Fusion",
    "intermediate": "Intermediate Fusion",
}
LAYOUT_GROUPS = {
    "unimodal": ("text", "image"),
    "fusion": ("early", "late", "intermediate"),
    "ablation": ("text", "image", "early", "late", "intermediate"),
}
ABLATION_ROWS = {
    "text": "Text-only",
    "image": "Image-only",
    "early": "Early fusion",
    "late": "Late fusion",
    "intermediate": "Intermediate fusion",
}


def pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


def _table(header: list[str], rows: list[list[str]]) -> list[str]:
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]

    def fmt(r):
        return "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip()

    rule = "-" * len(fmt(header))
    return [rule, fmt(header), rule, *(fmt(r) for r in rows), rule]


def _ordered(reports: Sequence[EvalReport], group: str) -> list[EvalReport]:
    return sorted((r for r in reports if r.strategy == group), key=lambda r: (-r.macro_f1, r.model_id))


def render_comparison(reports: Sequence[EvalReport], layout: str = "fusion") -> str:
    """Plain-text table in one of the unimodal, fusion or ablation layouts.

    Rows are grouped, sorted by descending macro-F1 then model id; ``*`` flags
    the best row of each group.
    """
    if layout not in LAYOUT_GROUPS:
        raise ValueError(f"layout must be one of {tuple(LAYOUT_GROUPS)}")
    if not reports:
        raise ValueError("nothing to render")
    groups = LAYOUT_GROUPS[layout]
    lines: list[str] = []
    if layout == "ablation":
        rows = []
        for g in groups:
            ranked = _ordered(reports, g)
            if ranked:
                best = ranked[0]
                rows.append([ABLATION_ROWS[g], best.model_id, pct(best.accuracy), pct(best.macro_f1)])
        lines += _table(["Modality", "Best Model", "Acc(%)", "F1(%)"], rows)
    else:
        rows = []
        first_col = "Model" if layout == "unimodal" else "Model Combination"
        for g in groups:
            ranked = _ordered(reports, g)
            if not ranked:
                continue
            rows.append([f"[{GROUP_TITLES[g]}]", "", "", "", ""])
            for i, r in enumerate(ranked):
                name = ("* " if i == 0 else "  ") + r.model_id
                rows.append([name, pct(r.accuracy), pct(r.macro_precision), pct(r.macro_recall), pct(r.macro_f1)])
        lines += _table([first_col, "Acc(%)", "Prec(%)", "Rec(%)", "F1(%)"], rows)
    lines.append(ZERO_DIVISION_NOTE)
    return "\n".join(lines) + "\n"


def render_per_class(report: EvalReport) -> str:
    rows = [
        [LABEL_NAMES[i], pct(p), pct(r), pct(f), str(s)] for i, (p, r, f, s) in enumerate(report.per_class)
    ]
    return "\n".join(_table(["Intent", "Prec(%)", "Rec(%)", "F1(%)", "Support"], rows)) + "\n"


def report_keyvalue(report: EvalReport) -> str:
    lines = [
        f"model_id={report.model_id}",
        f"strategy={report.strategy}",
        f"label={report.label}",
        f"accuracy={report.accuracy!r}",
        f"macro_precision={report.macro_precision!r}",
        f"macro_recall={report.macro_recall!r}",
        f"macro_f1={report.macro_f1!r}",
    ]
    for i, name in enumerate(LABEL_NAMES):
        key = name.lower()
        lines += [
            f"{key}.precision={float(report.precision[i])!r}",
            f"{key}.recall={float(report.recall[i])!r}",
            f"{key}.f1={float(report.f1[i])!r}",
            f"{key}.support={int(report.support[i])}",
        ]
    return "\n".join(lines) + "\n"


def confusion_tsv(cm: np.ndarray) -> str:
    lines = ["\t".join(LABEL_NAMES)]
    lines += ["\t".join(str(int(v)) for v in row) for row in np.asarray(cm)]
    return "\n".join(lines) + "\n"


def read_confusion_tsv(text: str) -> np.ndarray:
    rows = text.strip("\n").split("\n")
    if tuple(rows[0].split("\t")) != LABEL_NAMES:
        raise ValueError("confusion header does not list the six intents in order")
    return np.array([[int(v) for v in r.split("\t")] for r in rows[1:]], dtype=np.int64)


def write_report(out_dir: str | Path, report: EvalReport, stem: str = "report") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.txt").write_text(
        render_comparison([report], "unimodal" if report.strategy in ("text", "image") else "fusion")
        + "\n"
        + render_per_class(report),
        encoding="utf-8",
    )
    (out / f"{stem}.kv").write_text(report_keyvalue(report), encoding="utf-8")
    (out / f"{stem}_confusion.tsv").write_text(confusion_tsv(report.confusion), encoding="utf-8")
