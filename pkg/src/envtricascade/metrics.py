"""Challenge scoring: five-class Macro-F1 and the three attribute EERs."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .embeddings import CLASS_ATTRIBUTES
from .errors import DegenerateLabels, InvalidInput, InvalidLabel

N_CLASSES = 5
ATTRIBUTE_NAMES = ("original", "speech", "env")


def label_to_attributes(label: int):
    """Class index -> ``(is_mixed, speech_spoofed, env_spoofed)``."""
    try:
        return CLASS_ATTRIBUTES[int(label)]
    except (KeyError, TypeError, ValueError):
        raise InvalidLabel(f"class {label!r} outside 0..4") from None


def _as_labels(x, name):
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise InvalidInput(f"{name} must be 1-D")
    if arr.size and (not np.issubdtype(arr.dtype, np.integer)
                     or arr.min() < 0 or arr.max() >= N_CLASSES):
        raise InvalidLabel(f"{name} must hold integers in 0..4")
    return arr.astype(np.int64)


def confusion_matrix(preds, labels) -> np.ndarray:
    """5x5 counts; rows are true classes, columns predictions."""
    p = _as_labels(preds, "preds")
    y = _as_labels(labels, "labels")
    if p.shape != y.shape:
        raise InvalidInput(f"length mismatch: {p.size} preds vs {y.size} labels")
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(cm, (y, p), 1)
    return cm


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    tp = np.diag(cm).astype(np.float64)
    denom = cm.sum(axis=0) + cm.sum(axis=1)  # 2TP + FP + FN
    out = np.zeros(N_CLASSES)
    nz = denom > 0
    out[nz] = 2.0 * tp[nz] / denom[nz]
    return out


def macro_f1(preds, labels) -> float:
    """Unweighted mean F1 over the fixed classes 0..4.

    A class that is never predicted and never present scores 0, so missing
    classes pull the mean down.
    """
    return float(per_class_f1(confusion_matrix(preds, labels)).mean())


def eer(scores, binary_labels) -> float:
    """Equal error rate with ``score >= threshold`` read as positive.

    Operating points are taken at every distinct score (plus one above the
    maximum); the EER is where FRR - FAR changes sign, linearly
    interpolated between the two adjacent points.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(binary_labels).astype(bool).ravel()
    if s.shape != y.shape:
        raise InvalidInput("scores and labels differ in length")
    if not np.isfinite(s).all():
        raise InvalidInput("non-finite scores")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("EER needs at least one positive and one negative")
    order = np.argsort(s, kind="mergesort")
    s, y = s[order], y[order]
    # group ties: thresholds are the distinct scores in ascending order
    last = np.r_[s[1:] != s[:-1], True]
    pos_below = np.cumsum(y)[last]
    neg_below = np.cumsum(~y)[last]
    frr = np.r_[0.0, pos_below / n_pos]          # positives rejected (score < thr)
    far = np.r_[1.0, 1.0 - neg_below / n_neg]    # negatives accepted (score >= thr)
    d = frr - far
    k = int(np.argmax(d >= 0))
    if d[k] == 0 or k == 0:
        return float(far[k])
    t = -d[k - 1] / (d[k] - d[k - 1])
    return float(far[k - 1] + t * (far[k] - far[k - 1]))


def eer_threshold(scores, binary_labels) -> float:
    """Score threshold at the EER crossing (lowest distinct score at/after it)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(binary_labels).astype(bool).ravel()
    target = eer(s, y)
    best, best_gap = None, np.inf
    for thr in np.unique(s):
        far = np.mean(s[~y] >= thr)
        frr = np.mean(s[y] < thr)
        gap = abs(far - target) + abs(frr - target)
        if gap < best_gap:
            best, best_gap = float(thr), gap
    return best


def attribute_scores(probs5):
    """``(1 - p0, p2 + p4, p3 + p4)`` from a normalized 5-class vector (or a batch)."""
    p = np.asarray(probs5, dtype=np.float64)
    if p.shape[-1] != N_CLASSES:
        raise InvalidInput("need 5-class probabilities")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-4) or np.any(p < 0):
        raise InvalidInput("probabilities must be non-negative and sum to 1")
    return (1.0 - p[..., 0], p[..., 2] + p[..., 4], p[..., 3] + p[..., 4])


@dataclass
class EvalReport:
    macro_f1: float
    per_class_f1: list
    confusion: list
    eer_original: float | None = None
    eer_speech: float | None = None
    eer_env: float | None = None
    n: int = 0
    system: str = ""
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def evaluate(preds, labels, probs=None, system="") -> EvalReport:
    cm = confusion_matrix(preds, labels)
    f1 = per_class_f1(cm)
    rep = EvalReport(float(f1.mean()), [float(v) for v in f1], cm.tolist(),
                     n=int(cm.sum()), system=system)
    if probs is not None:
        attrs = np.array([label_to_attributes(c) for c in labels])
        scores = attribute_scores(probs)
        for name, s, col in zip(ATTRIBUTE_NAMES, scores, attrs.T):
            try:
                setattr(rep, f"eer_{name}", eer(s, col))
            except DegenerateLabels:
                pass
    return rep


def read_predictions(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out


def report(prediction_file, manifest_records, system="") -> EvalReport:
    """Score a prediction file against manifest labels.

    Attribute EERs are computed only when every record carries a ``probs``
    vector; hard cascade decisions have none.
    """
    preds = read_predictions(prediction_file)
    labels = {rec["id"]: int(rec["class"]) for rec in manifest_records}
    pred_ids = [r["id"] for r in preds]
    if len(set(pred_ids)) != len(pred_ids) or set(pred_ids) != set(labels):
        raise InvalidInput("prediction ids do not match manifest ids")
    y = [labels[i] for i in pred_ids]
    p = [int(r["final_class"]) for r in preds]
    probs = None
    if preds and all(r.get("probs") is not None for r in preds):
        probs = np.array([r["probs"] for r in preds], dtype=np.float64)
    return evaluate(p, y, probs, system=system)


def render_table(reports) -> str:
    """Aligned ``System | Macro-F1`` table, plus EER columns when any are present."""
    show_eer = any(r.eer_original is not None for r in reports)
    head = ["System", "Macro-F1"] + (["EER-orig", "EER-speech", "EER-env"] if show_eer else [])
    rows = []
    for r in reports:
        row = [r.system or "-", f"{r.macro_f1:.4f}"]
        if show_eer:
            row += ["-" if v is None else f"{v:.4f}"
                    for v in (r.eer_original, r.eer_speech, r.eer_env)]
        rows.append(row)
    widths = [max(len(x) for x in col) for col in zip(head, *rows)]
    fmt = lambda cells: " | ".join(c.ljust(w) for c, w in zip(cells, widths))  # noqa: E731
    lines = [fmt(head), "-+-".join("-" * w for w in widths)] + [fmt(r) for r in rows]
    return "\n".join(lines) + "\n"
