"""Stage 2 ensembling and Stage 3 hard calibration."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import head, stage1
from .embeddings import load_branch
from .errors import InvalidInput, MissingModel

MODES = ("cascade", "b1", "b2", "b1b2", "a+b1", "a+b2")


@dataclass(frozen=True)
class CascadeDecision:
    final_class: int
    forced_original: bool
    overridden_second_best: bool
    stage1: stage1.BinaryDecision | None
    ensemble_logits: tuple


def ensemble_mean(*logit_sets):
    """Componentwise mean of raw logits."""
    arrs = [np.asarray(x, dtype=np.float64) for x in logit_sets]
    if not arrs or any(a.shape != arrs[0].shape for a in arrs):
        raise InvalidInput("ensemble needs logit vectors of one shape")
    if not all(np.isfinite(a).all() for a in arrs):
        raise InvalidInput("non-finite logits")
    return sum(arrs) / len(arrs)


def _argmax_lowest(v):
    # np.argmax already returns the first (lowest-index) maximum
    return int(np.argmax(v))


def calibrate(decision: stage1.BinaryDecision, ensemble) -> CascadeDecision:
    """Bound the five-class ensemble by the Stage 1 prior.

    original -> class 0; mixed with argmax 0 -> best of classes 1..4;
    otherwise the argmax. Ties go to the lowest class index.
    """
    e = np.asarray(ensemble, dtype=np.float64)
    if e.shape != (5,) or not np.isfinite(e).all():
        raise InvalidInput("calibrate needs five finite logits")
    logits = tuple(float(v) for v in e)
    if not decision.is_mixed:
        return CascadeDecision(0, True, False, decision, logits)
    top = _argmax_lowest(e)
    if top != 0:
        return CascadeDecision(top, False, False, decision, logits)
    return CascadeDecision(1 + _argmax_lowest(e[1:]), False, True, decision, logits)


def uncalibrated(ensemble) -> CascadeDecision:
    e = np.asarray(ensemble, dtype=np.float64)
    return CascadeDecision(_argmax_lowest(e), False, False, None, tuple(float(v) for v in e))


def decisions_from_logits(mode, stage1_logits, b1_logits, b2_logits, threshold=0.5):
    """Apply ``mode`` to batched logits; returns one decision per sample."""
    if mode not in MODES:
        raise InvalidInput(f"unknown mode {mode!r}; expected one of {MODES}")
    sets = {"b1": [b1_logits], "b2": [b2_logits], "b1b2": [b1_logits, b2_logits],
            "a+b1": [b1_logits], "a+b2": [b2_logits], "cascade": [b1_logits, b2_logits]}[mode]
    ens = ensemble_mean(*sets)
    use_a = mode in ("cascade", "a+b1", "a+b2")
    out = []
    for i in range(ens.shape[0]):
        if use_a:
            out.append(calibrate(stage1.decide(stage1_logits[i], threshold), ens[i]))
        else:
            out.append(uncalibrated(ens[i]))
    return out


def _run_head(ckpt, records, base, spectral_key):
    params, cfg, meta = ckpt
    wave = load_branch(records, "waveform_path", base)
    spec = load_branch(records, spectral_key, base) if cfg.kind == "dual" else None
    return head.forward(params, cfg, wave, spec), meta


def infer_batch(records_b1, records_b2, checkpoints, threshold=0.5, mode="cascade",
                base=".", spectral_key="spectral_path"):
    """Run the chosen pipeline over aligned B1/B2 manifests.

    ``checkpoints`` maps ``"A"``, ``"B1"``, ``"B2"`` to loaded
    ``(params, cfg, meta)`` triples; only those the mode needs are required.
    Returns ``(decisions, records_out)``.
    """
    if mode not in MODES:
        raise InvalidInput(f"unknown mode {mode!r}; expected one of {MODES}")
    need = {"cascade": "A B1 B2", "b1": "B1", "b2": "B2", "b1b2": "B1 B2",
            "a+b1": "A B1", "a+b2": "A B2"}[mode].split()
    for k in need:
        if checkpoints.get(k) is None:
            raise MissingModel(f"mode {mode} needs a System {k} checkpoint")
    if "B2" in need and [r["id"] for r in records_b1] != [r["id"] for r in records_b2]:
        raise InvalidInput("B1 and B2 manifests must list the same ids in order")
    b1 = b2 = a = None
    if "B1" in need:
        b1, _ = _run_head(checkpoints["B1"], records_b1, base, spectral_key)
    if "B2" in need:
        b2, _ = _run_head(checkpoints["B2"], records_b2, base, spectral_key)
    if "A" in need:
        a, _ = _run_head(checkpoints["A"], records_b1, base, spectral_key)
    decisions = decisions_from_logits(mode, a, b1, b2, threshold)
    soft = mode in ("b1", "b2", "b1b2")
    out = []
    for rec, d in zip(records_b1, decisions):
        row = {
            "id": rec["id"],
            "final_class": d.final_class,
            "stage1_score": None if d.stage1 is None else d.stage1.score,
            "ensemble_logits": list(d.ensemble_logits),
            "flags": {"forced_original": d.forced_original,
                      "overridden_second_best": d.overridden_second_best},
        }
        if soft:
            row["probs"] = head.softmax(np.array(d.ensemble_logits)).tolist()
        out.append(row)
    return decisions, out


def write_predictions(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
