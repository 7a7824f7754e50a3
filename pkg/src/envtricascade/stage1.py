"""System A: the original-vs-mixed screening detector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import head
from .errors import EmptySubset, InvalidInput, InvalidLabel

ORIGINAL, MIXED = "original", "mixed"


@dataclass(frozen=True)
class BinaryDecision:
    score: float
    decision: str
    threshold: float

    @property
    def is_mixed(self):
        return self.decision == MIXED


def binary_config(wave_dim, hidden=head.HIDDEN, dropout=0.1) -> head.HeadConfig:
    return head.HeadConfig(kind="single", spec_dim=0, spec_layers=0, wave_dim=wave_dim,
                           hidden=hidden, n_classes=2, dropout=dropout)


def binary_forward(wave, params, cfg, *, train=False, seed=None, branch_tag="waveform"):
    """2-way logits ``(original, mixed)`` from layer-5 waveform stacks ``(B, 1, T, D)``."""
    if branch_tag != "waveform":
        raise InvalidInput(f"System A reads waveform stacks, got {branch_tag!r}")
    if cfg.kind != "single" or cfg.n_classes != 2:
        raise InvalidInput("binary_forward needs a single-branch 2-class head")
    return head.forward(params, cfg, wave, train=train, seed=seed)


def mixed_probability(logits):
    """Softmax probability of the ``mixed`` logit, computed as a sigmoid of the margin."""
    lg = np.asarray(logits, dtype=np.float64)
    return head.sigmoid(lg[..., 1] - lg[..., 0])


def decide(logits, threshold=0.5) -> BinaryDecision:
    lg = np.asarray(logits, dtype=np.float64)
    if lg.shape != (2,) or not np.isfinite(lg).all():
        raise InvalidInput("decide needs two finite logits")
    if not 0.0 < threshold < 1.0:
        raise InvalidInput("threshold must lie in (0, 1)")
    score = float(mixed_probability(lg))
    return BinaryDecision(score, MIXED if score >= threshold else ORIGINAL, float(threshold))


def map_validation_labels(label) -> str:
    if label not in (0, 1, 2, 3, 4) or isinstance(label, bool):
        raise InvalidLabel(f"class {label!r} outside 0..4")
    return ORIGINAL if label == 0 else MIXED


def binary_target(label) -> int:
    return 1 if map_validation_labels(label) == MIXED else 0


def select_training_subset(records):
    """Keep class-0 and class-1 records only, tagged with their binary label."""
    out = [dict(rec, binary=map_validation_labels(rec["class"]))
           for rec in records if rec["class"] in (0, 1)]
    if not out:
        raise EmptySubset("no class-0/1 records to train System A on")
    return out
