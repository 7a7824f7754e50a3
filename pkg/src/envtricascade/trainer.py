"""Cross-entropy training of the System A / B heads.

AdamW with decoupled weight decay, linear warmup then a constant rate, and
global-norm gradient clipping. Parameters are stored as float32; losses,
gradients and optimizer moments are float64.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import head, metrics, stage1
from .embeddings import load_branch
from .errors import EmptySubset, InvalidConfig, InvalidLabel, NumericalError

log = logging.getLogger(__name__)

SYSTEMS = ("A", "B1", "B2")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 32
    epochs: int = 50
    warmup_steps: int = 5000
    clip_norm: float = 1.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dropout: float = 0.1
    hidden: int = head.HIDDEN
    fused_dim: int = head.FUSED_DIM

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0 or self.eps <= 0:
            raise InvalidConfig("lr, weight_decay must be >= 0 and eps > 0")
        if self.batch_size < 1 or self.epochs < 1 or self.warmup_steps < 0:
            raise InvalidConfig("batch_size, epochs must be >= 1; warmup_steps >= 0")
        if self.clip_norm <= 0:
            raise InvalidConfig("clip_norm must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidConfig("betas must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d or {}) - known
        if unknown:
            raise InvalidConfig(f"unknown train options: {sorted(unknown)}")
        return cls(**(d or {}))


# -- loss and gradients ------------------------------------------------------------

def cross_entropy(logits, label) -> float:
    lg = np.asarray(logits, dtype=np.float64)
    if not (0 <= int(label) < lg.shape[-1]) or isinstance(label, bool):
        raise InvalidLabel(f"label {label!r} outside 0..{lg.shape[-1] - 1}")
    m = lg.max()
    return float(m + np.log(np.exp(lg - m).sum()) - lg[int(label)])


def mean_cross_entropy(logits, labels):
    """Mean loss over the batch and its gradient w.r.t. the logits."""
    lg = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if y.min() < 0 or y.max() >= lg.shape[1]:
        raise InvalidLabel(f"labels must lie in 0..{lg.shape[1] - 1}")
    m = lg.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(lg - m).sum(axis=1))
    n = lg.shape[0]
    loss = float(np.mean(lse - lg[np.arange(n), y]))
    d = head.softmax(lg, axis=1)
    d[np.arange(n), y] -= 1.0
    return loss, d / n


def loss_and_grads(params, cfg, wave, spec, labels, *, train=False, seed=None):
    """Mean cross-entropy of a batch and exact gradients for every parameter."""
    logits, cache = head.forward(params, cfg, wave, spec, train=train, seed=seed,
                                 return_cache=True)
    loss, dlogits = mean_cross_entropy(logits, labels)
    if not np.isfinite(loss):
        raise NumericalError("non-finite loss")
    return loss, head.backward(params, dlogits, cache), cache


def numerical_gradients(params, cfg, wave, spec, labels, h=1e-5):
    """Central finite differences of the eval-mode mean loss, entry by entry.

    Perturbs float64 copies of the parameters; slow, meant for small heads.
    """
    p = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def loss():
        return mean_cross_entropy(head.forward(p, cfg, wave, spec), labels)[0]

    out = {}
    for k, v in p.items():
        flat = v.reshape(-1)
        g = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss()
            flat[i] = orig - h
            down = loss()
            flat[i] = orig
            g[i] = (up - down) / (2.0 * h)
        out[k] = g.reshape(v.shape)
    return out


def relu_margin(params, cfg, wave, spec=None) -> float:
    """Smallest ``|pre-activation|`` over every ReLU of an eval-mode forward.

    Central differences with step ``h`` only probe the gradient when no
    perturbation can push a pre-activation across zero; pick check points
    whose margin is well above ``h`` times the input scale.
    """
    _, cache = head.forward(params, cfg, wave, spec, return_cache=True)
    zs = [cache["cls1"][1]]
    for br in ("spec", "wave"):
        if br in cache:
            zs += [cache[br]["ffn1"][1], cache[br]["ffn2"][1]]
    if "gate" in cache:
        zs.append(cache["gate"][3])
    return float(min(np.abs(z).min() for z in zs))


def gradient_check(params, cfg, wave, spec, labels, h=1e-5, entry_floor=1e-6):
    """Compare analytic and central-difference gradients per parameter tensor.

    Returns ``{name: {"rel_error", "max_entry_rel_error", "checked"}}`` where
    ``rel_error = |a - f| / (|f| + 1e-8)`` over the whole tensor (L2 norms)
    and the per-entry maximum covers entries with ``|f| >= entry_floor``;
    below that, central differences are dominated by float64 rounding of
    the loss (about eps * loss / h).
    """
    p = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, analytic, _ = loss_and_grads(p, cfg, wave, spec, labels)
    numeric = numerical_gradients(p, cfg, wave, spec, labels, h)
    report = {}
    for k in p:
        a, f = analytic[k].ravel(), numeric[k].ravel()
        big = np.abs(f) >= entry_floor
        entry = np.abs(a - f)[big] / (np.abs(f)[big] + 1e-8)
        report[k] = {
            "rel_error": float(np.linalg.norm(a - f) / (np.linalg.norm(f) + 1e-8)),
            "max_entry_rel_error": float(entry.max()) if entry.size else 0.0,
            "checked": int(a.size),
        }
    return report


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64)))
                             for g in grads.values())))


def clip_gradients(grads, max_norm):
    """Scale all gradients by ``max_norm / norm`` when the global norm exceeds it."""
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        grads = {k: np.asarray(g, dtype=np.float64) * scale for k, g in grads.items()}
    return grads, norm


def lr_at(step, config: TrainConfig) -> float:
    """Linear warmup to ``lr`` over ``warmup_steps``, constant afterwards."""
    if config.warmup_steps == 0:
        return config.lr
    return config.lr * min(1.0, step / config.warmup_steps)


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def clip_and_step(params, grads, state: OptimizerState, config: TrainConfig):
    """One clipped AdamW update in place; returns ``(lr, pre-clip grad norm)``."""
    for g in grads.values():
        if not np.isfinite(g).all():
            raise NumericalError("non-finite gradient")
    grads, norm = clip_gradients(grads, config.clip_norm)
    state.step += 1
    t = state.step
    lr = lr_at(t, config)
    b1, b2 = config.beta1, config.beta2
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p64 = np.asarray(p, dtype=np.float64)
        p64 = p64 - lr * config.weight_decay * p64
        p64 = p64 - lr * m_hat / (np.sqrt(v_hat) + config.eps)
        dtype = p.dtype if isinstance(p, np.ndarray) else np.float64
        params[k] = np.asarray(p64, dtype=dtype).reshape(np.shape(p))
    return lr, norm


# -- data ----------------------------------------------------------------------------

@dataclass
class Dataset:
    wave: np.ndarray
    spec: np.ndarray | None
    labels: np.ndarray
    classes: np.ndarray
    ids: list

    def __len__(self):
        return len(self.ids)


def load_dataset(records, system, base=".", spectral_key="spectral_path") -> Dataset:
    """Load stacks for ``system``; System A targets are original(0) / mixed(1)."""
    if not records:
        raise EmptySubset("empty manifest")
    classes = np.array([int(r["class"]) for r in records])
    wave = load_branch(records, "waveform_path", base)
    if system == "A":
        labels = np.array([stage1.binary_target(c) for c in classes])
        spec = None
    else:
        labels = classes.copy()
        spec = load_branch(records, spectral_key, base)
    return Dataset(wave, spec, labels, classes, [r["id"] for r in records])


def head_config_for(system, data: Dataset, config: TrainConfig) -> head.HeadConfig:
    if system == "A":
        return stage1.binary_config(data.wave.shape[-1], config.hidden, config.dropout)
    return head.HeadConfig(kind="dual", spec_dim=data.spec.shape[-1],
                           spec_layers=data.spec.shape[1], wave_dim=data.wave.shape[-1],
                           hidden=config.hidden, fused_dim=config.fused_dim,
                           n_classes=5, dropout=config.dropout)


def predict_logits(params, cfg, data: Dataset, batch_size=256):
    out = []
    for i in range(0, len(data), batch_size):
        sl = slice(i, i + batch_size)
        spec = None if data.spec is None else data.spec[sl]
        out.append(head.forward(params, cfg, data.wave[sl], spec))
    return np.concatenate(out, axis=0)


def validate(system, params, cfg, data: Dataset) -> dict:
    logits = predict_logits(params, cfg, data)
    loss, _ = mean_cross_entropy(logits, data.labels)
    if system == "A":
        score = stage1.mixed_probability(logits)
        out = {"loss": loss, "accuracy": float(np.mean((score >= 0.5) == (data.labels == 1)))}
        if 0 < data.labels.sum() < len(data):
            out["eer"] = metrics.eer(score, data.labels)
            out["eer_threshold"] = metrics.eer_threshold(score, data.labels)
        return out
    preds = np.argmax(logits, axis=1)
    return {"loss": loss, "macro_f1": metrics.macro_f1(preds, data.labels)}


def _better(system, cur, best):
    if best is None:
        return True
    if system == "A":
        if "eer" in cur:
            return (cur["eer"], -cur["accuracy"]) < (best["eer"], -best["accuracy"])
        return cur["accuracy"] > best["accuracy"]
    return cur["macro_f1"] > best["macro_f1"]


# -- training loop -------------------------------------------------------------------

class Telemetry:
    """Per-step mean layer-fusion weights appended to a CSV."""

    def __init__(self, path, layer_ids):
        self.path = Path(path)
        self.layer_ids = list(layer_ids)
        with open(self.path, "w", newline="") as fh:
            csv.writer(fh).writerow(["step"] + [f"layer_{i}" for i in self.layer_ids])

    def append(self, step, alpha):
        w = layer_weight_row(alpha)
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([step] + [repr(float(v)) for v in w])
        return w


def layer_weight_row(alpha) -> np.ndarray:
    """Mean over batch and time of ``alpha`` (B, L, T), renormalized to sum to 1."""
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    w = a.mean(axis=(0, 2))
    return w / w.sum()


@dataclass
class TrainResult:
    params: dict
    cfg: head.HeadConfig
    history: list
    best_epoch: int
    best_metrics: dict
    meta: dict


def train(system, records, config: TrainConfig, *, val_records=None, base=".",
          spectral_key="spectral_path", out_dir=None, layer_ids=None,
          batch_hook=None, config_hash=None) -> TrainResult:
    """Train one sub-system and keep the best-validating parameters.

    System A sees only class-0/1 records. ``batch_hook(step, classes)`` is
    called with the original class labels of every training batch.
    When ``out_dir`` is given, writes ``train_log.jsonl`` (per step),
    ``metrics.jsonl`` (per epoch), ``telemetry.csv`` (B systems) and
    ``best.ckpt``.
    """
    if system not in SYSTEMS:
        raise InvalidConfig(f"unknown system {system!r}; expected one of {SYSTEMS}")
    if system == "A":
        records = stage1.select_training_subset(records)
    data = load_dataset(records, system, base, spectral_key)
    val = load_dataset(val_records, system, base, spectral_key) if val_records else None
    cfg = head_config_for(system, data, config)
    params = head.init_params(cfg, config.seed)
    state = OptimizerState()

    out = Path(out_dir) if out_dir is not None else None
    step_log = epoch_log = telemetry = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        step_log = open(out / "train_log.jsonl", "w", encoding="utf-8")
        epoch_log = open(out / "metrics.jsonl", "w", encoding="utf-8")
        if cfg.kind == "dual":
            ids = layer_ids or list(range(cfg.spec_layers))
            telemetry = Telemetry(out / "telemetry.csv", ids)

    history, best, best_params, best_epoch = [], None, None, -1
    n = len(data)
    try:
        for epoch in range(config.epochs):
            rng = np.random.default_rng([config.seed, 1, epoch])
            order = rng.permutation(n)
            drop_seeds = rng.integers(0, 2**62, size=n)
            losses = []
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                if batch_hook is not None:
                    batch_hook(state.step + 1, data.classes[idx].tolist())
                spec = None if data.spec is None else data.spec[idx]
                loss, grads, cache = loss_and_grads(
                    params, cfg, data.wave[idx], spec, data.labels[idx],
                    train=True, seed=drop_seeds[idx])
                lr, gnorm = clip_and_step(params, grads, state, config)
                losses.append(loss * len(idx))
                if step_log is not None:
                    step_log.write(json.dumps({"step": state.step, "lr": lr, "loss": loss,
                                               "grad_norm": gnorm}) + "\n")
                if telemetry is not None:
                    telemetry.append(state.step, cache["fuse"][1])
            train_loss = float(np.sum(losses) / n)
            row = {"epoch": epoch + 1, "train_loss": train_loss}
            if val is not None:
                cur = validate(system, params, cfg, val)
                row.update({f"val_{k}": v for k, v in cur.items()})
            else:
                cur = {"macro_f1": -train_loss, "accuracy": -train_loss}
            history.append(row)
            if epoch_log is not None:
                epoch_log.write(json.dumps(row) + "\n")
            log.info("system %s epoch %d: %s", system, epoch + 1, row)
            if _better(system, cur, best):
                best, best_epoch = cur, epoch + 1
                best_params = {k: v.copy() for k, v in params.items()}
    finally:
        for fh in (step_log, epoch_log):
            if fh is not None:
                fh.close()

    meta = {"system": system, "best_epoch": best_epoch, "train_config": asdict(config)}
    if config_hash:
        meta["config_hash"] = config_hash
    if layer_ids is not None:
        meta["layer_ids"] = list(layer_ids)
    if val is not None:
        meta["val"] = best
    if out is not None:
        head.save_checkpoint(out / "best.ckpt", best_params, cfg, meta)
    return TrainResult(best_params, cfg, history, best_epoch, best or {}, meta)
