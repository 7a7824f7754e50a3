"""Dual-branch fusion head (System B) and the single-branch binary head (System A).

Shapes follow the layer-stack contract: spectral input ``(B, L_s, T_s, D_s)``,
waveform input ``(B, 1, T_x, D_x)``. All arithmetic runs in float64; stored
parameters may be float32.

Parameters live in a flat ``dict`` keyed by dotted names so the optimizer,
the gradient checker and the checkpoint writer can iterate them uniformly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import CorruptFile, InvalidInput, ShapeError

HIDDEN = 128
FUSED_DIM = 768


@dataclass(frozen=True)
class HeadConfig:
    """Structure of a head.

    ``kind`` is ``"dual"`` (System B: spectral + waveform, gated) or
    ``"single"`` (System A: waveform only, 2-way).
    """

    kind: str = "dual"
    spec_dim: int = 768
    spec_layers: int = 3
    wave_dim: int = 1024
    hidden: int = HIDDEN
    fused_dim: int = FUSED_DIM
    n_classes: int = 5
    dropout: float = 0.1

    def __post_init__(self):
        if self.kind not in ("dual", "single"):
            raise InvalidInput(f"unknown head kind {self.kind!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidInput("dropout must be in [0, 1)")

    def shapes(self) -> dict:
        h, f = self.hidden, self.fused_dim
        out = {}
        if self.kind == "dual":
            out["spec.fuse.w"] = (self.spec_dim,)
            out["spec.fuse.b"] = ()
            out.update(_branch_shapes("spec", self.spec_dim, h))
            out["spec.align.w"] = (2 * h, f)
            out["spec.align.b"] = (f,)
        out.update(_branch_shapes("wave", self.wave_dim, h))
        if self.kind == "dual":
            out["wave.align.w"] = (2 * h, f)
            out["wave.align.b"] = (f,)
            out["gate.fc1.w"] = (2 * f, f)
            out["gate.fc1.b"] = (f,)
            out["gate.fc2.w"] = (f, f)
            out["gate.fc2.b"] = (f,)
            cls_in = f
        else:
            cls_in = 2 * h
        out["cls.fc1.w"] = (cls_in, h)
        out["cls.fc1.b"] = (h,)
        out["cls.fc2.w"] = (h, self.n_classes)
        out["cls.fc2.b"] = (self.n_classes,)
        return out


def _branch_shapes(p, d_in, h):
    return {
        f"{p}.ffn1.w": (d_in, h),
        f"{p}.ffn1.b": (h,),
        f"{p}.ffn2.w": (h, h),
        f"{p}.ffn2.b": (h,),
        f"{p}.att.w": (h,),
        f"{p}.att.b": (),
    }


def init_params(cfg: HeadConfig, seed: int, dtype=np.float32) -> dict:
    """Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    rng = np.random.default_rng(seed)
    params = {}
    shapes = cfg.shapes()
    for name, shape in shapes.items():
        if name.endswith(".w"):
            fan_in = shape[0]
        else:
            w_shape = shapes[name[:-2] + ".w"]
            fan_in = w_shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


def zero_params(cfg: HeadConfig, dtype=np.float32) -> dict:
    return {k: np.zeros(s, dtype=dtype) for k, s in cfg.shapes().items()}


def check_params(cfg: HeadConfig, params: dict) -> None:
    shapes = cfg.shapes()
    if set(shapes) != set(params):
        missing = sorted(set(shapes) - set(params))
        extra = sorted(set(params) - set(shapes))
        raise ShapeError(f"parameter set mismatch; missing={missing} extra={extra}")
    for k, s in shapes.items():
        if tuple(np.shape(params[k])) != s:
            raise ShapeError(f"{k}: expected {s}, got {np.shape(params[k])}")


# -- building blocks -----------------------------------------------------------

def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def layer_time_fuse(X, w_score, b=0.0):
    """Per-frame softmax over layers of ``w_score . X[l, t]`` and the weighted sum.

    Accepts one stack ``(L, T, D)`` or a batch ``(B, L, T, D)``; returns
    ``(H, alpha)`` with matching leading dims. ``b`` shifts every layer
    score equally, so it cancels in the softmax and is not applied.
    """
    X = np.asarray(X, dtype=np.float64)
    w_score = np.asarray(w_score, dtype=np.float64)
    single = X.ndim == 3
    if single:
        X = X[None]
    if X.ndim != 4:
        raise ShapeError(f"expected (B, L, T, D) stack, got {X.shape}")
    if w_score.shape != (X.shape[-1],):
        raise ShapeError(f"W_score has shape {w_score.shape}, stack dim is {X.shape[-1]}")
    alpha, H = kernels.layer_fuse(X, w_score)
    if single:
        return H[0], alpha[0]
    return H, alpha


def _dropout_masks(shape, rate, seeds, tag):
    """Inverted-dropout masks, one independent stream per sample seed."""
    keep = 1.0 - rate
    masks = np.empty(shape, dtype=np.float64)
    for i, s in enumerate(seeds):
        rng = np.random.default_rng([int(s), tag])
        masks[i] = (rng.random(shape[1:]) < keep) / keep
    return masks


def ffn_block(x, w, b, *, dropout=0.0, train=False, seeds=None, tag=0):
    """Affine + ReLU (+ dropout in training). Returns ``(out, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"input dim {x.shape[-1]} does not match weight {w.shape}")
    z = x @ w + np.asarray(b, dtype=np.float64)
    a = np.maximum(z, 0.0)
    mask = None
    if train and dropout > 0.0:
        mask = _dropout_masks(a.shape, dropout, seeds, tag)
        a = a * mask
    return a, (x, z, mask)


def _ffn_backward(dout, w, cache):
    x, z, mask = cache
    if mask is not None:
        dout = dout * mask
    dz = dout * (z > 0)
    flat_x = x.reshape(-1, x.shape[-1])
    flat_dz = dz.reshape(-1, dz.shape[-1])
    dw = flat_x.T @ flat_dz
    db = flat_dz.sum(axis=0)
    dx = dz @ np.asarray(w, dtype=np.float64).T
    return dx, dw, db


def asp_pool(seq, w_att, b_att):
    """Attentive statistics pooling.

    ``seq`` is ``(T, H)`` or ``(B, T, H)``. Returns ``(v, a)`` where
    ``v = mean || sqrt(max(var, 0) + 1e-9)`` has size ``2H`` and ``a`` are
    the softmax-over-time attention weights.
    """
    seq = np.asarray(seq, dtype=np.float64)
    single = seq.ndim == 2
    if single:
        seq = seq[None]
    if seq.ndim != 3 or seq.shape[1] < 1:
        raise ShapeError(f"expected (B, T, H) with T >= 1, got {seq.shape}")
    if np.shape(w_att) != (seq.shape[-1],):
        raise ShapeError(f"attention vector {np.shape(w_att)} vs hidden {seq.shape[-1]}")
    a, mu, sd, _ = kernels.attentive_stats(seq, w_att, float(b_att))
    v = np.concatenate([mu, sd], axis=-1)
    if single:
        return v[0], a[0]
    return v, a


def _asp_backward(dv, seq, w_att, a, mu, sd, var):
    Hd = seq.shape[-1]
    dmu, dsd = dv[:, :Hd], dv[:, Hd:]
    dvar = np.where(var > 0.0, dsd * 0.5 / sd, 0.0)
    dmu_tot = dmu - 2.0 * mu * dvar
    # mu = sum_t a_t x_t ; m2 = sum_t a_t x_t^2
    dseq = a[:, :, None] * (dmu_tot[:, None, :] + 2.0 * seq * dvar[:, None, :])
    da = np.einsum("bth,bh->bt", seq, dmu_tot) + np.einsum("bth,bh->bt", seq * seq, dvar)
    de = a * (da - (a * da).sum(axis=1, keepdims=True))
    dseq += de[:, :, None] * np.asarray(w_att, dtype=np.float64)[None, None, :]
    dw = np.einsum("bth,bt->h", seq, de)
    db = de.sum()
    return dseq, dw, db


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def gate_fuse(h_spec, h_xlsr, g1w, g1b, g2w, g2b):
    """``g = sigmoid(G2(relu(G1(h_spec || h_xlsr))))``; returns ``(g*h_spec + (1-g)*h_xlsr, g)``."""
    h_spec = np.asarray(h_spec, dtype=np.float64)
    h_xlsr = np.asarray(h_xlsr, dtype=np.float64)
    if h_spec.shape != h_xlsr.shape:
        raise ShapeError(f"branch embeddings differ: {h_spec.shape} vs {h_xlsr.shape}")
    if np.shape(g1w) != (2 * h_spec.shape[-1], h_spec.shape[-1]):
        raise ShapeError(f"gate weight {np.shape(g1w)} does not fit dim {h_spec.shape[-1]}")
    c = np.concatenate([h_spec, h_xlsr], axis=-1)
    z = c @ np.asarray(g1w, dtype=np.float64) + np.asarray(g1b, dtype=np.float64)
    r = np.maximum(z, 0.0)
    g = sigmoid(r @ np.asarray(g2w, dtype=np.float64) + np.asarray(g2b, dtype=np.float64))
    return g * h_spec + (1.0 - g) * h_xlsr, g


# -- full forward / backward ---------------------------------------------------

def _branch_forward(p, prefix, x, cfg, train, seeds, tag0, trace):
    P = lambda k: np.asarray(p[f"{prefix}.{k}"], dtype=np.float64)  # noqa: E731
    c = {}
    a1, c["ffn1"] = ffn_block(x, P("ffn1.w"), P("ffn1.b"), dropout=cfg.dropout,
                              train=train, seeds=seeds, tag=tag0)
    trace[f"{prefix}.ffn1"] = a1.shape[1:]
    a2, c["ffn2"] = ffn_block(a1, P("ffn2.w"), P("ffn2.b"), dropout=cfg.dropout,
                              train=train, seeds=seeds, tag=tag0 + 1)
    trace[f"{prefix}.ffn2"] = a2.shape[1:]
    att, mu, sd, var = kernels.attentive_stats(a2, P("att.w"), float(P("att.b")))
    trace[f"{prefix}.attention"] = att.shape[1:]
    v = np.concatenate([mu, sd], axis=-1)
    trace[f"{prefix}.asp"] = v.shape[1:]
    c["asp"] = (a2, att, mu, sd, var)
    c["v"] = v
    return v, c


def _branch_backward(p, prefix, dv, c, grads):
    P = lambda k: np.asarray(p[f"{prefix}.{k}"], dtype=np.float64)  # noqa: E731
    a2, att, mu, sd, var = c["asp"]
    da2, grads[f"{prefix}.att.w"], grads[f"{prefix}.att.b"] = _asp_backward(
        dv, a2, P("att.w"), att, mu, sd, var)
    da1, grads[f"{prefix}.ffn2.w"], grads[f"{prefix}.ffn2.b"] = _ffn_backward(
        da2, P("ffn2.w"), c["ffn2"])
    dx, grads[f"{prefix}.ffn1.w"], grads[f"{prefix}.ffn1.b"] = _ffn_backward(
        da1, P("ffn1.w"), c["ffn1"])
    return dx


def _as_seeds(seed, n):
    if seed is None:
        return [0] * n
    if np.ndim(seed) == 0:
        return [int(seed) * 1_000_003 + i for i in range(n)]
    seeds = [int(s) for s in seed]
    if len(seeds) != n:
        raise InvalidInput("need one dropout seed per sample")
    return seeds


def forward(params, cfg: HeadConfig, wave, spec=None, *, train=False, seed=None,
            return_cache=False):
    """Logits ``(B, n_classes)`` for a batch.

    ``wave`` is ``(B, 1, T_x, D_x)``; ``spec`` is ``(B, L_s, T_s, D_s)`` for
    dual heads. In training mode dropout masks come from per-sample seeds
    (``seed`` may be a scalar base seed or one seed per sample).
    """
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim != 4 or wave.shape[1] != 1:
        raise ShapeError(f"waveform batch must be (B, 1, T, D), got {wave.shape}")
    if wave.shape[-1] != cfg.wave_dim:
        raise ShapeError(f"waveform dim {wave.shape[-1]} != configured {cfg.wave_dim}")
    B = wave.shape[0]
    seeds = _as_seeds(seed, B)
    p = params
    P = lambda k: np.asarray(p[k], dtype=np.float64)  # noqa: E731
    trace = {}
    cache = {"cfg": cfg, "train": train}

    if cfg.kind == "dual":
        if spec is None:
            raise ShapeError("dual head needs a spectral batch")
        spec = np.asarray(spec, dtype=np.float64)
        if spec.ndim != 4 or spec.shape[0] != B:
            raise ShapeError(f"spectral batch must be (B, L, T, D), got {spec.shape}")
        if spec.shape[1] != cfg.spec_layers or spec.shape[-1] != cfg.spec_dim:
            raise ShapeError(
                f"spectral stack {spec.shape[1:]} does not fit L={cfg.spec_layers}, "
                f"D={cfg.spec_dim}")
        trace["spec.input"] = spec.shape[1:]
        H, alpha = layer_time_fuse(spec, P("spec.fuse.w"))
        trace["spec.fusion"] = H.shape[1:]
        cache["fuse"] = (spec, alpha, H)
        v_s, cache["spec"] = _branch_forward(p, "spec", H, cfg, train, seeds, 10, trace)
        h_s = v_s @ P("spec.align.w") + P("spec.align.b")
        trace["spec.align"] = h_s.shape[1:]

    x = wave[:, 0]
    trace["wave.input"] = x.shape[1:]
    v_x, cache["wave"] = _branch_forward(p, "wave", x, cfg, train, seeds, 20, trace)

    if cfg.kind == "dual":
        h_x = v_x @ P("wave.align.w") + P("wave.align.b")
        trace["wave.align"] = h_x.shape[1:]
        c = np.concatenate([h_s, h_x], axis=-1)
        gz = c @ P("gate.fc1.w") + P("gate.fc1.b")
        gr = np.maximum(gz, 0.0)
        g = sigmoid(gr @ P("gate.fc2.w") + P("gate.fc2.b"))
        fused = g * h_s + (1.0 - g) * h_x
        trace["gate"] = g.shape[1:]
        trace["fusion"] = fused.shape[1:]
        cache["gate"] = (h_s, h_x, c, gz, gr, g)
        cls_in = fused
    else:
        cls_in = v_x

    y1, cache["cls1"] = ffn_block(cls_in, P("cls.fc1.w"), P("cls.fc1.b"),
                                  dropout=cfg.dropout, train=train, seeds=seeds, tag=30)
    trace["cls.fc1"] = y1.shape[1:]
    logits = y1 @ P("cls.fc2.w") + P("cls.fc2.b")
    trace["logits"] = logits.shape[1:]
    cache["cls2_in"] = y1
    cache["trace"] = trace
    if return_cache:
        return logits, cache
    return logits


def backward(params, dlogits, cache) -> dict:
    """Gradients of a scalar loss w.r.t. every parameter, given ``dL/dlogits``."""
    cfg = cache["cfg"]
    p = params
    P = lambda k: np.asarray(p[k], dtype=np.float64)  # noqa: E731
    grads = {}
    y1 = cache["cls2_in"]
    grads["cls.fc2.w"] = y1.T @ dlogits
    grads["cls.fc2.b"] = dlogits.sum(axis=0)
    dy1 = dlogits @ P("cls.fc2.w").T
    dcls_in, grads["cls.fc1.w"], grads["cls.fc1.b"] = _ffn_backward(
        dy1, P("cls.fc1.w"), cache["cls1"])

    if cfg.kind == "dual":
        h_s, h_x, c, gz, gr, g = cache["gate"]
        dfused = dcls_in
        dh_s = g * dfused
        dh_x = (1.0 - g) * dfused
        dq = (h_s - h_x) * dfused * g * (1.0 - g)
        grads["gate.fc2.w"] = gr.T @ dq
        grads["gate.fc2.b"] = dq.sum(axis=0)
        dgz = (dq @ P("gate.fc2.w").T) * (gz > 0)
        grads["gate.fc1.w"] = c.T @ dgz
        grads["gate.fc1.b"] = dgz.sum(axis=0)
        dc = dgz @ P("gate.fc1.w").T
        f = h_s.shape[-1]
        dh_s = dh_s + dc[:, :f]
        dh_x = dh_x + dc[:, f:]

        v_x = cache["wave"]["v"]
        grads["wave.align.w"] = v_x.T @ dh_x
        grads["wave.align.b"] = dh_x.sum(axis=0)
        dv_x = dh_x @ P("wave.align.w").T

        v_s = cache["spec"]["v"]
        grads["spec.align.w"] = v_s.T @ dh_s
        grads["spec.align.b"] = dh_s.sum(axis=0)
        dv_s = dh_s @ P("spec.align.w").T
        dH = _branch_backward(p, "spec", dv_s, cache["spec"], grads)

        X, alpha, H = cache["fuse"]
        # H_t = sum_l alpha_lt X_lt ; alpha = softmax_l(X_lt . w)
        dalpha = np.einsum("bltd,btd->blt", X, dH)
        ds = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
        grads["spec.fuse.w"] = np.einsum("blt,bltd->d", ds, X)
        grads["spec.fuse.b"] = np.zeros(())
    else:
        dv_x = dcls_in

    _branch_backward(p, "wave", dv_x, cache["wave"], grads)
    return {k: np.asarray(grads[k], dtype=np.float64).reshape(np.shape(params[k]))
            for k in params}


def shape_ledger(params, cfg: HeadConfig, wave, spec=None) -> dict:
    """Per-stage output shapes (excluding batch) of an eval-mode forward."""
    _, cache = forward(params, cfg, wave, spec, return_cache=True)
    return dict(cache["trace"])


def layer_weights(params, cfg: HeadConfig, spec) -> np.ndarray:
    """Mean layer-fusion weight per layer over batch and time, shape (L,)."""
    _, alpha = layer_time_fuse(spec, params["spec.fuse.w"])
    return alpha.mean(axis=(0, 2))


# -- checkpoints -----------------------------------------------------------------
#
# b"HCKP" | u16 version | u32 header_len | JSON header | tensors as <f4 in
# header order. The header carries the head config, free-form metadata and
# a manifest of {name, shape}.

CKPT_MAGIC = b"HCKP"
CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<4sHI")


def save_checkpoint(path, params: dict, cfg: HeadConfig, meta: dict | None = None) -> None:
    check_params(cfg, params)
    manifest = [{"name": k, "shape": list(np.shape(v))} for k, v in params.items()]
    header = json.dumps(
        {"config": asdict(cfg), "meta": meta or {}, "tensors": manifest},
        sort_keys=True,
    ).encode("utf-8")
    body = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for v in params.values())
    Path(path).write_bytes(_CKPT_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, len(header)) + header + body)


def load_checkpoint(path):
    """Returns ``(params, cfg, meta)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEAD.size:
        raise CorruptFile(f"{path}: truncated header")
    magic, version, hlen = _CKPT_HEAD.unpack_from(raw, 0)
    if magic != CKPT_MAGIC or version != CKPT_VERSION:
        raise CorruptFile(f"{path}: not a head checkpoint")
    start = _CKPT_HEAD.size
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
        cfg = HeadConfig(**header["config"])
    except (ValueError, KeyError, TypeError, InvalidInput) as exc:
        raise CorruptFile(f"{path}: bad header ({exc})") from exc
    offset = start + hlen
    params = {}
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        if offset + 4 * n > len(raw):
            raise CorruptFile(f"{path}: truncated tensor {t['name']}")
        params[t["name"]] = np.frombuffer(raw, dtype="<f4", count=n, offset=offset) \
            .reshape(shape).astype(np.float32)
        offset += 4 * n
    if offset != len(raw):
        raise CorruptFile(f"{path}: trailing bytes")
    try:
        check_params(cfg, params)
    except ShapeError as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    return params, cfg, header["meta"]


def params_digest(params: dict) -> str:
    h = hashlib.sha256()
    for k, v in params.items():
        h.update(k.encode())
        h.update(np.ascontiguousarray(v, dtype="<f4").tobytes())
    return h.hexdigest()
