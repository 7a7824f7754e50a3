"""End-to-end steps behind the CLI: prep, synth, train, infer, eval, report."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from . import audio, cascade, head, metrics, trainer
from .augment import synchronized_pair
from .config import SPLITS, PipelineConfig
from .embeddings import (LayerStack, read_manifest, resolve_path, synth_stack,
                         write_layerstack, write_manifest)
from .errors import EmptySubset, InvalidAudio, InvalidInput, MissingModel

log = logging.getLogger(__name__)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def run_synth(cfg: PipelineConfig, n_per_class=None):
    """Write a balanced synthetic dataset and per-split B1/B2 manifests.

    Returns ``{(split, system): manifest_path}``.
    """
    s = cfg.raw["synth"]
    n = int(n_per_class if n_per_class is not None else s["n_per_class"])
    if n < 1:
        raise InvalidInput("n_per_class must be >= 1")
    profile = cfg.synth_profile()
    spectral = [k for k in profile.branches if k != "waveform"]
    data_dir = cfg.out_dir / "data"
    stack_dir = data_dir / "stacks"
    stack_dir.mkdir(parents=True, exist_ok=True)

    fr = s["splits"]
    rng = np.random.default_rng([cfg.seed, 7])
    assign = {}
    for c in range(5):
        perm = rng.permutation(n)
        n_train = int(round(fr["train"] * n))
        n_val = int(round(fr["val"] * n))
        for rank, i in enumerate(perm):
            split = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
            assign[(c, int(i))] = split

    rows = {(sp, k): [] for sp in SPLITS for k in spectral}
    for c in range(5):
        for i in range(n):
            sid = f"c{c}_{i:05d}"
            seed = c * 1_000_000 + i
            wave_rel = f"stacks/{sid}_waveform.lstk"
            write_layerstack(data_dir / wave_rel, synth_stack(profile, "waveform", c, seed))
            for k in spectral:
                rel = f"stacks/{sid}_{k}.lstk"
                write_layerstack(data_dir / rel, synth_stack(profile, k, c, seed))
                rows[(assign[(c, i)], k)].append(
                    {"id": sid, "class": c, "spectral_path": rel, "waveform_path": wave_rel})
    paths = {}
    for (sp, k), recs in rows.items():
        p = data_dir / f"{sp}_{k}.jsonl"
        write_manifest(p, recs)
        paths[(sp, k)] = p
    _write_json(data_dir / "synth_meta.json",
                {"config_hash": cfg.hash, "n_per_class": n, "seed": cfg.seed})
    return paths


def run_prep(cfg: PipelineConfig):
    """Condition every WAV in the prep manifest into mel stacks + 16 kHz WAVs.

    Unreadable files are logged to ``prep/errors.log``; returns
    ``(manifest_path, n_failed)``.
    """
    src = cfg.raw["prep"].get("wav_manifest")
    if not src:
        raise InvalidInput("prep.wav_manifest is not set")
    src = cfg.path(src)
    records = read_manifest(src)
    if not records:
        raise EmptySubset(f"{src}: empty manifest")
    out = cfg.out_dir / "prep"
    (out / "mel").mkdir(parents=True, exist_ok=True)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    aug_cfg = cfg.augment_config() if cfg.raw["prep"].get("augment") else None
    rows, errors = [], []
    for i, rec in enumerate(records):
        try:
            data, rate = audio.read_wav(resolve_path(src.parent, rec["wav_path"]))
            seed = cfg.seed * 1_000_003 + i
            w = audio.condition(data, rate, seed)
            w_branch = w
            if aug_cfg is not None:
                w_branch, w = synchronized_pair(w, aug_cfg, seed)
            mel = audio.normalize(audio.logmel(w))
            mel_rel = f"mel/{rec['id']}.lstk"
            wav_rel = f"wav/{rec['id']}.wav"
            write_layerstack(out / mel_rel, LayerStack(mel.frames[None], (0,), "spectral"))
            audio.write_wav(out / wav_rel, w_branch)
            rows.append({"id": rec["id"], "class": rec["class"],
                         "mel_path": mel_rel, "wav_path": wav_rel})
        except (InvalidAudio, OSError, KeyError) as exc:
            errors.append(f"{rec.get('id')}\t{exc}")
    manifest = out / "manifest.jsonl"
    write_manifest(manifest, rows)
    (out / "errors.log").write_text("".join(e + "\n" for e in errors), encoding="utf-8")
    return manifest, len(errors)


def run_train(cfg: PipelineConfig, system, batch_hook=None):
    train_recs = read_manifest(cfg.manifest(system, "train"))
    val_path = cfg.manifest(system, "val")
    val_recs = read_manifest(val_path) if val_path.exists() else None
    ckpt = cfg.checkpoint(system)
    result = trainer.train(
        system, train_recs, cfg.train_config(), val_records=val_recs,
        base=cfg.manifest(system, "train").parent, out_dir=ckpt.parent,
        layer_ids=cfg.layer_ids(system), batch_hook=batch_hook, config_hash=cfg.hash)
    if ckpt.name != "best.ckpt":
        head.save_checkpoint(ckpt, result.params, result.cfg, result.meta)
    return result


def load_models(cfg: PipelineConfig, systems):
    out = {}
    for s in systems:
        p = cfg.checkpoint(s)
        if not p.exists():
            raise MissingModel(f"no System {s} checkpoint at {p}")
        out[s] = head.load_checkpoint(p)
    return out


def stage1_threshold(cfg: PipelineConfig, models):
    st = cfg.raw["stage1"]
    if st.get("calibrate") and "A" in models:
        thr = models["A"][2].get("val", {}).get("eer_threshold")
        if thr is not None and 0 < thr < 1:
            return float(thr)
    return float(st["threshold"])


def run_infer(cfg: PipelineConfig, mode="cascade", split="test"):
    need = {"cascade": ("A", "B1", "B2"), "b1": ("B1",), "b2": ("B2",),
            "b1b2": ("B1", "B2"), "a+b1": ("A", "B1"), "a+b2": ("A", "B2")}
    if mode not in need:
        raise InvalidInput(f"unknown mode {mode!r}")
    models = load_models(cfg, need[mode])
    m1 = cfg.manifest("B1", split)
    recs_b1 = read_manifest(m1)
    m2 = cfg.manifest("B2", split)
    recs_b2 = read_manifest(m2) if m2.exists() else recs_b1
    if "B2" in need[mode] and m2.parent != m1.parent:
        raise InvalidInput("B1 and B2 manifests must share a directory")
    thr = stage1_threshold(cfg, models)
    decisions, rows = cascade.infer_batch(recs_b1, recs_b2, models, threshold=thr,
                                          mode=mode, base=m1.parent)
    out = cfg.out_dir / "predictions"
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{split}_{mode.replace('+', '_')}.jsonl"
    cascade.write_predictions(path, rows)
    _write_json(path.with_suffix(".meta.json"),
                {"config_hash": cfg.hash, "mode": mode, "split": split, "threshold": thr,
                 "n": len(rows)})
    return path, decisions, rows


SYSTEM_LABELS = {
    "b1": "B1", "b2": "B2", "b1b2": "B1+B2", "a+b1": "A+B1", "a+b2": "A+B2",
    "cascade": "A+B1+B2 (cascade)",
}


def run_eval(cfg: PipelineConfig, mode="cascade", split="test"):
    pred = cfg.out_dir / "predictions" / f"{split}_{mode.replace('+', '_')}.jsonl"
    if not pred.exists():
        raise InvalidInput(f"no predictions at {pred}; run infer first")
    rep = metrics.report(pred, read_manifest(cfg.manifest("B1", split)),
                         system=SYSTEM_LABELS.get(mode, mode))
    rep.extra = {"config_hash": cfg.hash, "mode": mode, "split": split}
    out = cfg.out_dir / "reports"
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"{split}_{mode.replace('+', '_')}"
    Path(f"{stem}.json").write_text(rep.to_json() + "\n", encoding="utf-8")
    Path(f"{stem}.txt").write_text(metrics.render_table([rep]), encoding="utf-8")
    return rep


def run_report(cfg: PipelineConfig, split="test"):
    """Collect every per-mode report of ``split`` into one table."""
    reps = []
    for mode in ("b1", "b2", "b1b2", "a+b1", "a+b2", "cascade"):
        p = cfg.out_dir / "reports" / f"{split}_{mode.replace('+', '_')}.json"
        if p.exists():
            d = json.loads(p.read_text(encoding="utf-8"))
            reps.append(metrics.EvalReport(**d))
    if not reps:
        raise InvalidInput("no reports found; run eval first")
    table = metrics.render_table(reps)
    (cfg.out_dir / "reports" / f"{split}_table.txt").write_text(table, encoding="utf-8")
    return table
