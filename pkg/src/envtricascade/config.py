"""Pipeline configuration: one YAML/JSON file with the seed at the root.

Relative paths are resolved against the config file's directory. The
config hash is taken over the merged settings except ``out_dir``, so
moving or redirecting a run directory does not change it.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .augment import AugmentConfig
from .embeddings import BranchProfile, SynthProfile
from .errors import InvalidConfig
from .trainer import TrainConfig

DEFAULTS = {
    "seed": 0,
    "out_dir": "run",
    "synth": {
        "n_per_class": 200,
        "separation": 4.0,
        "noise_std": 1.0,
        "d_base": 16,
        "splits": {"train": 0.7, "val": 0.1, "test": 0.2},
    },
    "profiles": {
        "B1": {"layer_ids": [5, 6, 7], "dim": 768, "frames": 16, "visible": ["speech"]},
        "B2": {"layer_ids": [19, 20, 21], "dim": 1024, "frames": 16, "visible": ["env"]},
        "waveform": {"layer_ids": [5], "dim": 1024, "frames": 16, "visible": ["mix"]},
    },
    "manifests": {},
    "checkpoints": {},
    "prep": {"wav_manifest": None, "augment": False},
    "train": {},
    "augment": {},
    "stage1": {"threshold": 0.5, "calibrate": False},
}

SPLITS = ("train", "val", "test")


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "profiles":
            out[k] = _merge(out[k], v)
        elif k == "profiles" and isinstance(v, dict):
            prof = copy.deepcopy(out["profiles"])
            for name, p in v.items():
                prof[name] = _merge(prof.get(name, {}), p)
            out[k] = prof
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class PipelineConfig:
    raw: dict
    root: Path

    @classmethod
    def load(cls, path, seed=None, out_dir=None):
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
        try:
            user = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise InvalidConfig(f"{path}: {exc}") from exc
        return cls.from_dict(user, path.parent, seed=seed, out_dir=out_dir)

    @classmethod
    def from_dict(cls, user, root=".", seed=None, out_dir=None):
        if not isinstance(user, dict):
            raise InvalidConfig("config must be a mapping")
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise InvalidConfig(f"unknown config sections: {sorted(unknown)}")
        raw = _merge(DEFAULTS, user)
        if seed is not None:
            raw["seed"] = int(seed)
        if out_dir is not None:
            raw["out_dir"] = str(out_dir)
        cfg = cls(raw, Path(root))
        cfg.validate()
        return cfg

    def validate(self):
        self.train_config()
        self.augment_config()
        self.synth_profile()
        thr = self.raw["stage1"]["threshold"]
        if not 0 < float(thr) < 1:
            raise InvalidConfig("stage1.threshold must lie in (0, 1)")
        splits = self.raw["synth"]["splits"]
        if set(splits) != set(SPLITS) or abs(sum(splits.values()) - 1.0) > 1e-9:
            raise InvalidConfig("synth.splits needs train/val/test fractions summing to 1")

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def hash(self) -> str:
        body = {k: v for k, v in self.raw.items() if k != "out_dir"}
        blob = json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.root / p

    @property
    def out_dir(self) -> Path:
        return self.path(self.raw["out_dir"])

    def manifest(self, system, split) -> Path:
        """Manifest path for ``system`` (A reads B1's) and ``split``."""
        key = "B1" if system == "A" else system
        given = self.raw["manifests"].get(key, {}).get(split)
        if given:
            return self.path(given)
        return self.out_dir / "data" / f"{split}_{key}.jsonl"

    def checkpoint(self, system) -> Path:
        given = self.raw["checkpoints"].get(system)
        if given:
            return self.path(given)
        return self.out_dir / "models" / system / "best.ckpt"

    def train_config(self) -> TrainConfig:
        d = dict(self.raw["train"])
        d.setdefault("seed", self.seed)
        return TrainConfig.from_dict(d)

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig.from_dict(self.raw["augment"])

    def synth_profile(self) -> SynthProfile:
        s = self.raw["synth"]
        try:
            branches = {
                name: BranchProfile(tuple(p["layer_ids"]), int(p["dim"]), int(p["frames"]),
                                    tuple(p.get("visible", ())),
                                    "waveform" if name == "waveform" else "spectral")
                for name, p in self.raw["profiles"].items()
            }
            return SynthProfile(float(s["separation"]), float(s["noise_std"]),
                                int(s["d_base"]), self.seed, branches)
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidConfig(f"bad synth/profile settings: {exc}") from exc
        except Exception as exc:  # InvalidInput from the profile checks
            raise InvalidConfig(str(exc)) from exc

    def layer_ids(self, system):
        p = self.raw["profiles"].get(system)
        return list(p["layer_ids"]) if p else None
