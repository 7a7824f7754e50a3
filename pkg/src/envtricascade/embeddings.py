"""Layer-stack embeddings: the .lstk file format, manifests and a synthetic generator.

Frozen SSL backbones are not run here. Heads consume precomputed
``L x T x D`` hidden-state stacks read from ``.lstk`` files, or stacks drawn
from :func:`synth_sample` for desk-scale experiments.

.lstk layout (all little-endian)::

    b"LSTK" | u16 version | u8 branch | u32 L | u32 T | u32 D
    | L x u32 layer_ids | L*T*D x f32 (layer, time, dim) row-major
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptFile, InvalidInput, InvalidLabel

MAGIC = b"LSTK"
VERSION = 1
BRANCHES = ("spectral", "waveform")
_HEADER = struct.Struct("<4sHBIII")

ATTRIBUTES = ("mix", "speech", "env")

# class -> (is_mixed, speech_spoofed, env_spoofed)
CLASS_ATTRIBUTES = {
    0: (0, 0, 0),
    1: (1, 0, 0),
    2: (1, 1, 0),
    3: (1, 0, 1),
    4: (1, 1, 1),
}


@dataclass
class LayerStack:
    """``data`` is (L, T, D) float32; ``layer_ids`` name the source layers."""

    data: np.ndarray
    layer_ids: tuple
    branch_tag: str = "spectral"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        self.layer_ids = tuple(int(i) for i in self.layer_ids)
        if self.data.ndim != 3:
            raise InvalidInput(f"layer stack must be 3-D, got shape {self.data.shape}")
        if self.data.shape[0] < 1:
            raise InvalidInput("layer stack needs at least one layer")
        if len(self.layer_ids) != self.data.shape[0]:
            raise InvalidInput("layer_ids length does not match L")
        if any(b <= a for a, b in zip(self.layer_ids, self.layer_ids[1:])):
            raise InvalidInput("layer_ids must be strictly increasing")
        if any(i < 0 for i in self.layer_ids):
            raise InvalidInput("layer_ids must be non-negative")
        if self.branch_tag not in BRANCHES:
            raise InvalidInput(f"unknown branch tag {self.branch_tag!r}")
        if not np.isfinite(self.data).all():
            raise InvalidInput("layer stack contains non-finite values")

    @property
    def shape(self):
        return self.data.shape


def write_layerstack(path, stack: LayerStack) -> None:
    L, T, D = stack.data.shape
    header = _HEADER.pack(MAGIC, VERSION, BRANCHES.index(stack.branch_tag), L, T, D)
    ids = struct.pack(f"<{L}I", *stack.layer_ids)
    payload = np.ascontiguousarray(stack.data, dtype="<f4").tobytes()
    Path(path).write_bytes(header + ids + payload)


def read_layerstack(path) -> LayerStack:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CorruptFile(f"{path}: truncated header")
    magic, version, branch, L, T, D = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CorruptFile(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CorruptFile(f"{path}: unsupported version {version}")
    if branch >= len(BRANCHES):
        raise CorruptFile(f"{path}: bad branch tag {branch}")
    offset = _HEADER.size + 4 * L
    expected = offset + 4 * L * T * D
    if len(raw) != expected:
        raise CorruptFile(f"{path}: size {len(raw)} does not match header ({expected})")
    ids = struct.unpack_from(f"<{L}I", raw, _HEADER.size)
    data = np.frombuffer(raw, dtype="<f4", offset=offset).reshape(L, T, D)
    if not np.isfinite(data).all():
        raise CorruptFile(f"{path}: non-finite values")
    try:
        return LayerStack(data.astype(np.float32), ids, BRANCHES[branch])
    except InvalidInput as exc:
        raise CorruptFile(f"{path}: {exc}") from exc


# -- manifests ---------------------------------------------------------------

def read_manifest(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvalidInput(f"{path}:{lineno}: {exc}") from exc
            if "id" not in rec or "class" not in rec:
                raise InvalidInput(f"{path}:{lineno}: record needs 'id' and 'class'")
            if rec["class"] not in CLASS_ATTRIBUTES:
                raise InvalidLabel(f"{path}:{lineno}: class {rec['class']!r} outside 0..4")
            records.append(rec)
    return records


def write_manifest(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def resolve_path(base, p):
    p = Path(p)
    return p if p.is_absolute() else Path(base) / p


def load_branch(records, key, base=".") -> np.ndarray:
    """Stack one branch of every record into an (N, L, T, D) float32 array."""
    stacks = [read_layerstack(resolve_path(base, rec[key])).data for rec in records]
    shapes = {s.shape for s in stacks}
    if len(shapes) != 1:
        raise InvalidInput(f"inconsistent '{key}' stack shapes: {sorted(shapes)}")
    return np.stack(stacks)


# -- synthetic class-conditional embeddings ----------------------------------

@dataclass(frozen=True)
class BranchProfile:
    """Shape and attribute visibility of one synthetic branch.

    ``visible`` lists which component attributes (see ``ATTRIBUTES``) leave a
    trace in this branch. Hidden attributes contribute nothing, so a head
    reading only this branch cannot separate classes differing in them.
    """

    layer_ids: tuple
    dim: int
    frames: int
    visible: tuple
    branch_tag: str = "spectral"


def default_branches(frames=16, dims=(768, 1024, 1024)):
    """The B1 / B2 spectral views and the shared waveform view.

    B1 (SSLAM-like, layers 5-7) sees speech spoofing, B2 (EAT-like,
    layers 19-21) sees environment spoofing, and the XLS-R layer-5
    waveform view sees only the mixing trace.
    """
    d1, d2, dx = dims
    return {
        "B1": BranchProfile((5, 6, 7), d1, frames, ("speech",)),
        "B2": BranchProfile((19, 20, 21), d2, frames, ("env",)),
        "waveform": BranchProfile((5,), dx, frames, ("mix",), "waveform"),
    }


@dataclass(frozen=True)
class SynthProfile:
    separation: float = 4.0
    noise_std: float = 1.0
    d_base: int = 16
    seed: int = 0
    branches: dict = field(default_factory=default_branches)

    def __post_init__(self):
        if not self.separation > 0:
            raise InvalidInput("separation must be positive")
        if not self.noise_std >= 0:
            raise InvalidInput("noise_std must be non-negative")
        if self.d_base < len(ATTRIBUTES):
            raise InvalidInput(f"d_base must be at least {len(ATTRIBUTES)}")
        if "waveform" not in self.branches or len(self.branches) < 2:
            raise InvalidInput("profile needs a waveform branch and a spectral branch")
        for name, br in self.branches.items():
            if br.dim < 1 or br.frames < 1 or not br.layer_ids:
                raise InvalidInput(f"branch {name}: empty shape")
            if set(br.visible) - set(ATTRIBUTES):
                raise InvalidInput(f"branch {name}: unknown attributes {br.visible}")

    def attribute_directions(self) -> np.ndarray:
        """Orthonormal (3, d_base) directions, one per component attribute."""
        rng = np.random.default_rng([self.seed, 0])
        q, _ = np.linalg.qr(rng.standard_normal((self.d_base, len(ATTRIBUTES))))
        return q.T

    @property
    def class_means(self) -> np.ndarray:
        """(5, d_base) latent class means; attribute vectors are distinct per class."""
        attrs = np.array([CLASS_ATTRIBUTES[c] for c in range(5)], dtype=np.float64)
        return attrs @ self.attribute_directions()

    def branch_means(self, name) -> np.ndarray:
        """(5, L, D) per-class, per-layer frame means of one branch before scaling."""
        br = self.branches[name]
        idx = list(self.branches).index(name)
        mask = np.array([a in br.visible for a in ATTRIBUTES], dtype=np.float64)
        attrs = np.array([CLASS_ATTRIBUTES[c] for c in range(5)], dtype=np.float64)
        latent = (attrs * mask) @ self.attribute_directions()
        rng = np.random.default_rng([self.seed, 1, idx])
        proj = rng.standard_normal((self.d_base, br.dim))
        proj /= np.linalg.norm(proj, axis=1, keepdims=True)
        L = len(br.layer_ids)
        # middle layers carry the strongest trace
        centre = (L - 1) / 2.0
        gains = 1.0 / (1.0 + np.abs(np.arange(L) - centre))
        return (latent @ proj)[:, None, :] * gains[None, :, None]


def synth_stack(profile: SynthProfile, name: str, class_label: int, seed: int) -> LayerStack:
    if class_label not in CLASS_ATTRIBUTES:
        raise InvalidLabel(f"class {class_label!r} outside 0..4")
    br = profile.branches[name]
    idx = list(profile.branches).index(name)
    mean = profile.branch_means(name)[class_label] * profile.separation
    rng = np.random.default_rng([profile.seed, 2, int(seed), idx])
    noise = rng.standard_normal((len(br.layer_ids), br.frames, br.dim)) * profile.noise_std
    data = (mean[:, None, :] + noise).astype(np.float32)
    return LayerStack(data, br.layer_ids, br.branch_tag)


def synth_sample(profile: SynthProfile, class_label: int, seed: int, spectral: str = "B1"):
    """Draw the ``(spectral, waveform)`` stacks of one sample.

    Every frame is ``separation * class_mean + N(0, noise_std**2)``. The
    waveform stack depends only on ``(profile, class_label, seed)``, so B1
    and B2 views of the same sample share it.
    """
    if spectral == "waveform" or spectral not in profile.branches:
        raise InvalidInput(f"unknown spectral branch {spectral!r}")
    return (
        synth_stack(profile, spectral, class_label, seed),
        synth_stack(profile, "waveform", class_label, seed),
    )
