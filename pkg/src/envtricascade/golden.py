"""Golden regression cases checked into ``fixtures/``.

``golden.json`` lists each case with its inputs (inline values or ``.lstk``
files next to it), the expected output, a tolerance and a provenance tag.
Run ``python -m envtricascade.golden`` for a pass/fail listing.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import numpy as np

from . import cascade, head, metrics, stage1, trainer
from .embeddings import read_layerstack
from .errors import EnvTriCascadeError

FIXTURES = Path(__file__).with_name("fixtures")


class MissingFixture(EnvTriCascadeError):
    pass


def _stack(root, name):
    p = root / name
    if not p.exists():
        raise MissingFixture(f"fixture file {p} is missing")
    return read_layerstack(p)


def _layer_fusion(case, root):
    st = _stack(root, case["inputs"]["stack"])
    H, alpha = head.layer_time_fuse(st.data, case["inputs"]["w_score"])
    return {"alpha": alpha[:, 0].tolist(), "H": H[0].tolist()}


def _gate(case, root):
    inp = case["inputs"]
    f = len(inp["h_spec"])
    z = np.zeros
    out, _ = head.gate_fuse(inp["h_spec"], inp["h_xlsr"], z((2 * f, f)), z(f), z((f, f)), z(f))
    return {"fused": out.tolist()}


def _asp(case, root):
    st = _stack(root, case["inputs"]["stack"])
    seq = st.data[0]
    v, a = head.asp_pool(seq, np.zeros(seq.shape[1]), 0.0)
    h = seq.shape[1]
    return {"mean": v[:h].tolist(), "std": v[h:].tolist()}


def _macro_f1(case, root):
    inp = case["inputs"]
    return {"macro_f1": metrics.macro_f1(inp["preds"], inp["labels"])}


def _eer(case, root):
    inp = case["inputs"]
    s = inp["positives"] + inp["negatives"]
    y = [1] * len(inp["positives"]) + [0] * len(inp["negatives"])
    return {"eer": metrics.eer(s, y)}


def _calibrate(case, root):
    inp = case["inputs"]
    d = stage1.BinaryDecision(1.0 if inp["stage1"] == "mixed" else 0.0, inp["stage1"], 0.5)
    c = cascade.calibrate(d, inp["ensemble"])
    return {"final_class": c.final_class, "forced_original": c.forced_original,
            "overridden_second_best": c.overridden_second_best}


def _lstk_size(case, root):
    return {"bytes": (root / case["inputs"]["stack"]).stat().st_size}


def _cross_entropy(case, root):
    inp = case["inputs"]
    return {"loss": trainer.cross_entropy(inp["logits"], inp["label"])}


OPS = {
    "layer_time_fuse": _layer_fusion,
    "gate_fuse": _gate,
    "asp_pool": _asp,
    "macro_f1": _macro_f1,
    "eer": _eer,
    "calibrate": _calibrate,
    "lstk_size": _lstk_size,
    "cross_entropy": _cross_entropy,
}


def _close(got, want, tol):
    if isinstance(want, (bool, str)) or want is None:
        return got == want
    g = np.asarray(got, dtype=np.float64)
    w = np.asarray(want, dtype=np.float64)
    if g.shape != w.shape:
        return False
    if tol == 0:
        return bool(np.array_equal(g, w))
    return bool(np.all(np.abs(g - w) <= tol))


def load_cases(root=FIXTURES):
    root = Path(root)
    path = root / "golden.json"
    if not path.exists():
        raise MissingFixture(f"{path} is missing")
    return json.loads(path.read_text(encoding="utf-8"))["cases"]


def run_golden_suite(root=FIXTURES):
    """Returns a list of ``(name, passed, detail)``."""
    root = Path(root)
    results = []
    for case in load_cases(root):
        got = OPS[case["op"]](case, root)
        bad = [k for k, want in case["expected"].items()
               if not _close(got[k], want, case["tolerance"])]
        detail = "ok" if not bad else "; ".join(
            f"{k}: got {got[k]!r}, want {case['expected'][k]!r}" for k in bad)
        results.append((case["name"], not bad, detail))
    return results


def main():
    t0 = time.perf_counter()
    results = run_golden_suite()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
    print(f"{sum(ok for _, ok, _ in results)}/{len(results)} passed "
          f"in {time.perf_counter() - t0:.2f}s")
    return 0 if all(ok for _, ok, _ in results) else 1


if __name__ == "__main__":
    sys.exit(main())
