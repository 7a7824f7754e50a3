import json

import numpy as np
import pytest

from envtricascade import metrics
from envtricascade.errors import DegenerateLabels, InvalidInput, InvalidLabel
from oracles import (confusion_oracle, eer_oracle, macro_f1_oracle, random_label_sets,
                     random_score_sets)


def test_label_to_attributes_total_and_injective():
    attrs = [metrics.label_to_attributes(c) for c in range(5)]
    assert attrs[0] == (0, 0, 0) and attrs[4] == (1, 1, 1)
    assert len(set(attrs)) == 5
    with pytest.raises(InvalidLabel):
        metrics.label_to_attributes(5)


def test_macro_f1_examples():
    assert metrics.macro_f1([0, 1, 2, 3, 4], [0, 1, 2, 3, 4]) == 1.0
    assert metrics.macro_f1([0, 1, 2, 3, 3], [0, 1, 2, 3, 4]) == pytest.approx(11 / 15)
    labels = np.repeat(np.arange(5), 4)
    preds = np.zeros(20, dtype=int)
    assert metrics.macro_f1(preds, labels) == pytest.approx(macro_f1_oracle(preds, labels))
    assert metrics.macro_f1(preds, labels) == pytest.approx((2 / 6) / 5)


def test_macro_f1_and_confusion_match_oracle():
    rng = np.random.default_rng(0)
    for preds, labels in random_label_sets(rng, 1000):
        assert metrics.confusion_matrix(preds, labels).tolist() == \
            confusion_oracle(preds, labels)
        assert metrics.macro_f1(preds, labels) == pytest.approx(
            macro_f1_oracle(preds, labels), abs=1e-12)


def test_macro_f1_order_invariant_and_bounded():
    rng = np.random.default_rng(1)
    for preds, labels in random_label_sets(rng, 100):
        perm = rng.permutation(len(preds))
        v = metrics.macro_f1(preds, labels)
        assert v == metrics.macro_f1(preds[perm], labels[perm])
        assert 0.0 <= v <= 1.0


def test_macro_f1_errors():
    with pytest.raises(InvalidInput):
        metrics.macro_f1([0, 1], [0])
    with pytest.raises(InvalidLabel):
        metrics.macro_f1([0, 7], [0, 1])


def test_eer_examples():
    assert metrics.eer([0.9, 0.3, 0.2, 0.8], [1, 1, 0, 0]) == 0.5
    assert metrics.eer([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 0.0
    assert metrics.eer([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 1.0
    with pytest.raises(DegenerateLabels):
        metrics.eer([0.1, 0.2], [1, 1])


def test_eer_matches_sweep_oracle():
    rng = np.random.default_rng(2)
    for s, y in random_score_sets(rng, 500):
        assert abs(metrics.eer(s, y) - eer_oracle(list(s), list(y))) <= 1e-9


def test_eer_invariances():
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(4, 40))
        y = rng.integers(0, 2, n)
        y[:2] = (0, 1)
        s = rng.standard_normal(n) + y
        e = metrics.eer(s, y)
        assert 0.0 <= e <= 1.0
        assert metrics.eer(2 * s + 1, y) == pytest.approx(e, abs=1e-12)
        assert metrics.eer(np.exp(s), y) == pytest.approx(e, abs=1e-12)
        assert metrics.eer(-s, 1 - y) == pytest.approx(e, abs=1e-12)


def test_eer_threshold_in_scores():
    s = np.array([0.1, 0.4, 0.35, 0.8])
    y = np.array([0, 0, 1, 1])
    assert metrics.eer_threshold(s, y) in s


def test_attribute_scores():
    np.testing.assert_allclose(metrics.attribute_scores(np.eye(5)[4]), (1, 1, 1))
    np.testing.assert_allclose(metrics.attribute_scores(np.eye(5)[0]), (0, 0, 0))
    np.testing.assert_allclose(metrics.attribute_scores(np.full(5, 0.2)), (0.8, 0.4, 0.4))
    with pytest.raises(InvalidInput):
        metrics.attribute_scores(np.full(5, 0.3))


def _write(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))


def test_report_hard_and_soft(tmp_path):
    recs = [{"id": f"s{i}", "class": i % 5} for i in range(10)]
    hard = [{"id": r["id"], "final_class": r["class"]} for r in recs]
    _write(tmp_path / "hard.jsonl", hard)
    rep = metrics.report(tmp_path / "hard.jsonl", recs, "cascade")
    assert rep.macro_f1 == 1.0
    assert rep.confusion == np.diag([2] * 5).tolist()
    assert rep.eer_original is rep.eer_speech is rep.eer_env is None

    soft = [dict(h, probs=np.eye(5)[h["final_class"]].tolist()) for h in hard]
    _write(tmp_path / "soft.jsonl", soft)
    rep = metrics.report(tmp_path / "soft.jsonl", recs, "B1")
    assert (rep.eer_original, rep.eer_speech, rep.eer_env) == (0.0, 0.0, 0.0)
    table = metrics.render_table([rep])
    assert [c.strip() for c in table.splitlines()[0].split("|")][:2] == ["System", "Macro-F1"]
    assert "EER-orig" in table

    _write(tmp_path / "bad.jsonl", hard[:-1])
    with pytest.raises(InvalidInput):
        metrics.report(tmp_path / "bad.jsonl", recs)


def test_report_json_roundtrip():
    rep = metrics.evaluate([0, 1, 2], [0, 1, 1], system="x")
    back = metrics.EvalReport(**json.loads(rep.to_json()))
    assert back == rep
