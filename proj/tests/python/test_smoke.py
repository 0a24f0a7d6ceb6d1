import itertools

import numpy as np
import pytest

import cascade_match as cm

TINY_MODEL = {
    "encoder": {"channels": [8, 16, 16], "res_blocks": 1, "ladder_width": 8},
    "attention": {"heads": 2, "lsa": {"window": 4}, "lw": {"window": 4}},
    "coarse": {"blocks": 2},
    "patterns": {"1/4": "self,cross", "1/2": "cross"},
    "train_size": 64,
}


def brute_nms(values, valid, k):
    rows, cols = values.shape
    r = k // 2
    keep = np.zeros_like(valid, dtype=bool)
    for i, j in itertools.product(range(rows), range(cols)):
        if not valid[i, j]:
            continue
        ok = True
        for a, b in itertools.product(range(rows), range(cols)):
            if (a, b) == (i, j) or not valid[a, b] or abs(a - i) > r or abs(b - j) > r:
                continue
            if values[a, b] > values[i, j] or (values[a, b] == values[i, j] and (a, b) < (i, j)):
                ok = False
        keep[i, j] = ok
    return keep


def test_nms_against_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(30):
        shape = tuple(rng.integers(1, 10, size=2))
        values = rng.integers(0, 4, size=shape).astype(np.float32)
        valid = rng.random(shape) > 0.2
        for k in (3, 5, 7):
            np.testing.assert_array_equal(cm.nms_select(values, valid, k), brute_nms(values, valid, k))


def test_constant_map_and_grid():
    values = np.ones((6, 6), np.float32)
    valid = np.ones((6, 6), bool)
    keep = cm.nms_select(values, valid, 3)
    assert keep.sum() == 1 and keep[0, 0]
    assert cm.grid_select(values, valid, 3).sum() == 4


def test_auc_and_validation():
    assert cm.auc([1.0, 3.0, 7.0], 5.0) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        cm.auc([], 3.0)
    with pytest.raises(cm.ValidationError):
        cm.nms_select(np.zeros((3, 3)), np.ones((3, 3)), 4)
    with pytest.raises(ValueError):
        cm.generate_corpus({"bogus": 1})


def test_focal_gradient_check():
    assert "focal" in cm.grad_check_names()
    worst, ok = cm.grad_check("focal")
    assert ok and worst < 1e-4


def test_corpus_train_match_evaluate(tmp_path):
    data = {"corpus": str(tmp_path / "corpus"), "pairs": 4, "width": 64, "height": 64, "holdout": 0.5}
    stems = cm.generate_corpus({"data": data, "seed": 2})
    assert stems == ["pair_00000", "pair_00001", "pair_00002", "pair_00003"]

    report = cm.evaluate({"data": data, "eval": {"inject_gt": True}}, "homography")
    assert report["rows"][0]["auc"][0] == pytest.approx(1.0)

    out = cm.train({
        "data": data,
        "model": TINY_MODEL,
        "train": {"stage": "cascade_2c", "steps": 2, "warmup": 1},
        "output": str(tmp_path / "run"),
    })
    assert len(out["stages"][0]["losses"]) == 2
    assert all(np.isfinite(out["stages"][0]["losses"]))

    rng = np.random.default_rng(1)
    img = rng.random((64, 64), dtype=np.float32)
    matches = cm.match({"checkpoint": out["checkpoint"], "match": {"threshold": 0.0}}, img, img)
    assert matches.ndim == 2 and matches.shape[1] == 6
    assert len(matches) > 0
    assert np.all((matches[:, 4] >= 0) & (matches[:, 4] <= 1))
