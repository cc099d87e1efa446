"""Smoke test for the locenc_py extension module.

Build the module first (see README), then run:

    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import locenc_py as le


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    y = le.sh_basis(0.0, 90.0, 2)
    assert len(y) == 4
    assert close(y[0], 1.0 / math.sqrt(4.0 * math.pi), 1e-15)
    assert close(y[2], math.sqrt(3.0 / (4.0 * math.pi)), 1e-12)

    rows = le.sh_matrix([(10.0, 20.0), (-170.0, -45.0)], 5)
    assert len(rows) == 2 and len(rows[0]) == 25

    assert close(le.angular_distance((0.0, 0.0), (180.0, 0.0)), math.pi, 1e-12)

    uniform = [[1.0, 0.0]] * 8
    assert close(le.clip_loss(uniform, uniform, 0.07), math.log(8), 1e-12)
    assert close(le.clip_loss([[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]], 1.0),
                 math.log(1.0 + math.exp(-1.0)), 1e-9)

    assert close(le.metric_r2([0, 1, 2, 5], [0, 1, 2, 3]), 0.2, 1e-12)
    assert le.metric_accuracy([1, 2, 3], [1, 2, 0]) == 2.0 / 3.0

    comps, ratios, scores = le.pca([[float(i), 2.0 * i, 0.0] for i in range(10)], 1)
    assert close(ratios[0], 1.0, 1e-10) and len(scores) == 10 and len(comps[0]) == 3

    coords, feats, targets = le.generate_world(400, seed=3, bump_count=4, feature_dim=6)
    assert len(coords) == len(feats) == len(targets) == 400

    model, log = le.pretrain(coords, feats, l_max=4, embed_dim=8, hidden_dim=32,
                             batch_size=32, epochs=5, lr=1e-3, seed=1)
    assert len(log) == 5
    assert model.embed_dim == 8 and model.l_max == 4
    emb = model.embed(coords[:3])
    assert len(emb) == 3 and len(emb[0]) == 8

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "m.ckpt")
        model.save(path)
        again = le.Model.load(path)
        assert again.embed(coords[:3]) == emb

    grid = model.similarity_map(coords[0][0], coords[0][1], 30.0)
    assert len(grid) == 6 and len(grid[0]) == 12

    report = le.evaluate(coords, targets, model, split="random", repeats=2,
                         trials=2, max_epochs=20, patience=5)
    assert len(report["values"]) == 2
    report = le.evaluate(coords, targets, None, split="holdout:0,60", repeats=1,
                         trials=1, max_epochs=10, patience=5)
    assert report["std"] == 0.0 and report["featurizer"] == "identity"

    try:
        le.sh_basis(0.0, 95.0, 3)
    except ValueError as e:
        assert "latitude" in str(e)
    else:
        raise AssertionError("invalid latitude accepted")

    print("locenc_py smoke test passed")


if __name__ == "__main__":
    main()
