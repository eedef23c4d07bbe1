"""Smoke test for the `geoformer` extension module.

Build and install it first:

    pip install --no-build-isolation ./crates/py
    python3 python/smoke_test.py
"""

import json
import math
import tempfile
from pathlib import Path

import geoformer


def close(a, b, tol):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def check_geometry():
    assert close(geoformer.mobius_add(-1.0, [0.5, 0.0], [0.5, 0.0]), [0.8, 0.0], 1e-12)
    for k in (-3.0, -1.0, 1.0, 3.0):
        v = [0.1, -0.2, 0.15]
        assert close(geoformer.log0(k, geoformer.exp0(k, v)), v, 1e-12)
    x, y = [0.1, 0.2], [-0.3, 0.05]
    flat = 2.0 * math.dist(x, y)
    assert abs(geoformer.dist(1e-8, x, y) - flat) < 1e-5
    inside = geoformer.project_to_domain(-1.0, [3.0, 4.0])
    assert math.hypot(*inside) < 1.0
    try:
        geoformer.exp0(float("nan"), [0.0])
    except ValueError:
        pass
    else:
        raise AssertionError("NaN curvature accepted")


def check_projections():
    m = [[1.0, 2.0], [0.5, -1.0], [3.0, 0.2], [-0.7, 1.1]]
    assert geoformer.orth_residual(geoformer.stiefel_project(m)) < 1e-10
    assert geoformer.orth_residual(geoformer.grassmann_project(m)) < 1e-10


def check_attention():
    q = [[0.3, -0.1], [0.2, 0.5], [-0.4, 0.1]]
    k = [[0.1, 0.2], [-0.3, 0.4], [0.5, 0.5]]
    v = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
    out = geoformer.linear_attention(q, k, v, 0.5)
    for i, qi in enumerate(q):
        nq = math.hypot(*qi)
        w = [1.0 + sum(a * b for a, b in zip(qi, kj)) / (nq * math.hypot(*kj)) for kj in k]
        mixed = [sum(wj * vj[c] for wj, vj in zip(w, v)) / sum(w) for c in range(2)]
        expect = [0.5 * v[i][c] + 0.5 * mixed[c] for c in range(2)]
        assert close(out[i], expect, 1e-12), (out[i], expect)


def check_training():
    spec = {"kind": "sbm", "block_sizes": [30, 30], "p_in": 0.3, "p_out": 0.02, "feature_dim": 12}
    ds = geoformer.Dataset.synthetic(json.dumps(spec), seed=1)
    assert ds.num_nodes == 60 and ds.num_classes == 2
    config = json.dumps({"variant": "rmoe", "hidden_dim": 8, "expert_dim": 4, "epochs": 40})
    with tempfile.TemporaryDirectory() as tmp:
        ds.save(Path(tmp) / "data")
        again = geoformer.Dataset.load(Path(tmp) / "data")
        assert again.labels == ds.labels
        metrics = json.loads(ds.train(config, out_dir=Path(tmp) / "run"))
        model = (Path(tmp) / "run" / "model.json").read_text()
        test = json.loads(ds.evaluate(config, model, "test"))
    assert test["accuracy"] == metrics["test"]["accuracy"]
    assert metrics["test"]["accuracy"] > 0.5, metrics["test"]
    try:
        ds.train(json.dumps({"lr": -1}))
    except ValueError as e:
        assert "lr" in str(e)
    else:
        raise AssertionError("negative lr accepted")


def check_selftest():
    for suite in ("geometry", "attention", "gradcheck"):
        ok, report = geoformer.selftest(suite)
        assert ok, report


if __name__ == "__main__":
    for check in (check_geometry, check_projections, check_attention, check_training, check_selftest):
        check()
        print(f"ok  {check.__name__}")
