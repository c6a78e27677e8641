import json

import numpy as np
import pytest

import blendgan as bg

TINY = {
    "iterations": "3",
    "channel_base": "8",
    "channel_cap": "8",
    "min_dim": "25",
    "max_dim": "40",
    "scale_factor": "0.75",
    "seed": "3",
}


def stripes(h, w, period, phase=0.0):
    x = np.arange(w, dtype=np.float32)
    row = np.sin(2 * np.pi * x / period + phase)
    img = np.stack([row * 0.8, row * -0.5, np.full(w, 0.2, np.float32)])
    return np.repeat(img[:, None, :], h, axis=1).astype(np.float32)


@pytest.fixture(scope="module")
def trained():
    b = bg.make_bundle([stripes(40, 40, 8), stripes(40, 40, 5, 1.0)], TINY)
    records = bg.train(b)
    assert len(records) == 3 * b.num_levels
    return b


def test_bundle_shape(trained):
    assert trained.num_identities == 2
    assert trained.sizes[0] == (40, 40)
    assert all(trained.trained(level) for level in range(trained.num_levels))


def test_sample_and_reconstruct(trained):
    s = bg.sample(trained, 0, seed=1)
    assert s.shape == (3, 40, 40)
    assert np.all(np.abs(s) <= 1.0)
    np.testing.assert_array_equal(s, bg.sample(trained, 0, seed=1))
    assert bg.sample(trained, 0, seed=1, size=(30, 60)).shape == (3, 30, 60)
    assert bg.reconstruct(trained, 1).shape == (3, 40, 40)


def test_morph_endpoints_are_reconstructions(trained):
    frames = bg.morph(trained, [[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]])
    assert len(frames) == 3
    np.testing.assert_array_equal(frames[0], bg.reconstruct(trained, 0))
    np.testing.assert_array_equal(frames[-1], bg.reconstruct(trained, 1))


def test_invalid_blend_raises(trained):
    with pytest.raises(ValueError):
        bg.generate(trained, [0.7, 0.7])


def test_round_trip(trained, tmp_path):
    bg.save_bundle(trained, tmp_path / "m")
    again = bg.load_bundle(tmp_path / "m")
    np.testing.assert_array_equal(bg.reconstruct(again, 0), bg.reconstruct(trained, 0))
    with pytest.raises(FileNotFoundError):
        bg.load_bundle(tmp_path / "missing")


def test_service_handler(trained, tmp_path):
    bg.save_bundle(trained, tmp_path / "m")
    status, body = bg.serve_request(str(tmp_path), "GET", "/models")
    assert status == 200
    models = json.loads(body)
    assert models[0]["model_id"] == "m" and models[0]["K"] == 2
    req = json.dumps({"mode": "sample", "id_map": {"kind": "constant", "k": 0},
                      "noise": "reconstruction", "seed": 4})
    a = bg.serve_request(str(tmp_path), "POST", "/models/m/generate", req)
    b = bg.serve_request(str(tmp_path), "POST", "/models/m/generate", req)
    assert a[0] == 200 and a == b
    assert bg.serve_request(str(tmp_path), "POST", "/models/nope/generate", req)[0] == 404


def test_metrics_closed_form():
    mu = np.zeros(2, np.float32)
    cov = np.eye(2, dtype=np.float32)
    assert bg.frechet_distance(mu, cov, mu + 1, 4 * cov) == pytest.approx(2 + 2, abs=1e-6)
    x = stripes(16, 16, 4)
    assert bg.sifid(x, x) == pytest.approx(0.0, abs=1e-8)
    assert bg.spearman([1, 2, 3], [2, 4, 9]) == pytest.approx(1.0)
