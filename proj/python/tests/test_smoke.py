"""End-to-end smoke tests for the python bindings."""

import numpy as np
import pytest

import semd


def test_network_create_and_infer():
    net = semd.Network.create(scale="test", n_decoders=2, seed=7)
    assert net.n_decoders == 2
    assert net.input_size == 32
    assert net.output_size == 64
    assert net.latent_dim == 64
    assert net.parameter_count() > 0

    img = np.zeros((3, 32, 32))
    pts, conf = net.infer(img)
    assert pts.ndim == 2 and pts.shape[1] == 3
    assert conf.shape == (pts.shape[0],)
    if len(conf):
        assert conf.min() >= 0.0 and conf.max() <= 1.0

    # same seed, same input -> identical reconstruction
    pts2, _ = semd.Network.create(scale="test", n_decoders=2, seed=7).infer(img)
    np.testing.assert_array_equal(pts, pts2)


def test_network_save_load_round_trip(tmp_path):
    net = semd.Network.create(scale="test", n_decoders=4, seed=3)
    path = str(tmp_path / "net.semd")
    net.save(path)
    loaded = semd.Network.load(path)
    assert loaded.n_decoders == 4
    img = np.random.default_rng(0).uniform(0, 1, (3, 32, 32))
    a, _ = net.infer(img)
    b, _ = loaded.infer(img)
    np.testing.assert_array_equal(a, b)


def test_metrics_against_numpy():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(40, 3))
    b = rng.normal(size=(50, 3))

    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    assert semd.euclid(a, b) == pytest.approx(d.min(axis=1).mean(), abs=1e-12)
    assert semd.euclid(b, a) == pytest.approx(d.min(axis=0).mean(), abs=1e-12)
    chamfer = (d.min(axis=1) ** 2).sum() + (d.min(axis=0) ** 2).sum()
    assert semd.chamfer(a, b) == pytest.approx(chamfer, abs=1e-9)

    c = rng.normal(size=(16, 3))
    assert semd.euclid(c, c) == 0.0
    assert semd.chamfer(c, c) == 0.0
    assert semd.emd(c, c, exact=True) == 0.0
    assert semd.emd(c, c, exact=False) >= 0.0
    assert semd.emd(a[:16], c, exact=False) >= semd.emd(a[:16], c, exact=True) - 1e-9

    sub = semd.resample(a, 8, seed=2)
    assert sub.shape == (8, 3)


def test_shape_generation_unit_ball():
    for kind in ("cube", "sphere", "cylinder", "torus", "composite"):
        pts = semd.generate_shape(kind, seed=5, surface_count=1000)
        assert pts.shape == (1000, 3)
        norms = np.linalg.norm(pts, axis=1)
        assert norms.max() <= 1.0 + 1e-9
    with pytest.raises(semd.SemdError):
        semd.generate_shape("pyramid")


def test_ply_round_trip(tmp_path):
    pts = np.random.default_rng(4).normal(size=(123, 3))
    path = str(tmp_path / "cloud.ply")
    semd.write_ply(path, pts)
    back = semd.read_ply(path)
    assert back.shape == pts.shape
    np.testing.assert_allclose(back, pts, rtol=1e-6)


def test_training_flow(tmp_path):
    ds = str(tmp_path / "tiny.smdd")
    code = semd.run_cli([
        "gen-data", "--kinds", "cube", "--count", "1", "--seed", "3",
        "--input-size", "32", "--output-size", "64", "--inputs", "2",
        "--supervision", "6", "--surface", "1000", "--dense", "20000",
        "--out", ds,
    ])
    assert code == 0

    net = semd.Network.create(scale="test", n_decoders=2, seed=1)
    plog = semd.pretrain(net, ds, iters=3, batch=2, seed=9)
    assert [r[0] for r in plog] == [0, 1, 2]
    assert all(r[1] == pytest.approx(r[2] + r[3], abs=1e-9) for r in plog)

    flog = semd.finetune(net, ds, iters=2, k=2, batch=2, seed=9)
    assert len(flog) == 2

    report = semd.evaluate(net, ds, n_points=64, seed=0)
    assert report["failures"] == 0
    assert len(report["rows"]) == 1
    row = report["rows"][0]
    assert row["id"] == "cube-0"
    assert row["gt_points"] == 1000
    assert np.isfinite(row["emd"])
    assert report["mean_chamfer"] == pytest.approx(row["chamfer"])


def test_cli_error_paths():
    assert semd.run_cli(["gen-data"]) == 1  # --out is required
    assert semd.run_cli(["infer", "--checkpoint", "/nonexistent.semd",
                         "--azimuth", "0", "--out", "/tmp/x.ply",
                         "--dataset", "/nonexistent.smdd"]) == 2
    with pytest.raises(semd.SemdError):
        semd.Network.create(scale="nope")
