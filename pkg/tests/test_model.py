import math

import numpy as np
import pytest

from scenesound import model as mdl
from scenesound.nn import ops


@pytest.fixture(scope="module")
def full_params():
    # Small event vocabulary keeps the full geometry while cutting memory.
    return mdl.init_params(mdl.Architecture(n_events=5), seed=0)


def test_full_shapes(full_params):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((64, 500))
    ev, sc, _ = mdl.forward(X, full_params)
    assert ev.shape == (5, 500)
    assert ((ev > 0) & (ev < 1)).all()
    assert sc.shape == (4,)
    assert abs(sc.sum() - 1.0) < 1e-9


def test_full_pooling_chain():
    arch = mdl.FULL
    f = arch.n_mels
    chain = [f]
    for pool in arch.shared_pool:
        f //= pool
        chain.append(f)
    assert chain == [64, 8, 2, 1]
    assert arch.scene_flat == 16 * 10


def test_shared_output_is_one_bin(full_params):
    cache = mdl.forward(np.zeros((64, 500)), full_params)[2]
    assert cache.gru[0] == (1, 500, 128)
    assert cache.scene_flat[0] == (1, 16, 1, 10)


def test_zero_input_gives_bias_sigmoid():
    p = mdl.init_params(mdl.TINY, seed=1)
    p.tensors["event_out.b"][:] = [0.3, -1.0, 2.0]
    ev, sc, _ = mdl.forward(np.zeros((8, 8)), p)
    np.testing.assert_allclose(ev, ops.sigmoid(np.array([0.3, -1.0, 2.0]))[:, None] * np.ones((1, 8)), atol=1e-15)
    np.testing.assert_allclose(sc, [0.5, 0.5], atol=1e-15)


def test_batched_matches_single(tiny_params, rng):
    X = rng.standard_normal((3, 8, 8))
    ev, sc, _ = mdl.forward(X, tiny_params)
    for b in range(3):
        e1, s1, _ = mdl.forward(X[b], tiny_params)
        np.testing.assert_allclose(ev[b], e1, atol=1e-14)
        np.testing.assert_allclose(sc[b], s1, atol=1e-14)


def test_wrong_input_shape(tiny_params):
    with pytest.raises(ValueError, match="expected input"):
        mdl.forward(np.zeros((8, 9)), tiny_params)


def test_architecture_validation():
    with pytest.raises(ValueError, match="collapse"):
        mdl.Architecture(shared_pool=(8, 4, 1))
    with pytest.raises(ValueError, match="divisible"):
        mdl.Architecture(n_frames=510)


def test_init_within_glorot_bounds():
    p = mdl.init_params(mdl.DESK, seed=7)
    for name, t in p.tensors.items():
        if t.ndim == 1:
            assert not t.any(), name
            continue
        if t.ndim == 4:
            fan_in, fan_out = t.shape[1] * t.shape[2] * t.shape[3], t.shape[0] * t.shape[2] * t.shape[3]
        else:
            fan_in, fan_out = t.shape[1], t.shape[0]
        assert np.abs(t).max() <= math.sqrt(6 / (fan_in + fan_out)), name


def test_init_deterministic():
    assert mdl.init_params(mdl.TINY, seed=4).digest() == mdl.init_params(mdl.TINY, seed=4).digest()
    assert mdl.init_params(mdl.TINY, seed=4).digest() != mdl.init_params(mdl.TINY, seed=5).digest()


def test_predict_events_threshold():
    roll = mdl.predict_events(np.array([[0.2, 0.5, 0.9]]), 0.5)
    assert roll.tolist() == [[0, 1, 1]]
    with pytest.raises(ValueError):
        mdl.predict_events(np.zeros((1, 1)), 1.5)


def test_predict_scene_shift_invariant(rng):
    logits = rng.standard_normal((10, 4))
    a = mdl.predict_scene(ops.softmax(logits, axis=-1))
    b = mdl.predict_scene(ops.softmax(logits + 17.0, axis=-1))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, logits.argmax(axis=1))


def test_normalization_buffers(tiny_params, rng):
    X = rng.standard_normal((8, 8)) * 3 + 2
    p = tiny_params.copy()
    p.buffers = {"feature_mean": np.full(8, 2.0), "feature_std": np.full(8, 3.0)}
    np.testing.assert_allclose(mdl.forward(X, p)[0], mdl.forward((X - 2) / 3, tiny_params)[0], atol=1e-14)


def test_stale_cache_rejected(tiny_params, rng):
    p = tiny_params.copy()
    ev, _, cache = mdl.forward(rng.standard_normal((8, 8)), p)
    p.version += 1
    with pytest.raises(RuntimeError, match="stale"):
        mdl.backward(cache, np.zeros_like(ev))


def test_checkpoint_roundtrip(tmp_path, tiny_params):
    p = tiny_params.copy()
    p.buffers = {"feature_mean": np.arange(8.0), "feature_std": np.ones(8)}
    path = tmp_path / "m.ckpt"
    mdl.save_checkpoint(path, p, {"events": "a,b,c", "threshold": 0.5})
    q, meta = mdl.load_checkpoint(path)
    assert q.arch == p.arch
    assert q.digest() == p.digest()
    np.testing.assert_array_equal(q.buffers["feature_mean"], p.buffers["feature_mean"])
    assert meta == {"events": "a,b,c", "threshold": "0.5"}
    head = path.read_bytes().split(b"\n\n", 1)[0].decode()
    assert head.splitlines()[0] == "format_version=1"
    assert any(line.startswith("param=shared0.kernels;4x1x3x1;<f8;0") for line in head.splitlines())


def test_checkpoint_float32(tmp_path, tiny_params):
    p = tiny_params.astype(np.float32)
    mdl.save_checkpoint(tmp_path / "m.ckpt", p)
    q, _ = mdl.load_checkpoint(tmp_path / "m.ckpt")
    assert q.dtype == np.float32 and q.digest() == p.digest()


def test_checkpoint_truncated(tmp_path, tiny_params):
    path = tmp_path / "m.ckpt"
    mdl.save_checkpoint(path, tiny_params)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError, match="truncated"):
        mdl.load_checkpoint(path)


def test_checkpoint_bad_version(tmp_path, tiny_params):
    path = tmp_path / "m.ckpt"
    mdl.save_checkpoint(path, tiny_params)
    path.write_bytes(path.read_bytes().replace(b"format_version=1", b"format_version=9", 1))
    with pytest.raises(ValueError, match="format_version"):
        mdl.load_checkpoint(path)
