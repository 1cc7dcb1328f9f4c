import dataclasses

import numpy as np
import pytest

from multipose import nn_core as nn
from multipose.model import ModelConfig, PoseNet, StaleCacheError, param_count


def _x(B=2, seed=0):
    return np.random.default_rng(seed).random((B, 64, 64, 3)).astype(np.float32)


def test_output_shape_and_sweep_uses_one_stem_pass(small_config):
    m = PoseNet(small_config)
    assert m.forward(_x()).shape == (2, 16, 16, 5)
    m.stem_calls = 0
    hs = m.sweep(_x(1), 2)
    assert m.stem_calls == 1 and len(hs) == 2 and hs[0].data.shape == (16, 16, 5)


def test_cached_head_equals_full_forward(small_config):
    m = PoseNet(small_config)
    x = _x()
    cache = m.make_cache(x)
    for lam in range(2):
        assert np.array_equal(m.forward_cached(cache, lam).data, m.forward(x, lam).data)
    batch = m.sweep_batch(x)
    assert batch.shape == (2, 2, 16, 16, 5)
    # Selectors share one batched pass, which may round differently from a lone forward.
    np.testing.assert_allclose(batch[:, 1], m.predict(x, 1), atol=1e-6)
    assert np.array_equal(batch, m.sweep_batch(x))


def test_stale_cache_rejected(small_config):
    m = PoseNet(small_config)
    cache = m.make_cache(_x())
    nn.sgd_step(m.store, 0.0)
    with pytest.raises(StaleCacheError):
        m.forward_cached(cache, 0)
    with pytest.raises(StaleCacheError):
        PoseNet(small_config).forward_cached(m.make_cache(_x()), 0)


def test_selector_changes_mipnet_output(small_config):
    m = PoseNet(small_config)
    x = _x()
    assert not np.allclose(m.predict(x, 0), m.predict(x, 1))


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(variant="baseline_n1", N=2)
    with pytest.raises(ValueError):
        ModelConfig(variant="two_heads", N=3)
    with pytest.raises(ValueError):
        ModelConfig(variant="other")
    with pytest.raises(ValueError):
        ModelConfig(mimb_stage_indices=(5,))
    with pytest.raises(nn.ShapeError):
        PoseNet(ModelConfig(stem_widths=(8, 8, 8, 8), mid_widths=(8, 8), up_widths=(4, 4))).forward(
            np.zeros((1, 32, 32, 3)))


def test_baseline_rejects_second_selector(small_config):
    m = PoseNet(dataclasses.replace(small_config, variant="baseline_n1", N=1))
    with pytest.raises(ValueError):
        m.forward(_x(), 1)


@pytest.mark.parametrize("N", [2, 3, 4])
def test_parameter_delta_is_mimb_closed_form(small_config, N):
    mip = PoseNet(dataclasses.replace(small_config, N=N))
    base = param_count(dataclasses.replace(small_config, variant="baseline_n1", N=1))
    assert mip.param_count() - base == mip.mimb_param_count()
    assert mip.mimb_param_count() == sum(m.config.param_count() for m in mip.mimbs.values())


def test_same_seed_same_weights(small_config):
    a, b = PoseNet(small_config), PoseNet(small_config)
    assert all(np.array_equal(a.store[n].data, b.store[n].data) for n in a.store)
    c = PoseNet(dataclasses.replace(small_config, seed=1))
    assert not np.array_equal(a.store["stem.0.weight"].data, c.store["stem.0.weight"].data)


def test_save_load_round_trip(tmp_path, small_config):
    m = PoseNet(small_config)
    m.store.state["adam/t"] = np.asarray(4.0)
    m.save(tmp_path / "m.ckpt", {"epoch": 3})
    back, meta = PoseNet.load(tmp_path / "m.ckpt")
    assert meta["epoch"] == 3 and back.config == m.config
    assert np.array_equal(back.predict(_x(), 1), m.predict(_x(), 1))
    assert float(back.store.state["adam/t"]) == 4.0


def test_continuous_sweep_endpoints_bitwise(small_config):
    m = PoseNet(small_config)
    x = _x(1)
    soft = m.continuous_sweep(x, 5)
    hard = m.sweep(x)
    assert np.array_equal(soft[0].data, hard[0].data)
    assert np.array_equal(soft[-1].data, hard[1].data)
    with pytest.raises(ValueError):
        m.continuous_sweep(x, 1)


def test_two_heads_selects_and_blends(small_config):
    m = PoseNet(dataclasses.replace(small_config, variant="two_heads"))
    x = _x()
    h0, h1 = m.predict(x, 0), m.predict(x, 1)
    mid = m.predict(x, [0.5, 0.5])
    np.testing.assert_allclose(mid, 0.5 * (h0 + h1), rtol=1e-5, atol=1e-6)


def test_forward_slots_backprop_reaches_all_parameters(small_config):
    m = PoseNet(small_config)
    outs = m.forward_slots(_x())
    loss = nn.add(nn.mean(nn.square(outs[0])), nn.mean(nn.square(outs[1])))
    nn.backward(loss, m.store.tensors())
    assert all(t.grad is not None and np.isfinite(t.grad).all() for t in m.store.tensors())
    assert np.abs(m.store["mid.0.mimb.embed.fc1.weight"].grad).sum() > 0
