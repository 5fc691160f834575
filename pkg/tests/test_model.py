import json

import numpy as np
import pytest

from robustedit.dataset import generate_knowledge_base
from robustedit.errors import ParseError, ShapeError
from robustedit.model import (
    BLOCKS,
    ModelDims,
    ToyMultimodalModel,
    cross_entropy,
    load_model,
    save_model,
    train_base,
)


def zero_model(dims=None):
    m = ToyMultimodalModel(dims, seed=0)
    for v in m.params.values():
        v[...] = 0.0
    return m


def test_default_dims():
    d = ToyMultimodalModel().dims
    assert (d.d_v, d.d_t, d.d_e, d.d_h, d.n_classes) == (16, 16, 12, 24, 10)
    with pytest.raises(ShapeError):
        ModelDims(d_h=1)


def test_init_bounds():
    m = ToyMultimodalModel(seed=11)
    for block, (fan_out, fan_in) in m.dims.block_shapes().items():
        assert np.max(np.abs(m.W(block))) <= 1 / np.sqrt(fan_in)


def test_encode_zero_and_deterministic(rng):
    m = zero_model()
    lat = m.encode(np.zeros(16), np.zeros(16))
    assert not lat.z.any()
    m = ToyMultimodalModel(seed=2)
    x_v, x_t = rng.standard_normal(16), rng.standard_normal(16)
    a, b = m.encode(x_v, x_t), m.encode(x_v, x_t)
    assert a.z.tobytes() == b.z.tobytes()
    np.testing.assert_array_equal(a.z, np.concatenate([a.e_v, a.e_t]))


def test_encode_tanh_bound(rng):
    m = ToyMultimodalModel(seed=4)
    z = m.encode(rng.standard_normal((50, 16)) * 10, rng.standard_normal((50, 16)) * 10).z
    max_bias = max(np.max(np.abs(m.b("enc_v"))), np.max(np.abs(m.b("enc_t"))))
    assert np.max(np.abs(z)) <= 1 + max_bias


def test_encode_shape_error():
    with pytest.raises(ShapeError):
        ToyMultimodalModel().encode(np.zeros(15), np.zeros(16))


def test_forward_zero_model(rng):
    assert not zero_model().forward_from_latent(rng.standard_normal(24)).any()


def test_forward_composition_and_head_consistency(rng):
    m = ToyMultimodalModel(seed=1)
    x_v, x_t = rng.standard_normal(16), rng.standard_normal(16)
    z = m.encode(x_v, x_t).z
    np.testing.assert_array_equal(m(x_v, x_t), m.forward_from_latent(z))
    np.testing.assert_array_equal(m.head(m.hidden_at_edit_layer(z)), m.forward_from_latent(z))


def test_hidden_identity_edit_zero_input():
    m = zero_model()
    m.params["edit.W"][...] = np.eye(24)
    assert not m.hidden_at_edit_layer(np.zeros(24)).any()


def test_hidden_continuity(rng):
    m = ToyMultimodalModel(seed=1)
    z = rng.standard_normal(24)
    assert np.max(np.abs(m.hidden_at_edit_layer(z) - m.hidden_at_edit_layer(z + 1e-16))) <= 1e-12


def test_forward_lipschitz_bound(rng):
    m = ToyMultimodalModel(seed=9)
    bound = m.lipschitz_bound()
    eps = 1e-2
    for _ in range(200):
        z = rng.uniform(-1, 1, 24)
        d = rng.standard_normal(24)
        d *= eps / np.linalg.norm(d)
        assert np.linalg.norm(m.forward_from_latent(z + d) - m.forward_from_latent(z)) <= bound * eps


def test_forward_cache_replays_bit_exactly(rng):
    m = ToyMultimodalModel(seed=1)
    z = rng.standard_normal((3, 24))
    assert m.forward_cache(z).logits.tobytes() == m.forward_from_latent(z).tobytes()


def test_cross_entropy_uniform():
    loss, grad = cross_entropy(np.zeros(10), 3)
    assert loss == pytest.approx(np.log(10), abs=1e-12)
    assert grad[3] == pytest.approx(0.1 - 1)


def test_train_base_separable():
    kb = generate_knowledge_base(n_units=2, m_variants=4, noise_scale=0.05, seed=0)
    _, acc = train_base(ToyMultimodalModel(seed=0), kb, epochs=50, lr=1e-2)
    assert acc == 1.0


def test_train_zero_epochs_and_determinism():
    kb = generate_knowledge_base(n_units=4, m_variants=3, seed=1)
    m = ToyMultimodalModel(seed=5)
    before = m.fingerprint()
    train_base(m, kb, epochs=0)
    assert m.fingerprint() == before
    a, _ = train_base(ToyMultimodalModel(seed=5), kb, epochs=20, seed=1)
    b, _ = train_base(ToyMultimodalModel(seed=5), kb, epochs=20, seed=1)
    assert a.fingerprint() == b.fingerprint()


def test_checkpoint_round_trip_bit_exact(tmp_path):
    m = ToyMultimodalModel(seed=21)
    m.params["edit.b"][0] = 0.1 + 0.2  # not exactly representable in 17 digits cleanly
    path = tmp_path / "m.json"
    save_model(m, path)
    loaded = load_model(path)
    assert loaded.dims == m.dims and loaded.seed == m.seed
    for block in BLOCKS:
        for kind in ("W", "b"):
            key = f"{block}.{kind}"
            assert loaded.params[key].tobytes() == m.params[key].tobytes()
    data = json.loads(path.read_text())
    assert set(data) == {"dims", "seed", "params"}


def test_checkpoint_parse_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"dims": ')
    with pytest.raises(ParseError):
        load_model(bad)
    bad.write_text('{"seed": 0}')
    with pytest.raises(ParseError):
        load_model(bad)
