import numpy as np
import pytest

from igmmgan import bigan as B
from igmmgan.nn import DimensionError


@pytest.fixture
def model(tiny_config):
    return B.BiGANModel(tiny_config)


def data(rng, n=40):
    return rng.normal(size=(n, 4, 4))


def test_shapes(model, rng):
    x = data(rng, 7)
    z = model.encode(x)
    assert z.shape == (7, 3)
    assert model.generate(z).shape == (7, 4, 4)
    assert model.generate(z, flat=True).shape == (7, 16)
    assert model.discriminate(x, z).shape == (7,)


def test_encode_is_deterministic_in_eval(model, rng):
    x = data(rng, 5)
    np.testing.assert_array_equal(model.encode(x), model.encode(x))


def test_zero_initialized_head_gives_half(model, rng):
    x = data(rng, 6)
    np.testing.assert_array_equal(model.discriminate(x, rng.normal(size=(6, 3))), 0.5)


def test_dimension_errors(model, rng):
    with pytest.raises(DimensionError):
        model.encode(rng.normal(size=(3, 15)))
    with pytest.raises(DimensionError):
        model.generate(rng.normal(size=(3, 2)))
    with pytest.raises(DimensionError):
        model.discriminate(data(rng, 3), rng.normal(size=(4, 3)))


def test_discriminator_step_leaves_encoder_and_generator_alone(model, rng, monkeypatch):
    before = {k: v.copy() for k, v in model.ge_params.state_dict().items()}
    d_before = {k: v.copy() for k, v in model.d_params.state_dict().items()}
    monkeypatch.setattr(model.ge_opt, "step", lambda: None)
    model.train_step(data(rng, 16), rng)
    for p in model.ge_params.trainable():
        np.testing.assert_array_equal(p.value, before[p.name])
    assert any(not np.array_equal(p.value, d_before[p.name]) for p in model.d_params.trainable())


def test_d_loss_at_init_is_two_log_two(model, rng):
    d, _, _ = model.train_step(data(rng, 16), rng)
    assert d == pytest.approx(2 * np.log(2), rel=1e-12)


def test_reconstruction_only_training_reduces_loss(rng):
    cfg = B.BiGANConfig(latent_dim=4, data_shape=(8,), encoder=[[16, False]], generator=[[16, False]],
                        disc_x=[[8, False]], disc_z=[[4, False]], adv_weight=0.0, batch_size=16,
                        total_steps=300, lr=1e-2, seed=0)
    x = rng.uniform(-1, 1, size=(32, 8))
    m = B.train_bigan(cfg, x)
    assert m.history[-1][3] < 0.5 * m.history[0][3]


def test_train_rejects_tainted_and_unnormalized(tiny_config, rng):
    with pytest.raises(B.DataLeakError):
        B.train_bigan(tiny_config, B.taint(data(rng)))
    with pytest.raises(ValueError, match="normalized"):
        B.train_bigan(tiny_config, 100 * data(rng))
    with pytest.raises(ValueError):
        B.train_bigan(tiny_config, np.zeros((0, 4, 4)))


def test_taint_survives_slicing_and_encoding(model, rng):
    x = B.taint(data(rng, 6))
    assert B.is_tainted(x[1:3])
    assert B.is_tainted(x * 2)
    assert B.is_tainted(model.encode(x))
    assert not B.is_tainted(model.encode(np.asarray(data(rng, 2))))


def test_training_is_seed_deterministic(tiny_config, rng):
    x = data(rng)
    a = B.train_bigan(tiny_config, x)
    b = B.train_bigan(tiny_config, x)
    assert a.history == b.history
    for k, v in a.state_dict().items():
        np.testing.assert_array_equal(v, b.state_dict()[k])


def test_save_load_bitwise(tiny_config, rng, tmp_path):
    m = B.train_bigan(tiny_config, data(rng))
    m.save(tmp_path)
    m2 = B.BiGANModel.load(tmp_path)
    x = data(rng, 9)
    np.testing.assert_array_equal(m.encode(x), m2.encode(x))
    np.testing.assert_array_equal(m.discriminate(x, m.encode(x)), m2.discriminate(x, m2.encode(x)))


def test_checkpoints(tiny_config, rng, tmp_path):
    tiny_config.checkpoint_every = 2
    B.train_bigan(tiny_config, data(rng), checkpoint_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["step_000002", "step_000004"]


def test_config_round_trip_and_unknown_keys(tiny_config):
    assert B.BiGANConfig.from_dict(tiny_config.to_dict()) == tiny_config
    with pytest.raises(ValueError, match="unknown"):
        B.BiGANConfig.from_dict({"latent": 3})
    with pytest.raises(ValueError):
        B.BiGANConfig(batch_size=1)


def test_preset_widths():
    cfg = B.mnist_preset()
    assert cfg.latent_dim == 100 and cfg.lr == 1e-5 and cfg.beta1 == 0.5
    assert [w for w, _ in cfg.encoder] == [768, 32, 64, 128]
