import numpy as np
import pytest

from conftest import numeric_grad, rel_err, small_spec
from nowcast import autodiff as ad
from nowcast import models, training
from nowcast.errors import ShapeError, ValidationError


def full_grad_check(spec, seed):
    rng = np.random.default_rng(seed)
    model = models.build(spec, seed)
    X = rng.normal(size=(3, spec.seq_len, spec.input_dim))
    y = rng.normal(size=3)
    lam = 0.01

    def f():
        return training.loss(model, (X, y), lam)

    tensors = model.tensors()
    obj = training._loss_graph(spec, tensors, X, y, lam)
    grads = ad.backward(obj)
    worst = 0.0
    for name, t in tensors.items():
        num = numeric_grad(f, model.params[name])
        worst = max(worst, rel_err(grads[t], num))
    return worst


@pytest.mark.parametrize("family", models.FAMILIES)
def test_gradients_match_finite_differences(family):
    for seed in range(3):
        assert full_grad_check(small_spec(family), seed) < 1e-4


def test_build_deterministic():
    spec = small_spec("LSTM")
    a, b = models.build(spec, 3), models.build(spec, 3)
    assert a.to_bytes() == b.to_bytes()
    assert models.build(spec, 4).to_bytes() != a.to_bytes()


def test_save_load_roundtrip(tmp_path):
    m = models.build(small_spec("GRU"), 1)
    path = tmp_path / "m.json"
    m.save(path)
    back = models.Model.load(path)
    assert back.to_bytes() == m.to_bytes()
    x = np.random.default_rng(0).normal(size=(6, 5))
    assert models.forward_nowcast(back, x) == models.forward_nowcast(m, x)


def test_mlp_flattens_bottleneck():
    spec = models.ModelSpec("MLP", 10, 8, 4, (7, 3))
    m = models.build(spec, 0)
    assert m.params["mlp.0.weight"].shape == (7, 32)


def test_elman_shapes():
    spec = models.ModelSpec("RNN", 10, 8, 4, (6,))
    p = models.build(spec, 0).params
    assert p["cell.weight_ih"].shape == (6, 4)
    assert p["cell.weight_hh"].shape == (6, 6)
    assert p["cell.bias_ih"].shape == (6,) and p["cell.bias_hh"].shape == (6,)


def test_cnn_kernel_longer_than_sequence():
    with pytest.raises(ShapeError):
        models.ModelSpec("CNN1D", 10, 2, 4, kernel_size=3)


def test_bottleneck_must_shrink():
    with pytest.raises(ValidationError):
        models.ModelSpec("MLP", 4, 8, 4)


@pytest.mark.parametrize("family", models.FAMILIES)
def test_zero_params_give_head_bias(family):
    m = models.build(small_spec(family), 0)
    for k in m.params:
        m.params[k][...] = 0.0
    m.params["head.bias"][...] = 0.37
    x = np.random.default_rng(1).normal(size=(6, 5))
    assert models.forward_nowcast(m, x) == pytest.approx(0.37, abs=1e-15)


@pytest.mark.parametrize("family", ["MLP", "CNN1D", "RNN", "LSTM", "GRU"])
def test_permuting_time_changes_output(family):
    m = models.build(models.ModelSpec(family, 5, 6, 3), 2)
    x = np.random.default_rng(2).normal(size=(6, 5))
    assert models.forward_nowcast(m, x) != models.forward_nowcast(m, x[::-1])


def test_cnn_feature_maps_constant_in_time():
    m = models.build(small_spec("CNN1D"), 3)
    x = np.tile(np.random.default_rng(3).normal(size=5), (6, 1))
    for fm in models.cnn_feature_maps(m, x):
        np.testing.assert_allclose(fm, np.repeat(fm[..., :1], fm.shape[-1], axis=-1), atol=1e-14)


def test_shape_and_missing_errors():
    m = models.build(small_spec("RNN"), 0)
    with pytest.raises(ShapeError):
        models.forward_nowcast(m, np.zeros((6, 4)))
    x = np.zeros((6, 5))
    x[2, 1] = np.nan
    with pytest.raises(ValidationError):
        models.forward_nowcast(m, x)


@pytest.mark.parametrize("d,h,expect", [(4, 3, 27)])
def test_cell_counts(d, h, expect):
    assert models.cell_param_count("RNN", d, h) == expect
    assert models.cell_param_count("LSTM", d, h) == 4 * expect
    assert models.cell_param_count("GRU", d, h) == 3 * expect


def test_cell_ratios_random():
    rng = np.random.default_rng(9)
    for _ in range(10):
        d, h = (int(v) for v in rng.integers(1, 50, size=2))
        e = models.cell_param_count("RNN", d, h)
        assert models.cell_param_count("GRU", d, h) == 3 * e
        assert models.cell_param_count("LSTM", d, h) == 4 * e


def test_param_count_matches_arrays():
    for fam in models.FAMILIES:
        m = models.build(small_spec(fam), 0)
        counts = models.param_count(m)
        assert counts["total"] == sum(v.size for v in m.params.values())
        if fam in models.RECURRENT:
            assert sum(counts["gates"].values()) == counts["cell"]


@pytest.mark.parametrize("family", models.FAMILIES)
def test_bottleneck_shared_across_timesteps(family):
    """Perturbing one encoder weight moves the embedding at every timestep."""
    m = models.build(small_spec(family), 4)
    x = np.random.default_rng(4).normal(size=(6, 5)) + 1.0
    w = m.params["bottleneck.weight"]
    z0 = x @ w.T
    w[0, 0] += 0.1
    z1 = x @ w.T
    assert np.all(np.abs(z1[:, 0] - z0[:, 0]) > 0)
    out = models.forward_graph(m.spec, m.tensors(), ad.Tensor(x[None]))
    assert out.shape == (1,)


def test_elman_zero_fixed_point():
    spec = small_spec("RNN")
    m = models.build(spec, 5)
    for k in ("bottleneck.bias", "cell.bias_ih", "cell.bias_hh"):
        m.params[k][...] = 0.0
    p = m.tensors()
    z = ad.Tensor(np.zeros((1, spec.seq_len, spec.bottleneck_dim)))
    h = models._recurrent("RNN", spec.cell_size, p, z, 1, spec.seq_len)
    np.testing.assert_array_equal(h.data, 0.0)
