import numpy as np
import pytest

from vitfill import tensor as T
from vitfill.composer import finalize, prefill
from vitfill.generator import g_forward, init_generator, reconstruction_loss

from conftest import grad_rel_error


def test_param_count_and_architecture():
    params = init_generator(3)
    shapes = [params[f"conv{i}.w"].shape for i in range(4)]
    assert shapes == [(32, 4, 3, 3), (64, 32, 3, 3), (32, 64, 3, 3), (3, 32, 3, 3)]
    assert 35_000 < sum(p.size for p in params.values()) < 65_000


@pytest.mark.parametrize("c", [1, 3])
def test_output_shape(c, rng):
    params = init_generator(c, seed=1)
    x = rng.uniform(size=(c, 16, 12)).astype(np.float32)
    m = np.zeros((16, 12), np.float32)
    assert g_forward(x, m, params).shape == (c, 16, 12)
    assert g_forward(x[None], m[None], params).shape == (1, c, 16, 12)


def test_zero_params_reduce_to_prefill(rng):
    params = init_generator(3)
    for p in params.values():
        p.data[:] = 0
    y = rng.uniform(size=(3, 8, 8)).astype(np.float32)
    m = np.zeros((8, 8), np.float32)
    m[2:5, 3:7] = 1
    x_vit = rng.uniform(size=y.shape).astype(np.float32)
    res = g_forward(prefill(x_vit, y, m).x_r, m, params).data
    assert np.all(res == 0)
    assert np.array_equal(finalize(x_vit, y, m, res).y_hat, prefill(x_vit, y, m).x_r)


def test_loss_zero_for_perfect_prediction(rng):
    y = rng.uniform(size=(3, 8, 8))
    m = (rng.uniform(size=(8, 8)) > 0.5).astype(float)
    assert float(reconstruction_loss(y, y, m).data) == 0.0


def test_loss_constant_offset():
    y = np.full((3, 4, 4), 0.3)
    loss = reconstruction_loss(y + 0.1, y, np.ones((4, 4)))
    assert float(loss.data) == pytest.approx(0.01, abs=1e-12)


def test_loss_matches_two_pass_oracle(rng):
    y = rng.uniform(size=(2, 3, 6, 5))
    y_hat = rng.uniform(size=y.shape)
    m = (rng.uniform(size=(2, 6, 5)) > 0.6).astype(float)
    hole = known = 0.0
    n_hole = n_known = 0
    for b in range(2):
        for c in range(3):
            for i in range(6):
                for j in range(5):
                    e = (y_hat[b, c, i, j] - y[b, c, i, j]) ** 2
                    if m[b, i, j]:
                        hole, n_hole = hole + e, n_hole + 1
                    else:
                        known, n_known = known + e, n_known + 1
    expected = hole / n_hole + 0.1 * known / n_known
    assert float(reconstruction_loss(y_hat, y, m, 0.1).data) == pytest.approx(expected, abs=1e-7)


def test_empty_mask_term_is_zero(rng):
    y = rng.uniform(size=(1, 4, 4))
    y_hat = y + 0.2
    assert float(reconstruction_loss(y_hat, y, np.zeros((4, 4)), 0.5).data) == pytest.approx(0.5 * 0.04)
    assert float(reconstruction_loss(y_hat, y, np.zeros((4, 4)), 0.0).data) == 0.0


def test_loss_zero_iff_hole_matches_when_lambda_zero(rng):
    y = rng.uniform(size=(1, 4, 4))
    m = np.zeros((4, 4))
    m[1:3, 1:3] = 1
    y_hat = y.copy()
    y_hat[0, 0, 0] += 0.5  # known pixel differs
    assert float(reconstruction_loss(y_hat, y, m, 0.0).data) == 0.0
    assert float(reconstruction_loss(y_hat, y, m, 0.1).data) > 0.0


@pytest.mark.parametrize("seed", range(20))
def test_generator_loss_gradient(seed):
    r = np.random.default_rng(seed)
    params = init_generator(1, seed=seed, widths=(4, 6, 4))
    for p in params.values():
        p.data = p.data.astype(np.float64) + r.normal(scale=0.1, size=p.shape)
    assert sum(p.size for p in params.values()) <= 5000
    y = r.uniform(size=(1, 8, 8))
    m = np.zeros((8, 8))
    m[2:6, 1:5] = 1
    x_r = T.parameter(prefill(r.uniform(size=y.shape), y, m).x_r)

    def loss():
        res = g_forward(x_r, m, params)
        return reconstruction_loss(T.mul(res, m[None]) + y * (1 - m[None]), y, m, 0.1)

    stats = {}
    err = grad_rel_error(loss, list(params.values()) + [x_r], r, max_coords=30, kink_aware=True, stats=stats)
    assert err < 1e-4
    # coordinates whose +/-h step flips a ReLU are excluded, most must survive
    assert stats["checked"] >= 0.5 * (stats["checked"] + stats["skipped"])


def test_translation_covariance(rng):
    params = init_generator(3, seed=4)
    x = rng.uniform(size=(3, 20, 20)).astype(np.float32)
    m = (rng.uniform(size=(20, 20)) > 0.5).astype(np.float32)
    out = g_forward(x, m, params).data
    shifted = g_forward(np.roll(x, 1, axis=2), np.roll(m, 1, axis=1), params).data
    # four 3x3 layers -> 4-pixel border influence
    assert np.max(np.abs(shifted[:, 5:-5, 6:-5] - out[:, 5:-5, 5:-6])) < 1e-5
