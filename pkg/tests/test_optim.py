import numpy as np
import pytest

from models.optim import OptimState, adam_step
from utils.errors import ShapeError


def test_first_step_moves_by_learning_rate():
    params = {"w": np.array([1.0, -2.0, 3.0])}
    grads = {"w": np.array([0.5, -4.0, 1e-3])}
    state = OptimState(lr=0.1)
    updated = adam_step(params, grads, state)
    # Bias-corrected first step is lr * sign(g) up to eps.
    np.testing.assert_allclose(updated["w"], [0.9, -1.9, 2.9], atol=1e-4)
    assert state.step == 1
    assert params["w"].tolist() == [1.0, -2.0, 3.0]


def test_matches_reference_recurrence():
    rng = np.random.default_rng(0)
    value = rng.standard_normal(4)
    state = OptimState(lr=0.01)
    m = v = np.zeros(4)
    expected = value.copy()
    params = {"p": value}
    for t in range(1, 6):
        g = rng.standard_normal(4)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        expected = expected - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        params = adam_step(params, {"p": g}, state)
    np.testing.assert_allclose(params["p"], expected, rtol=1e-12)


def test_zero_gradient_is_a_no_op():
    state = OptimState()
    updated = adam_step({"b": np.ones(3)}, {"b": np.zeros(3)}, state)
    assert updated["b"].tolist() == [1.0, 1.0, 1.0]


def test_matches_torch_adam():
    torch = pytest.importorskip("torch")
    rng = np.random.default_rng(3)
    start = rng.standard_normal((2, 3))
    target = torch.nn.Parameter(torch.tensor(start))
    opt = torch.optim.Adam([target], lr=0.05, betas=(0.9, 0.999), eps=1e-8)
    params, state = {"w": start.copy()}, OptimState(lr=0.05)
    for _ in range(4):
        g = rng.standard_normal((2, 3))
        opt.zero_grad()
        target.grad = torch.tensor(g)
        opt.step()
        params = adam_step(params, {"w": g}, state)
    np.testing.assert_allclose(params["w"], target.detach().numpy(), rtol=1e-10, atol=1e-12)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step({"w": np.zeros(3)}, {"w": np.zeros(4)}, OptimState())
