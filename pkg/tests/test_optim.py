import math

import numpy as np
import pytest

from datforge.errors import ShapeMismatch
from datforge.optim import AdamState, adam_step


def test_one_step_matches_hand_oracle():
    p = {"w": np.array([1.0, -2.0, 0.5])}
    g = {"w": np.array([0.1, -0.3, 0.0])}
    lr, wd = 0.01, 0.1
    out = adam_step(AdamState(), p, g, lr, wd)["w"]
    expect = []
    for x, gi in zip([1.0, -2.0, 0.5], [0.1, -0.3, 0.0]):
        m_hat = (0.1 * gi) / (1 - 0.9)
        v_hat = (0.001 * gi * gi) / (1 - 0.999)
        expect.append(x * (1 - lr * wd) - lr * m_hat / (math.sqrt(v_hat) + 1e-8))
    assert out.tolist() == pytest.approx(expect, abs=1e-15)
    # first step moves each coordinate by ~lr against its gradient sign
    assert out[0] == pytest.approx(1.0 * 0.999 - 0.01, abs=1e-9)


def test_two_steps_bias_correction():
    state = AdamState()
    p = {"w": np.array([0.0])}
    p = adam_step(state, p, {"w": np.array([1.0])}, 0.1)
    p = adam_step(state, p, {"w": np.array([1.0])}, 0.1)
    # constant gradient: m_hat = v_hat = 1 every step
    assert p["w"][0] == pytest.approx(-0.2, abs=1e-7)
    assert state.t == 2


def test_dtype_preserved_and_missing_grads():
    p = {"a": np.ones(2, np.float32), "b": np.ones(2, np.float32)}
    out = adam_step(AdamState(), p, {"a": np.ones(2)}, 0.1)
    assert out["a"].dtype == np.float32
    assert out["b"] is p["b"]
    with pytest.raises(ShapeMismatch):
        adam_step(AdamState(), p, {"a": np.ones(3)}, 0.1)


def test_zero_grads():
    p = {"w": np.array([1.5, -0.25])}
    z = {"w": np.zeros(2)}
    assert adam_step(AdamState(), p, z, 0.1)["w"].tolist() == [1.5, -0.25]
    shrunk = adam_step(AdamState(), p, z, 0.1, weight_decay=0.01)["w"]
    assert shrunk.tolist() == pytest.approx([1.5 * (1 - 0.001), -0.25 * (1 - 0.001)], abs=1e-15)
