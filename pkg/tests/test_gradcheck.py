import numpy as np
import pytest

from tempodet import gradcheck as G
from tempodet.net3d import layers


def test_relative_error_floor():
    assert G.relative_error(0.0, 0.0) == 0.0
    assert G.relative_error(1e-9, 2e-9) == pytest.approx(1e-3)
    assert G.relative_error(2.0, 1.0) == 0.5


def test_numeric_gradient_of_quadratic():
    x = np.array([1.0, -2.0, 3.0])
    g = G.numeric_gradient(lambda: float(np.sum(x ** 2)), x)
    np.testing.assert_allclose(g, 2 * x, atol=1e-8)
    assert np.array_equal(x, [1.0, -2.0, 3.0])


@pytest.mark.parametrize("seed", [0, 3])
def test_all_checks_pass(seed):
    results = G.run_gradcheck(seed)
    assert len(results) == 11
    assert all(r.passed for r in results), G.format_table(results)
    net = results[-1]
    assert net.op == "network_five_loss" and net.checked > net.skipped


def test_corrupted_backward_is_caught(monkeypatch):
    good = layers.conv3d_backward

    def bad(*args, **kw):
        grads = good(*args, **kw)
        return tuple(None if g is None else g * 1.01 for g in grads)

    monkeypatch.setattr(layers, "conv3d_backward", bad)
    results = {r.op: r for r in G.run_gradcheck(0)}
    assert not results["conv3d"].passed
    assert not results["network_five_loss"].passed


def test_table_lists_every_op():
    results = [G.CheckResult("relu", 10, 1e-9, 1e-4), G.CheckResult("conv3d", 5, 1e-2, 1e-4)]
    table = G.format_table(results)
    assert "relu" in table and "PASS" in table and "FAIL" in table
