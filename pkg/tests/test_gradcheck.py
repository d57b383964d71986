import numpy as np
import pytest
from oracles import fd_grad, rel_err

from intentfuse import tensor
from intentfuse.gradcheck import (
    TOLERANCE,
    degenerate,
    format_results,
    numeric_grad,
    relative_error,
    run_gradcheck,
    tiny_configs,
)


def test_relative_error_definition():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(np.sqrt(2) / 2)
    a, b = np.array([3.0, 4.0]), np.array([3.0, 4.5])
    assert relative_error(a, b) == pytest.approx(rel_err(a, b), rel=1e-15)


def test_numeric_grad_matches_reference_oracle(rng):
    x = rng.normal(size=(3, 2))
    w = rng.normal(size=(3, 2))

    def f():
        return float(np.sum(np.sin(x) * w))

    np.testing.assert_allclose(numeric_grad(f, x), fd_grad(f, x), atol=1e-12)
    np.testing.assert_allclose(numeric_grad(f, x), np.cos(x) * w, atol=1e-8)


def test_all_strategies_pass_and_stay_small():
    text, vision = tiny_configs()
    results, counts = run_gradcheck(text, vision)
    assert {r.strategy for r in results} == {"early", "late", "intermediate"}
    assert all(n < 5000 for n in counts.values())
    for r in results:
        assert r.passed, format_results([r])
    groups = {(r.strategy, r.group) for r in results}
    assert ("early", "head") in groups and ("intermediate", "vision") in groups


@pytest.mark.parametrize("pooling", ["cls_token"])
def test_other_pooling_passes(pooling):
    text, vision = tiny_configs(pooling=pooling)
    results, _ = run_gradcheck(text, vision, strategies=("intermediate",))
    assert all(r.passed for r in results)


def test_encoder_free_models_pass():
    text, vision = degenerate(*tiny_configs())
    assert text.n_layers == 0 and vision.n_layers == 0
    results, _ = run_gradcheck(text, vision)
    assert all(r.passed for r in results)


def test_broken_backward_is_caught(monkeypatch):
    # negative control: a wrong GELU derivative must be flagged and localised
    real = tensor._gelu_grad
    monkeypatch.setattr(tensor, "_gelu_grad", lambda x: real(x) * 1.5)
    text, vision = tiny_configs()
    results, _ = run_gradcheck(text, vision)
    failed = [r for r in results if not r.passed]
    assert failed
    assert {r.group for r in failed} >= {"text", "vision"}
    assert all(r.max_error >= TOLERANCE for r in failed)
    report = format_results(results)
    assert "FAIL" in report and failed[0].worst_param in report
