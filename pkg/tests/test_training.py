import numpy as np
import pytest

import varsolve.training as training
from varsolve.errors import ConfigError, DegenerateNetwork, NumericFailure
from varsolve.network import ResNetConfig, init_params
from varsolve.problems import Family, ProblemSpec
from varsolve.sampling import make_streams
from varsolve.training import TrainConfig, run_aldl, run_pmdl, run_sgda, train

TINY = dict(width=8, depth=2, multiplier_width=6, multiplier_depth=1, batch_interior=32,
            boundary_points_per_face=8, grid_h=0.125, oracle_n=16)


def series(result):
    return [{k: v for k, v in r.as_row().items() if k != "wall_s"} for r in result.records]


def test_zero_epochs_returns_initial_network():
    cfg = TrainConfig(epochs=0, seed=3, **TINY)
    result = run_aldl(cfg)
    assert len(result.records) == 1 and result.adam_steps == 0
    expected = init_params(ResNetConfig(2, 8, 2), make_streams(3)["init_primal"])
    np.testing.assert_array_equal(result.theta_u, expected)


def test_beta_schedule_and_budget():
    cfg = TrainConfig(epochs=3, epochs_u=4, epochs_lambda=2, alpha=2.0, beta=5.0, **TINY)
    result = run_aldl(cfg)
    assert [r.beta for r in result.records] == [5.0, 5.0, 10.0, 20.0]
    assert result.adam_steps == 3 * (4 + 2)
    assert result.beta_final == 20.0
    const = run_aldl(cfg.replace(alpha=1.0))
    assert {r.beta for r in const.records} == {5.0}


def test_determinism():
    cfg = TrainConfig(epochs=2, epochs_u=5, epochs_lambda=5, seed=11, **TINY)
    assert series(run_aldl(cfg)) == series(run_aldl(cfg))


def test_aldl_reduces_to_pmdl():
    steps = []
    cfg = TrainConfig(epochs=4, epochs_u=10, epochs_lambda=0, multiplier_init="zero",
                      evaluate=False, seed=2, **TINY)
    run_aldl(cfg, callback=lambda s, th: steps.append(th.copy()))
    other = []
    run_pmdl(cfg.replace(method="pmdl", pmdl_steps=40, eval_every=10),
             callback=lambda s, th: other.append(th.copy()))
    assert len(steps) == len(other) == 40
    for a, b in zip(steps, other):
        np.testing.assert_array_equal(a, b)


def test_frozen_sgda_is_pmdl():
    cfg = TrainConfig(method="sgda", epochs=2, epochs_u=10, epochs_lambda=10,
                      multiplier_init="zero", sgda_ascent_scale=0.0, evaluate=False, **TINY)
    a, b = [], []
    res = run_sgda(cfg, callback=lambda s, th: a.append(th.copy()))
    run_pmdl(cfg.replace(method="pmdl", pmdl_steps=20), callback=lambda s, th: b.append(th.copy()))
    assert res.adam_steps == 40
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_eval_cadence():
    res = run_pmdl(TrainConfig(method="pmdl", pmdl_steps=25, eval_every=10, **TINY))
    assert [r.epoch for r in res.records] == [0, 10, 20, 25]


@pytest.mark.parametrize("problem", ["eigen2d", "gp2d"])
def test_eigen_families_run(problem):
    res = train(TrainConfig(problem=problem, epochs=2, epochs_u=5, epochs_lambda=5, **TINY))
    assert res.final.rho_rel_err is not None and res.final.err_rel_in is None


def test_exact_boundary_reference_run():
    res = train(TrainConfig(problem="gp2d", method="refnet", pmdl_steps=5, **TINY))
    assert res.final.err_abs_bd < 1e-12


@pytest.mark.parametrize("changes,key", [
    (dict(method="adam"), "method"), (dict(beta=-1.0), "beta"), (dict(alpha=0.5), "alpha"),
    (dict(epochs_u=-1), "epochs_u"), (dict(problem="nope"), "problem"),
    (dict(multiplier_sign="both"), "multiplier_sign"), (dict(batch_interior=0), "batch_interior"),
])
def test_config_validation(changes, key):
    with pytest.raises(ConfigError) as info:
        TrainConfig(**changes)
    assert info.value.key == key


def test_numeric_failure_carries_indices(monkeypatch):
    bad = ProblemSpec("bad", Family.ELLIPTIC, 2, f=lambda X: np.where(X[:, 0] > 0.0, np.nan, 0.0))
    real = training.builtin
    monkeypatch.setattr(training, "builtin", lambda name: bad if name == "bad" else real(name))
    cfg = TrainConfig(problem="bad", epochs=2, epochs_u=3, epochs_lambda=1, evaluate=False, **TINY)
    with pytest.raises(NumericFailure) as info:
        run_aldl(cfg)
    assert info.value.outer == 0 and info.value.inner == 0
    assert "phase=primal" in str(info.value)


def test_degenerate_batch_redrawn_once(monkeypatch):
    calls = {"n": 0}
    real = training.value_and_grad

    def flaky(fn, params, index=None):
        calls["n"] += 1
        if calls["n"] == 1:
            raise DegenerateNetwork("zero norm")
        return real(fn, params, index)

    monkeypatch.setattr(training, "value_and_grad", flaky)
    res = run_pmdl(TrainConfig(method="pmdl", pmdl_steps=2, evaluate=False, **TINY))
    assert res.adam_steps == 2

    def always(fn, params, index=None):
        raise DegenerateNetwork("zero norm")

    monkeypatch.setattr(training, "value_and_grad", always)
    with pytest.raises(DegenerateNetwork):
        run_pmdl(TrainConfig(method="pmdl", pmdl_steps=2, evaluate=False, **TINY))


def test_adam_reset_keeps_lr_schedule():
    cfg = TrainConfig(epochs=4, epochs_u=5, epochs_lambda=3, lr_decay_total_steps=10,
                      adam_reset=True, **TINY)
    steps = []
    res = run_aldl(cfg, callback=lambda s, th: steps.append(s))
    assert steps == list(range(1, 21))
    lrs = [r.lr for r in res.records]
    assert all(b < a for a, b in zip(lrs, lrs[1:]))
    assert lrs[-1] == pytest.approx(lrs[0] * 0.01 ** 2)
