import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import linear_model
from tradeslab.attacks import (
    AttackConfig, fgsm, label_objective, pairwise_objective, pgd_label, pgd_pairwise, predict_labels, project, sign,
    transfer_attack,
)
from tradeslab.errors import DimensionError
from tradeslab.ndcore import build_layers, forward, init_model


def test_sign_of_zero_is_plus_one():
    assert np.array_equal(sign(np.array([-2.0, 0.0, 3.0])), [-1.0, 1.0, 1.0])


def test_project_linf_and_l2_examples():
    assert np.allclose(project(np.array([[0.25, -0.5]]), np.zeros((1, 2)), 0.1), [[0.1, -0.1]])
    assert np.allclose(project(np.array([[3.0, 4.0]]), np.zeros((1, 2)), 1.0, "l2"), [[0.6, 0.8]])
    inside = np.array([[0.01, 0.02]])
    assert np.array_equal(project(inside, np.zeros((1, 2)), 0.1, "l2"), inside)
    with pytest.raises(DimensionError):
        project(np.zeros((1, 2)), np.zeros((1, 3)), 0.1)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(-10, 10)), arrays(np.float64, (4, 3), elements=st.floats(-10, 10)),
       st.floats(0, 3), st.sampled_from(["linf", "l2"]))
def test_projection_lands_in_ball_and_is_idempotent(x, c, eps, norm):
    p = project(x, c, eps, norm)
    d = p - c
    size = np.abs(d).max(axis=1) if norm == "linf" else np.linalg.norm(d, axis=1)
    assert np.all(size <= eps * (1 + 1e-12) + 1e-12)
    assert np.allclose(project(p, c, eps, norm), p, atol=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(epsilon=0.1, step_eta1=0.5)
    AttackConfig(epsilon=0.1, step_eta1=0.5, allow_large_step=True)
    with pytest.raises(ValueError):
        AttackConfig(epsilon=-1)
    with pytest.raises(ValueError):
        AttackConfig(norm="l1")


def test_fgsm_on_linear_model_hits_closed_form(rng):
    w = rng.standard_normal(4)
    model = linear_model(w, 0.3)
    x = rng.standard_normal((10, 4))
    y = np.where(rng.random(10) < 0.5, -1, 1)
    adv = fgsm(model, x, y, loss="hinge", epsilon=0.2)
    margin = y * forward(model, adv.perturbed)[:, 0]
    clean = y * forward(model, x)[:, 0]
    # hinge has zero slope once the margin exceeds 1; only points with margin < 1 move
    moving = clean < 1
    assert np.allclose(margin[moving], clean[moving] - 0.2 * np.abs(w).sum(), atol=1e-12)


def test_pgd_on_linear_model_reaches_worst_case_margin(rng):
    for _ in range(20):
        d = int(rng.integers(1, 6))
        w = rng.standard_normal(d)
        model = linear_model(w, rng.standard_normal())
        x = rng.standard_normal((8, d))
        y = np.where(rng.random(8) < 0.5, -1, 1)
        adv = pgd_label(model, x, y, AttackConfig(epsilon=0.1, step_eta1=0.01, iters_K=20))
        worst = y * forward(model, x)[:, 0] - 0.1 * np.abs(w).sum()
        assert np.allclose(y * forward(model, adv.perturbed)[:, 0], worst, atol=1e-6)


def test_pgd_keeps_best_iterate_and_respects_bounds(rng):
    model = init_model(build_layers(2, (16,), 3), rng)
    x = rng.uniform(0, 1, (20, 2))
    y = rng.integers(0, 3, 20)
    cfg = AttackConfig(epsilon=0.3, step_eta1=0.1, iters_K=10)
    adv = pgd_label(model, x, y, cfg, bounds=(0.0, 1.0))
    clean_loss = label_objective(model)(forward(model, x), y)[0]
    assert np.all(adv.achieved_loss >= clean_loss - 1e-12)
    assert np.all((adv.perturbed >= 0) & (adv.perturbed <= 1))
    assert np.all(np.abs(adv.perturbed - x) <= 0.3 + 1e-12)


def test_pgd_with_zero_steps_is_identity(rng):
    model = init_model(build_layers(2, (4,), 1), rng)
    x = rng.standard_normal((5, 2))
    adv = pgd_label(model, x, np.ones(5), AttackConfig(iters_K=0))
    assert np.array_equal(adv.perturbed, x)


def test_pairwise_attack_is_seeded_and_increases_divergence(rng):
    model = init_model(build_layers(2, (16,), 3), rng)
    x = rng.standard_normal((30, 2))
    cfg = AttackConfig(epsilon=0.5, step_eta1=0.1, iters_K=10, seed=3)
    a = pgd_pairwise(model, x, cfg)
    b = pgd_pairwise(model, x, cfg)
    assert np.array_equal(a.perturbed, b.perturbed)
    start = pgd_pairwise(model, x, AttackConfig(epsilon=0.5, step_eta1=0.1, iters_K=0, seed=3))
    assert a.achieved_loss.mean() > start.achieved_loss.mean()
    assert np.all(np.abs(a.perturbed - x) <= 0.5 + 1e-12)


def test_pairwise_zero_sigma_warns(rng):
    model = init_model(build_layers(2, (4,), 2), rng)
    with pytest.warns(RuntimeWarning):
        pgd_pairwise(model, np.zeros((2, 2)), AttackConfig(init_sigma=0.0))


def test_pairwise_objective_gradients(rng):
    model = init_model(build_layers(2, (4,), 3), rng)
    obj = pairwise_objective(model)
    clean = rng.standard_normal((3, 3))
    z = rng.standard_normal((3, 3))
    _, g = obj(z, clean)
    h = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        num = (obj(z + e, clean)[0] - obj(z - e, clean)[0]) / (2 * h)
        assert np.allclose(g[:, j], num, atol=1e-7)
    binary = init_model(build_layers(2, (4,), 1), rng)
    bobj = pairwise_objective(binary, "logistic", inv_lambda=0.5)
    v, g = bobj(np.array([[0.3]]), np.array([[2.0]]))
    num = (bobj(np.array([[0.3 + h]]), np.array([[2.0]]))[0] - bobj(np.array([[0.3 - h]]), np.array([[2.0]]))[0]) / (2 * h)
    assert np.allclose(g[0, 0], num, atol=1e-8)


def test_transfer_attack_report(rng):
    source = init_model(build_layers(2, (8,), 1), 1)
    target = init_model(build_layers(2, (8,), 1), 2)
    x = rng.standard_normal((40, 2))
    y = predict_labels(target, x)
    rep = transfer_attack(source, target, x, y, AttackConfig(epsilon=0.3, step_eta1=0.1, iters_K=5))
    assert rep.a_nat == 1.0 and 0.0 <= rep.a_rob <= 1.0 and rep.r_rob == 1.0 - rep.a_rob
    with pytest.raises(DimensionError):
        transfer_attack(init_model(build_layers(3, (), 1), 0), target, x, y, AttackConfig())
