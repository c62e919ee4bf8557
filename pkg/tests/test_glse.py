import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from cases import FAMILY_CASES, H
from extremo import (
    DependenceModel,
    ExtremogramEstimate,
    Family,
    WeightKind,
    WeightMatrix,
    as_lag,
    fit_glse,
    glse_objective,
    identifiability_scan,
    jacobian_P,
    model_extremogram,
    true_extremogram,
    weight_matrix,
    weights_with_fallback,
)
from extremo.errors import ValidationError

FAM_I, THETA_I, BOX_I = FAMILY_CASES["I"]


def exact_values(family, theta, lags):
    return model_extremogram(family, theta, np.asarray(lags, dtype=float))


def noisy_values(rng, scale=0.02):
    vals = exact_values(FAM_I, THETA_I, H)
    return np.clip(vals + scale * rng.standard_normal(len(H)), 1e-3, None)


# -- weights and objective ----------------------------------------------------


def test_weight_kinds():
    assert weight_matrix(WeightKind.EXP_DECAY, [(0, 0, 1)]).diag[0] == pytest.approx(math.exp(-1), abs=1e-15)
    assert np.all(weight_matrix(WeightKind.IDENTITY, H).diag == 1.0)
    with pytest.raises(ValidationError):
        weight_matrix(WeightKind.EMPIRICAL, H)
    with pytest.raises(ValidationError):
        WeightMatrix(WeightKind.IDENTITY, np.array([1.0, 0.0]), "x", ())


def estimates_with(values):
    return [ExtremogramEstimate(as_lag(h, 2), v, 1, 1, 1, 1, False, None)
            for h, v in zip([(0, 0, 1), (1, 0, 0)], values)]


def test_empirical_weights_reject_zero():
    with pytest.raises(ValidationError, match="non-positive"):
        weight_matrix(WeightKind.EMPIRICAL, [(0, 0, 1), (1, 0, 0)], estimates_with([0.5, 0.0]))
    with pytest.raises(ValidationError):
        weights_with_fallback(WeightKind.EMPIRICAL, estimates_with([0.5, 0.0]))


def test_weight_fallback():
    W = weights_with_fallback(WeightKind.EMPIRICAL, estimates_with([0.5, 0.0]), WeightKind.EXP_DECAY)
    assert W.kind is WeightKind.EXP_DECAY and W.diag[1] == pytest.approx(math.exp(-1))
    W = weights_with_fallback(WeightKind.EMPIRICAL, estimates_with([0.5, 0.25]), WeightKind.EXP_DECAY)
    assert W.kind is WeightKind.EMPIRICAL and W.diag.tolist() == [0.5, 0.25]


def test_objective_hand_value():
    lags = [(0, 0, 1), (1, 0, 0)]
    model_vals = exact_values(FAM_I, THETA_I, lags)
    W = WeightMatrix(WeightKind.IDENTITY, np.array([2.0, 1.0]), "hand", tuple(lags))
    obj = glse_objective(THETA_I, (lags, model_vals + np.array([0.1, -0.2])), W, FAM_I)
    assert obj == pytest.approx(0.06, abs=1e-15)


def test_objective_zero_at_truth_and_sum_of_squares():
    vals = exact_values(FAM_I, THETA_I, H)
    W = weight_matrix(WeightKind.IDENTITY, H)
    assert glse_objective(DependenceModel(FAM_I, THETA_I), (H, vals), W) == 0.0
    other = {**THETA_I, "C1": 1.1}
    g = vals - exact_values(FAM_I, other, H)
    assert glse_objective(other, (H, vals), W, FAM_I) == pytest.approx(np.sum(g**2), rel=1e-14)


@given(
    c1=st.floats(0.05, 5.0), c2=st.floats(0.05, 5.0), a1=st.floats(0.1, 2.0), a2=st.floats(0.1, 2.0)
)
def test_objective_non_negative(c1, c2, a1, a2):
    W = weight_matrix(WeightKind.EXP_DECAY, H)
    theta = {"C1": c1, "C2": c2, "alpha1": a1, "alpha2": a2}
    vals = noisy_values(np.random.default_rng(0))
    obj = glse_objective(theta, (H, vals), W, FAM_I)
    assert obj >= 0.0
    assert (obj == 0.0) == bool(np.all(vals == exact_values(FAM_I, theta, H)))


def test_objective_alignment():
    with pytest.raises(ValidationError):
        glse_objective(THETA_I, (H, exact_values(FAM_I, THETA_I, H)), weight_matrix(WeightKind.IDENTITY, H[:3]),
                       FAM_I)
    with pytest.raises(ValidationError):
        glse_objective(THETA_I, (H, exact_values(FAM_I, THETA_I, H)), weight_matrix(WeightKind.IDENTITY, H))


# -- fitting ------------------------------------------------------------------


def test_noiseless_recovery_iso():
    vals = exact_values(FAM_I, THETA_I, H)
    res = fit_glse((H, vals), weight_matrix(WeightKind.IDENTITY, H), FAM_I, starts=16, rng=0)
    err = max(abs(res.theta_hat[k] - v) for k, v in THETA_I.items())
    assert err <= 1e-4
    assert res.converged and res.jacobian_rank_ok and res.jacobian_rank == 4


def test_fit_is_deterministic_and_serialisable():
    vals = noisy_values(np.random.default_rng(4))
    W = weight_matrix(WeightKind.IDENTITY, H)
    a = fit_glse((H, vals), W, FAM_I, starts=4, rng=7)
    b = fit_glse((H, vals), W, FAM_I, starts=4, rng=7)
    assert a.theta_hat == b.theta_hat and a.to_json() == b.to_json()
    back = json.loads(a.to_json())
    assert back["theta_hat"] == a.theta_hat
    assert a.model().family is FAM_I


@pytest.mark.parametrize("factor", [4.0, 0.25, 3.0])
def test_fit_invariant_to_weight_scaling(factor):
    vals = noisy_values(np.random.default_rng(5))
    W = weight_matrix(WeightKind.EXP_DECAY, H)
    a = fit_glse((H, vals), W, FAM_I, starts=4, rng=1)
    b = fit_glse((H, vals), W.scaled(factor), FAM_I, starts=4, rng=1)
    np.testing.assert_allclose(a.vector(), b.vector(), rtol=1e-7, atol=1e-9)
    assert b.objective == pytest.approx(factor * a.objective, rel=1e-6)


def test_box_respected_and_warm_start_index():
    vals = noisy_values(np.random.default_rng(6), 0.05)
    box = {"alpha1": (1.0, 2.0), "alpha2": (0.5, 1.2)}
    res = fit_glse((H, vals), weight_matrix(WeightKind.IDENTITY, H), FAM_I, box=box, starts=4, rng=2,
                   warm_start=THETA_I)
    for k, (lo, hi) in box.items():
        assert lo <= res.theta_hat[k] <= hi
    assert res.n_starts == 5


def test_fixed_parameters_stay_fixed():
    vals = noisy_values(np.random.default_rng(6))
    res = fit_glse((H, vals), weight_matrix(WeightKind.IDENTITY, H), FAM_I, box={"alpha2": (1.0, 1.0)},
                   starts=4, rng=2)
    assert res.theta_hat["alpha2"] == 1.0 and "alpha2" not in res.free


def test_no_improvement_flags_non_convergence():
    # purely spatial lags carry no information on C2, which is the only free parameter
    lags = [(1, 0, 0), (0, 1, 0), (2, 1, 0)]
    vals = exact_values(FAM_I, THETA_I, lags) + 0.01
    box = {"C1": (0.8, 0.8), "alpha1": (1.5, 1.5), "alpha2": (1.0, 1.0)}
    res = fit_glse((lags, vals), weight_matrix(WeightKind.IDENTITY, lags), FAM_I, box=box, starts=2, rng=0)
    assert not res.converged


@pytest.mark.parametrize(
    "box, match",
    [({"alpha1": (1.5, 1.0)}, "infeasible"), ({"alpha1": (1.0, 2.5)}, "infeasible"), ({"beta": (0, 1)}, "unknown")],
)
def test_bad_boxes(box, match):
    vals = exact_values(FAM_I, THETA_I, H)
    with pytest.raises(ValidationError, match=match):
        fit_glse((H, vals), weight_matrix(WeightKind.IDENTITY, H), FAM_I, box=box, starts=2)


def test_too_few_lags():
    lags = [(0, 0, 1)]
    with pytest.raises(ValidationError, match="free parameters"):
        fit_glse((lags, [0.5]), weight_matrix(WeightKind.IDENTITY, lags), FAM_I,
                 box={"alpha1": (1.5, 1.5), "alpha2": (1.0, 1.0)}, starts=2)


# -- Jacobian -----------------------------------------------------------------


def analytic_jacobian(theta, lags):
    """d(-rho)/d theta for the isotropic family via the chain rule."""
    out = []
    for lag in lags:
        h = np.linalg.norm(lag[:-1])
        u = abs(lag[-1])
        delta = theta["C1"] * h ** theta["alpha1"] + theta["C2"] * u ** theta["alpha2"]
        drho = -norm.pdf(math.sqrt(delta / 2)) / math.sqrt(2 * delta)
        grads = [
            h ** theta["alpha1"],
            u ** theta["alpha2"],
            theta["C1"] * h ** theta["alpha1"] * (math.log(h) if h > 0 else 0.0),
            theta["C2"] * u ** theta["alpha2"] * (math.log(u) if u > 0 else 0.0),
        ]
        out.append([-drho * g for g in grads])
    return np.array(out)


def test_jacobian_worked_entry():
    # ||h|| = 1, delta = C1 + C2 |u|^alpha2 = 2
    theta = {"C1": 1.2, "C2": 0.8, "alpha1": 1.5, "alpha2": 1.0}
    rep = jacobian_P(theta, FAM_I, [(1, 0, 1)], names=["C1"])
    assert rep.matrix[0, 0] == pytest.approx(0.120985362259572, abs=1e-6)


def test_jacobian_matches_chain_rule_at_random_points():
    rng = np.random.default_rng(17)
    for _ in range(20):
        theta = {"C1": rng.uniform(0.2, 2), "C2": rng.uniform(0.2, 2), "alpha1": rng.uniform(0.5, 1.9),
                 "alpha2": rng.uniform(0.5, 1.9)}
        rep = jacobian_P(theta, FAM_I, H, names=["C1", "C2", "alpha1", "alpha2"])
        exact = analytic_jacobian(theta, H)
        np.testing.assert_allclose(rep.matrix, exact, rtol=1e-6, atol=1e-9)


def test_jacobian_rank():
    rep = jacobian_P(THETA_I, FAM_I, H)
    assert rep.rank == 4 and rep.rank_ok
    dup = jacobian_P(THETA_I, FAM_I, [(1, 1, 1)] * 6)
    assert not dup.rank_ok and dup.rank == 1


def test_jacobian_boundary_error():
    with pytest.raises(ValidationError, match="box"):
        jacobian_P({**THETA_I, "alpha1": 2.0}, FAM_I, H, box={})


# -- identifiability ----------------------------------------------------------


def test_geometric_anisotropy_needs_c_not_one():
    spatial = [(1, 0, 0), (0, 1, 0), (1, 1, 0), (2, 1, 0), (1, 2, 0)]
    box = {"c": (1.0, 1.0), "C2": (0.4, 0.4), "alpha2": (1.0, 1.0)}
    rep = identifiability_scan(Family.ISO_FRAC_GEO_ANISO, spatial, box=box, samples=16, rng=0)
    assert rep.flagged and rep.min_distance <= 1e-14
    assert abs(rep.theta_a["phi"] - rep.theta_b["phi"]) >= 1e-3


def test_iso_identifiable_over_H():
    rep = identifiability_scan(FAM_I, H, samples=24, rng=1)
    assert not rep.flagged and rep.min_distance > 0
    assert rep.n_pairs > 24 * 23 // 2


def test_model_extremogram_routes_agree():
    lags = np.asarray(H, dtype=float)
    fast = model_extremogram(FAM_I, THETA_I, lags)
    slow = [true_extremogram(DependenceModel(FAM_I, THETA_I), h) for h in H]
    np.testing.assert_allclose(fast, slow, rtol=1e-14)


def test_reused_seed_sequence_gives_identical_fits():
    vals = noisy_values(np.random.default_rng(9))
    W = weight_matrix(WeightKind.IDENTITY, H)
    ss = np.random.SeedSequence(12)
    a = fit_glse((H, vals), W, FAM_I, starts=4, rng=np.random.default_rng(ss))
    b = fit_glse((H, vals), W, FAM_I, starts=4, rng=np.random.default_rng(ss))
    assert a.theta_hat == b.theta_hat and ss.n_children_spawned == 0
