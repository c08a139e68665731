import numpy as np
import pytest

from manrk import (
    ButcherTableau,
    InvalidTableauError,
    PreconditionError,
    bm_sphere_residuals,
    builtin,
    classify,
    consistency_residuals,
    invmeas2_residuals,
    invmeas2_residuals_delta_one,
    sphere_residuals,
    weak2_residuals,
)
from manrk.order_conditions import DEFAULT_TOL, max_residual, sphere_consistency_residuals

VERDICT_KEYS = {
    "consistent",
    "weak2",
    "invmeas2",
    "sphere_invmeas2",
    "sphere_weak2",
    "bm_sphere_weak2",
}


def drift_free_copy(t):
    return ButcherTableau(
        s=t.s, A=np.zeros((t.s, t.s)), Ahat=t.Ahat, d=t.d, delta=t.delta, name=t.name + "-nodrift"
    )


def test_group_counts():
    t = builtin("rk2-invmeas")
    assert len(consistency_residuals(t)) == 1
    assert len(invmeas2_residuals(t)) == 13  # consistency + 12 groups
    assert len(weak2_residuals(t)) == 13
    assert len(invmeas2_residuals_delta_one(t)) == 6
    assert len(sphere_residuals(t, "invmeas2")) == 4
    assert len(sphere_residuals(t, "weak2")) == 4
    assert len(sphere_consistency_residuals(t)) == 1
    assert len(bm_sphere_residuals(builtin("bm-sphere-weak2"), "weak2")) == 2


def test_groups_are_chained_equalities():
    # every member of a numbered group is compared against the same
    # right-hand side (the consistency groups mix several by design)
    for name in ("euler-ie", "rk2-invmeas", "sphere-rk2"):
        for grp in classify(builtin(name)).groups:
            assert len(grp.residuals) >= 1
            if "/" not in grp.group_id:
                continue
            rhs = {r.rhs for r in grp.residuals}
            assert len(rhs) == 1, grp.group_id


def test_euler_ie_frozen_residuals():
    t = builtin("euler-ie")
    rep = classify(t)
    assert rep.verdicts["consistent"]
    assert not rep.verdicts["invmeas2"]
    assert not rep.verdicts["weak2"]
    assert max_residual(consistency_residuals(t)) == 0.0
    assert rep.group("invmeas2/1").max_residual == 1.0
    assert max_residual(invmeas2_residuals(t)[1:]) == 1.5
    # bhat'd = 1 while the order-two set needs the root of y^2 - 2y + 1/2
    assert rep.bhat_dot_d == 1.0
    for r in rep.group("weak2/1").residuals:
        assert r.abs_residual == 0.5


def test_euler_ee_frozen_residuals():
    t = builtin("euler-ee")
    rep = classify(t)
    assert rep.verdicts["consistent"]
    assert not rep.verdicts["invmeas2"]
    assert max_residual(invmeas2_residuals(t)[1:]) == 1.0


def test_rk2_invmeas_passes_order_two():
    t = builtin("rk2-invmeas")
    rep = classify(t)
    assert rep.verdicts["consistent"]
    assert rep.verdicts["invmeas2"]
    assert not rep.verdicts["weak2"]
    assert max_residual(consistency_residuals(t)) <= 1e-14
    assert max_residual(invmeas2_residuals(t)[1:]) <= 1e-12
    # fully constrained schemes cannot satisfy the finite-time group that
    # pairs drift weights with unconstrained stages
    assert rep.group("weak2/6").max_residual == 0.25


def test_delta_one_reduction_agrees_with_general_set():
    t = builtin("rk2-invmeas")
    assert max_residual(invmeas2_residuals_delta_one(t)) <= 1e-12
    # perturb one coefficient: both routes must reject
    A = t.A.copy()
    A[1, 0] += 1e-6
    broken = ButcherTableau(s=4, A=A, Ahat=t.Ahat, d=t.d, delta=t.delta, name="rk2-broken")
    general = max_residual(invmeas2_residuals(broken)[1:])
    reduced = max_residual(invmeas2_residuals_delta_one(broken))
    assert general > 1e-8
    assert reduced > 1e-8
    assert not classify(broken).verdicts["invmeas2"]


def test_delta_one_reduction_requires_full_constraint():
    with pytest.raises(PreconditionError):
        invmeas2_residuals_delta_one(builtin("euler-ie"))


def test_perturbation_rejected_at_default_tol():
    t = builtin("rk2-invmeas")
    d = t.d.copy()
    d[0] += 1e-7
    broken = ButcherTableau(s=4, A=t.A, Ahat=t.Ahat, d=d, delta=t.delta, name="rk2-broken-d")
    rep = classify(broken)
    assert not rep.verdicts["invmeas2"]
    assert max_residual(invmeas2_residuals(broken)[1:]) > DEFAULT_TOL


def test_sphere_rk2_passes_sphere_set_only():
    t = builtin("sphere-rk2")
    rep = classify(t)
    assert rep.verdicts["sphere_invmeas2"]
    assert not rep.verdicts["invmeas2"]
    assert max_residual(sphere_consistency_residuals(t)) == 0.0
    assert max_residual(sphere_residuals(t, "invmeas2")) <= 1e-12
    assert max_residual(invmeas2_residuals(t)[1:]) > 0.3


def test_general_invmeas2_implies_sphere_invmeas2():
    # the sphere set is a specialization: whatever passes the general set
    # must pass it too
    rep = classify(builtin("rk2-invmeas"))
    assert rep.verdicts["invmeas2"]
    assert rep.verdicts["sphere_invmeas2"]


def test_sphere_mode_validation():
    with pytest.raises(PreconditionError):
        sphere_residuals(builtin("euler-ie"), "order9")


def test_bm_sphere_conditions():
    t = builtin("bm-sphere-weak2")
    rep = classify(t)
    assert rep.verdicts["bm_sphere_weak2"]
    groups = bm_sphere_residuals(t, "weak2")
    by_id = {g.group_id: g for g in groups}
    assert by_id["bm-sphere-weak2/1"].residuals[0].lhs == 0.5
    assert by_id["bm-sphere-weak2/2"].residuals[0].lhs == 0.125
    assert max_residual(groups) == 0.0
    assert float(t.bhat @ t.d) == 0.5


def test_bm_conditions_require_drift_free():
    with pytest.raises(PreconditionError):
        bm_sphere_residuals(builtin("euler-ie"), "weak2")
    # a drift-free Euler projects along one gradient only: frozen failures
    tz = drift_free_copy(builtin("euler-ie"))
    groups = bm_sphere_residuals(tz, "weak2")
    by_id = {g.group_id: g for g in groups}
    assert by_id["bm-sphere-weak2/1"].max_residual == 0.5
    assert by_id["bm-sphere-weak2/2"].max_residual == 0.875
    assert not classify(tz).verdicts["bm_sphere_weak2"]


def test_bm_verdict_requires_unit_output_noise():
    t = builtin("bm-sphere-weak2")
    d = t.d.copy()
    d[-1] = 0.5
    scaled = ButcherTableau(s=3, A=t.A, Ahat=t.Ahat, d=d, delta=t.delta, name="bm-scaled")
    assert not classify(scaled).verdicts["bm_sphere_weak2"]


def test_classify_report_shape():
    rep = classify(builtin("rk2-invmeas"))
    assert set(rep.verdicts) == VERDICT_KEYS
    assert rep.tol == DEFAULT_TOL
    assert rep.tableau_name == "rk2-invmeas"
    ids = [g.group_id for g in rep.groups]
    assert len(ids) == len(set(ids))
    with pytest.raises(KeyError):
        rep.group("no-such-group")
    d = rep.to_dict()
    assert d["verdicts"]["invmeas2"] is True
    assert all({"condition", "lhs", "rhs", "abs_residual"} <= set(r) for g in d["groups"] for r in g["residuals"])


def test_classify_rejects_structural_violations():
    bad = ButcherTableau(
        s=2, A=np.zeros((2, 2)), Ahat=np.zeros((2, 2)), d=[0, 1], delta=[0.0, 0.0]
    )
    with pytest.raises(InvalidTableauError):
        classify(bad)


def test_delta_one_groups_appear_only_for_fully_constrained():
    ids_rk2 = {g.group_id for g in classify(builtin("rk2-invmeas")).groups}
    ids_euler = {g.group_id for g in classify(builtin("euler-ie")).groups}
    assert any(i.startswith("invmeas2-delta1/") for i in ids_rk2)
    assert not any(i.startswith("invmeas2-delta1/") for i in ids_euler)
    ids_bm = {g.group_id for g in classify(builtin("bm-sphere-weak2")).groups}
    assert any(i.startswith("bm-sphere-weak2/") for i in ids_bm)
    assert not any(i.startswith("bm-sphere-weak2/") for i in ids_rk2)


def test_dae_trap_is_consistent_only():
    rep = classify(builtin("dae-trap"))
    assert rep.verdicts["consistent"]
    assert not rep.verdicts["invmeas2"]
    assert max_residual(consistency_residuals(builtin("dae-trap"))) == 0.0
