"""Randomized rounding, fixed-direction power control, full pipeline."""

import numpy as np
import pytest

from conftest import rayleigh_instance
from fairbeam import fair_solver as fs
from fairbeam import model
from fairbeam import randomization as rz


def _unit(v):
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------------------
# candidate generation


def test_principal_directions_rank1():
    v = _unit(np.array([1.0 + 2.0j, -1.0, 0.5j]))
    X = model.CovarianceSet(3.0 * np.outer(v, v.conj())[None])
    d = rz.principal_directions(X).w(0)
    assert abs(np.vdot(v, d)) == pytest.approx(1.0, abs=1e-12)


def test_draws_live_in_covariance_range():
    v = _unit(np.array([1.0, 1.0j]))
    X = model.CovarianceSet(2.0 * np.outer(v, v.conj())[None])
    cs = rz.draw_candidates(X, 8, seed=0)
    assert len(cs.candidates) == 8
    for cand in cs.candidates:
        w = cand.w(0)
        assert np.linalg.norm(w) == pytest.approx(1.0, abs=1e-12)
        # rank-one source: every draw is the same direction up to phase
        assert abs(np.vdot(v, w)) == pytest.approx(1.0, abs=1e-10)


def test_draws_isotropic_for_identity():
    X = model.CovarianceSet(np.eye(2, dtype=complex)[None])
    cs = rz.draw_candidates(X, 10_000, seed=42)
    acc = np.zeros((2, 2), dtype=complex)
    for cand in cs.candidates:
        w = cand.w(0)
        acc += np.outer(w, w.conj())
    mean = 2.0 * acc / len(cs.candidates)
    assert np.linalg.norm(mean - np.eye(2)) <= 0.05


def test_draws_deterministic_and_prefix_stable():
    X = model.CovarianceSet(np.stack([np.eye(3, dtype=complex),
                                      2 * np.eye(3, dtype=complex)]))
    a = rz.draw_candidates(X, 10, seed=7)
    b = rz.draw_candidates(X, 10, seed=7)
    long = rz.draw_candidates(X, 20, seed=7)
    for x, y in zip(a.candidates, b.candidates):
        assert np.array_equal(x.W, y.W)
    for x, y in zip(a.candidates, long.candidates[:10]):
        assert np.array_equal(x.W, y.W)
    assert rz.draw_candidates(X, 0, seed=7).candidates == ()
    with pytest.raises(ValueError):
        rz.draw_candidates(X, -1, seed=7)


# ---------------------------------------------------------------------------
# fixed-direction power control


def test_lp_decoupled_groups():
    inst = model.make_instance(model.ChannelSet(np.eye(2)), [(0,), (1,)],
                               pac=[2.0, 0.5])
    dirs = model.PrecoderSet(np.eye(2, dtype=complex))
    res = rz.power_control_LP(dirs, inst, [1.0, 1.0])
    assert res.status == rz.STATUS_OK
    # p_k = t * gamma * sigma^2 / own gain = 1; r = worst budget ratio
    assert np.allclose(res.p, [1.0, 1.0], atol=1e-8)
    assert res.r == pytest.approx(2.0, rel=1e-8)
    assert res.t is None


def test_lp_single_group_closed_form():
    ch = model.gen_rayleigh(3, 2, 11)
    inst = model.make_instance(ch, [(0, 1)], pac=[1.0, 2.0, 0.5])
    d = _unit(np.array([1.0, 1.0j, -0.5]))
    dirs = model.PrecoderSet(d[:, None])
    t = 1.7
    res = rz.power_control_LP(dirs, inst, t * inst.targets)
    gains = np.abs(np.conj(d) @ ch.H) ** 2
    p_expected = np.max(t * inst.targets * inst.noise / gains)
    assert res.p[0] == pytest.approx(p_expected, rel=1e-8)
    r_expected = np.max(p_expected * np.abs(d) ** 2 / inst.pac)
    assert res.r == pytest.approx(r_expected, rel=1e-8)


def test_lp_interference_limited_infeasible():
    # both groups beam through the same direction onto both users: above
    # level one the SINR rows contradict each other at any power
    ch = model.ChannelSet(np.array([[1.0, 1.0], [0.0, 0.0]]))
    inst = model.make_instance(ch, [(0,), (1,)])
    dirs = model.PrecoderSet(np.array([[1.0, 1.0], [0.0, 0.0]], dtype=complex))
    res = rz.power_control_LP(dirs, inst, [1.5, 1.5])
    assert res.status == rz.STATUS_INFEASIBLE
    assert res.p is None
    ok = rz.power_control_LP(dirs, inst, [0.5, 0.5])
    assert ok.status == rz.STATUS_OK


def test_lp_validates_targets():
    inst = model.make_instance(model.ChannelSet(np.eye(2)), [(0,), (1,)])
    dirs = model.PrecoderSet(np.eye(2, dtype=complex))
    with pytest.raises(ValueError):
        rz.power_control_LP(dirs, inst, [1.0])
    with pytest.raises(ValueError):
        rz.power_control_LP(dirs, inst, [1.0, -1.0])


def test_bisect_reaches_relaxation_level_on_tight_instance():
    # unicast relaxation is rank one, so its principal directions with fresh
    # power control must reproduce the relaxed level itself
    inst = rayleigh_instance(3, 2, [(0,), (1,)], seed=4)
    rel = fs.solve_Fr(inst)
    dirs = rz.principal_directions(rel.covariances)
    res = rz.power_control_bisect(dirs, inst, rel.t_upper)
    assert res.status == rz.STATUS_OK
    assert res.t >= rel.t_star * (1 - 5e-4)
    assert res.t <= rel.t_upper * (1 + 1e-9)
    w = model.PrecoderSet(dirs.W * np.sqrt(res.p)[None, :])
    assert np.all(model.per_antenna_power(w) <= inst.pac * (1 + 1e-7))
    assert np.min(model.sinr_all(w, inst) / inst.targets) >= res.t * (1 - 1e-6)


def test_bisect_kernel_and_lp_routes_agree():
    inst = rayleigh_instance(3, 4, [(0, 1), (2, 3)], seed=5)
    rel = fs.solve_Fr(inst)
    cands = rz.draw_candidates(rel.covariances, 6, seed=1).candidates
    for dirs in cands:
        fast = rz.power_control_bisect(dirs, inst, rel.t_upper)
        slow = rz.power_control_bisect(dirs, inst, rel.t_upper, force_lp=True)
        assert fast.status == slow.status
        if fast.status == rz.STATUS_OK:
            assert fast.t == pytest.approx(slow.t, rel=3e-4)


def test_bisect_rejects_bad_upper():
    inst = rayleigh_instance(2, 2, [(0,), (1,)], seed=0)
    dirs = model.PrecoderSet(np.eye(2, dtype=complex))
    with pytest.raises(ValueError):
        rz.power_control_bisect(dirs, inst, 0.0)


def test_gp_matches_bisect():
    inst = rayleigh_instance(3, 4, [(0, 1), (2, 3)], seed=5)
    rel = fs.solve_Fr(inst)
    cands = rz.draw_candidates(rel.covariances, 10, seed=2).candidates
    n_checked = 0
    for dirs in cands:
        bis = rz.power_control_bisect(dirs, inst, rel.t_upper)
        gp = rz.power_control_GP(dirs, inst)
        if bis.status != rz.STATUS_OK or gp.status != rz.STATUS_OK:
            continue
        n_checked += 1
        assert gp.t == pytest.approx(bis.t, rel=1e-3)
        assert np.all(gp.p > 0)
        assert gp.r <= 1 + 1e-6
    assert n_checked >= 5


def test_gp_single_group_closed_form():
    ch = model.gen_rayleigh(3, 2, 11)
    inst = model.make_instance(ch, [(0, 1)], pac=[1.0, 2.0, 0.5])
    d = _unit(np.array([1.0, 1.0j, -0.5]))
    dirs = model.PrecoderSet(d[:, None])
    res = rz.power_control_GP(dirs, inst)
    gains = np.abs(np.conj(d) @ ch.H) ** 2
    p_max = np.min(inst.pac / np.abs(d) ** 2)
    t_expected = p_max * np.min(gains / (inst.targets * inst.noise))
    assert res.t == pytest.approx(t_expected, rel=1e-6)


def test_gp_scale_invariance():
    inst = rayleigh_instance(3, 4, [(0, 1), (2, 3)], seed=9)
    rel = fs.solve_Fr(inst)
    dirs = rz.principal_directions(rel.covariances)
    base = rz.power_control_GP(dirs, inst)
    c = 7.0
    scaled_inst = model.make_instance(inst.channels, [(0, 1), (2, 3)],
                                      pac=c * inst.pac, noise=c * inst.noise)
    scaled = rz.power_control_GP(dirs, scaled_inst)
    assert base.status == scaled.status == rz.STATUS_OK
    assert scaled.t == pytest.approx(base.t, rel=1e-6)
    assert np.allclose(scaled.p, c * base.p, rtol=1e-5)


def test_gp_rejects_zero_own_gain():
    ch = model.ChannelSet(np.eye(2))
    inst = model.make_instance(ch, [(0,), (1,)])
    dirs = model.PrecoderSet(np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex))
    with pytest.raises(ValueError):
        rz.power_control_GP(dirs, inst)


# ---------------------------------------------------------------------------
# full pipeline


def test_pipeline_rank1_shortcut_on_unicast():
    inst = rayleigh_instance(4, 2, [(0,), (1,)], seed=6)
    w, rep = rz.solve_fair_pipeline(inst, n_rand=10, seed=0)
    assert rep.mode == "rank1"
    assert abs(rep.accuracy - 1.0) <= 1e-4
    assert rep.achieved_t == pytest.approx(
        float(np.min(model.sinr_all(w, inst) / inst.targets)), rel=1e-12)
    assert rep.n_candidates == 0  # no draws spent


def test_pipeline_deterministic():
    inst = rayleigh_instance(5, 4, [(0, 1), (2, 3)], seed=1)
    w1, r1 = rz.solve_fair_pipeline(inst, n_rand=15, seed=5)
    w2, r2 = rz.solve_fair_pipeline(inst, n_rand=15, seed=5)
    assert np.array_equal(w1.W, w2.W)
    assert r1.achieved_t == r2.achieved_t
    assert r1.best_index == r2.best_index


def test_pipeline_more_draws_never_worse():
    inst = rayleigh_instance(5, 4, [(0, 1), (2, 3)], seed=1)
    _, small = rz.solve_fair_pipeline(inst, n_rand=10, seed=5)
    _, large = rz.solve_fair_pipeline(inst, n_rand=25, seed=5)
    assert large.best_t >= small.best_t - 1e-12


def test_pipeline_exhausts_budget():
    # the tightest antenna ends exactly on its limit (uniform scale-up)
    inst = rayleigh_instance(5, 4, [(0, 1), (2, 3)], seed=1)
    w, rep = rz.solve_fair_pipeline(inst, n_rand=10, seed=5)
    load = model.per_antenna_power(w) / inst.pac
    assert np.max(load) == pytest.approx(1.0, abs=1e-9)
    assert rep.achieved_t <= rep.t_upper * (1 + 1e-9)


def test_pipeline_deterministic_rounding_alone():
    inst = rayleigh_instance(5, 4, [(0, 1), (2, 3)], seed=1)
    w, rep = rz.solve_fair_pipeline(inst, n_rand=0, seed=0)
    assert rep.mode == "randomized"
    assert rep.n_candidates == 1
    assert rep.best_index == 0
    assert rep.achieved_t > 0


def test_pipeline_spc_budget():
    inst = rayleigh_instance(4, 4, [(0, 1), (2, 3)], seed=2)
    w, rep = rz.solve_fair_pipeline(inst, n_rand=10, seed=0, power="spc",
                                    P_tot=3.0)
    assert rep.power_mode == "spc"
    assert w.total_power == pytest.approx(3.0, rel=1e-9)


def test_pipeline_regression_rayleigh_5x4():
    # frozen end-to-end output of the randomized path
    inst = rayleigh_instance(5, 4, [(0, 1), (2, 3)], seed=1)
    w, rep = rz.solve_fair_pipeline(inst, n_rand=50, seed=3)
    assert rep.mode == "randomized"
    assert rep.t_relaxed == pytest.approx(5.118865966796875, rel=1e-9)
    assert rep.achieved_t == pytest.approx(4.6001561276842935, rel=1e-9)
    assert rep.accuracy == pytest.approx(0.89866168259621626, rel=1e-6)
    assert rep.n_candidates == 51
    assert rep.n_feasible == 51
    assert rep.best_index == 24
    assert rep.kernel_backend in ("compiled", "numpy")
