
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lightpfl.compression import approx_bits
from lightpfl.errors import DomainError, InfeasibleError, InputError
from lightpfl.mec import comp_costs, uplink_rate
from lightpfl.model import BoundConstants
from lightpfl.optimizer.dca import (
    OptimizationInstance,
    RoundPlan,
    build_instance,
    dca_solve,
    fallback_plan,
    feasibility_check,
    feasibility_probe,
    pruning_term_grad,
    initial_iterate,
    neg_rate_perspective,
    neg_bits,
    pruning_term,
    solve_subproblem,
    neg_rate,
)
from oracles import (
    make_client,
    random_instance,
    single_client_comm_oracle,
    subproblem_grid_optimum,
)

FAST = dict(h=1e-10, p=0.2, omega=2e9)


def instance(clients, *, tau=1.0, energy=1.0, weights=(1.0, 1.0), gamma=None, d=4810, d_base=4160):
    N = len(clients)
    gamma = np.full(N, 1.0 / N) if gamma is None else np.asarray(gamma)
    return OptimizationInstance(gamma=gamma, prune_weight=weights[0], sparse_weight=weights[1],
                                channels=[c[0] for c in clients], devices=[c[1] for c in clients],
                                d=d, d_base=d_base, fpp=32, tau_max=tau,
                                energy_caps=np.full(N, energy))


def linear_objective(inst, ref, it):
    return float(np.sum(-inst.sparse_weight * inst.gamma * it.k
                        - pruning_term_grad(ref.r, inst.prune_weight, inst.gamma) * it.r))


# -- building blocks ----------------------------------------------------------

def test_phi_examples():
    assert neg_bits(1.0, 100, 32) == pytest.approx(-3300.0)
    assert pruning_term_grad(0.0, 1.0, 1.0) == pytest.approx(0.5)
    assert pruning_term(0.0, 2.0, 0.5) == pytest.approx(-1.0)
    with pytest.raises(DomainError):
        neg_bits(0.0, 10, 32)
    with pytest.raises(DomainError):
        pruning_term(1.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        neg_rate_perspective(-1.0, 1.0, make_client(**FAST)[0])


def test_perspective_identity_on_grid():
    ch = make_client(**FAST)[0]
    for z in np.geomspace(1e-3, 1.0, 9):
        for u in np.geomspace(1e-4, 1.0, 9):
            if u > z:
                continue
            want = z * neg_rate(u / z, ch)
            assert neg_rate_perspective(u, z, ch) == pytest.approx(want, rel=1e-9)
    assert neg_rate_perspective(0.0, 0.5, ch) == 0.0


# -- feasibility probe --------------------------------------------------------

def test_generous_budgets_pass_probe():
    feasibility_probe(instance([make_client(**FAST)] * 3, tau=100.0, energy=100.0))


def test_compute_bound_diagnosis():
    ch, dev = make_client(**FAST)
    t0 = comp_costs(dev, 4810, 4160, 0.0)[0]
    with pytest.raises(InfeasibleError) as err:
        feasibility_probe(instance([(ch, dev)], tau=0.9 * t0))
    assert err.value.binding == "compute" and err.value.client == 0


def test_energy_and_comm_bound_diagnosis():
    ch, dev = make_client(**FAST)
    e0 = comp_costs(dev, 4810, 4160, 0.0)[1]
    with pytest.raises(InfeasibleError) as err:
        feasibility_probe(instance([(ch, dev)], energy=0.5 * e0))
    assert err.value.binding == "energy"
    weak = make_client(h=1e-16, p=0.1, omega=2e9, W_total=1e3)
    with pytest.raises(InfeasibleError) as err:
        feasibility_probe(instance([weak], tau=0.1))
    assert err.value.binding == "communication"


def test_empty_instance_rejected():
    with pytest.raises(InputError):
        instance([], gamma=[])
    with pytest.raises(InputError):
        build_instance([], [], BoundConstants(1, 1, 1, 1, 1, 0.1, 5), [], d=10, d_base=5,
                       fpp=32, tau_max=1.0, energy_caps=[])


# -- subproblem ---------------------------------------------------------------

def test_subproblem_inactive_constraints_push_k_to_one():
    inst = instance([make_client(**FAST)], tau=10.0, energy=10.0)
    ref = initial_iterate(inst)
    out = solve_subproblem(inst, ref)
    assert out.k[0] == pytest.approx(1.0, abs=1e-5)


def test_subproblem_without_pruning_weight_keeps_r():
    inst = instance([make_client(**FAST)], tau=0.1, weights=(0.0, 1.0))
    ref = initial_iterate(inst)
    out = solve_subproblem(inst, ref)
    assert out.r[0] == ref.r[0]


@pytest.mark.parametrize("seed", range(4))
def test_subproblem_matches_grid_oracle(seed):
    inst = random_instance(seed, 2, tau_max=0.2, energy=0.03, W_total=0.3e6)
    ref = initial_iterate(inst)
    out = solve_subproblem(inst, ref)
    got = linear_objective(inst, ref, out)
    want = subproblem_grid_optimum(inst, ref)
    # grid points are feasible, so the continuous optimum is never worse
    assert got <= want + 1e-6
    assert got == pytest.approx(want, abs=1e-2)


# -- DCA ----------------------------------------------------------------------

def test_single_client_unconstrained_hits_box_corner():
    inst = instance([make_client(**FAST)], tau=10.0, energy=10.0)
    plan = dca_solve(inst)
    assert plan.k[0] == pytest.approx(1.0, abs=1e-5)
    assert plan.r[0] == pytest.approx(inst.r_max, abs=1e-5)
    assert plan.l[0] == pytest.approx(1.0)


def test_single_client_comm_binding_matches_bisection():
    client = make_client(h=1e-11, p=0.2, omega=2e9, W_total=0.05e6)
    inst = instance([client], tau=0.1, energy=10.0, weights=(0.0, 1.0))
    ch, dev = client
    plan = dca_solve(inst)
    assert plan.k[0] < 1.0
    t_c = comp_costs(dev, inst.d, inst.d_base, float(plan.r[0]))[0]
    t_m = approx_bits(float(plan.k[0]), inst.bits_cfg) / uplink_rate(ch, float(plan.l[0]))
    assert t_c + t_m == pytest.approx(inst.tau_max, rel=1e-3)
    assert plan.k[0] == pytest.approx(single_client_comm_oracle(inst, float(plan.r[0])), rel=1e-3)


def test_symmetric_clients_split_bandwidth_equally():
    client = make_client(h=1e-11, p=0.2, omega=2e9, W_total=0.5e6)
    inst = instance([client] * 3, tau=0.2, energy=10.0)
    plan = dca_solve(inst)
    np.testing.assert_allclose(plan.l, 1 / 3, atol=1e-3)


@settings(max_examples=15)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_dca_descent_and_feasibility(seed, N):
    inst = random_instance(seed, N, tau_max=0.2, energy=0.03, W_total=0.5e6 * N)
    plan = dca_solve(inst)
    trace = plan.objective_trace
    assert all(b <= a + 1e-8 for a, b in zip(trace, trace[1:]))
    assert plan.max_violation <= 1e-6
    assert np.all(plan.l >= 0) and np.all(plan.l <= 1) and plan.l.sum() <= 1 + 1e-6
    it = plan.iterate
    # the relaxed rate equality binds in the intended direction
    bits = approx_bits_vec(inst, it.k)
    delivered = it.z * inst.rates(it.u / it.z)
    assert np.all(delivered >= bits * (1 - 1e-5))


def approx_bits_vec(inst, k):
    return np.array([approx_bits(float(x), inst.bits_cfg) for x in k])


def test_warm_start_from_previous_plan():
    inst = random_instance(3, 3, tau_max=0.2, energy=0.03, W_total=1e6)
    first = dca_solve(inst)
    second = dca_solve(inst, init=first)
    assert second.objective <= first.objective + 1e-6
    assert second.max_violation <= 1e-6


def test_fallback_plan_shape():
    inst = random_instance(0, 3)
    fb = fallback_plan(inst)
    assert fb.source == "fallback"
    np.testing.assert_allclose(fb.k, inst.k_min)
    np.testing.assert_allclose(fb.r, 1.0)
    assert fb.l.sum() == pytest.approx(1.0)


# -- feasibility check --------------------------------------------------------

def test_check_names_violated_constraint():
    inst = instance([make_client(**FAST)] * 2, tau=1.0)
    bad = RoundPlan(k=[1.0, 1.0], r=[0.5, 0.5], l=[0.7, 0.6], objective=0.0, iterations=0,
                    converged=True)
    rep = feasibility_check(bad, inst)
    assert not rep.ok and rep.worst == "bandwidth_sum"
    assert "bandwidth_sum" in rep.violations


def test_check_accepts_exact_unit_bandwidth():
    inst = instance([make_client(**FAST)] * 2, tau=1.0)
    plan = RoundPlan(k=[0.5, 0.5], r=[0.5, 0.5], l=[0.5, 0.5], objective=0.0, iterations=0,
                     converged=True)
    rep = feasibility_check(plan, inst)
    assert rep.ok and rep.worst is None


def test_check_flags_latency_overrun():
    ch, dev = make_client(**FAST)
    t0 = comp_costs(dev, 4810, 4160, 1.0)[0]
    inst = instance([(ch, dev)], tau=0.5 * t0)
    plan = RoundPlan(k=[0.5], r=[1.0], l=[1.0], objective=0.0, iterations=0, converged=True)
    assert feasibility_check(plan, inst).worst == "latency[0]"
