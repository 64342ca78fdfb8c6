import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lightpfl.compression import BitsConfig, approx_bits
from lightpfl.errors import InfeasibleError, ProtocolError
from lightpfl.harness.scenario import prepare
from lightpfl.model import MiniBatch, ModelSpec, ParamVector, grad, init_params
from lightpfl.protocol import (
    ClientState,
    SparseUpload,
    client_round,
    quantize_rate,
    rng_for,
    run_training,
    sample_batch,
    server_aggregate,
)
from scenarios import small_config


def toy_client(seed=0, n=20):
    spec = ModelSpec("mlp", 4, 3, (5,), base_layers=1)
    rng = np.random.default_rng(seed)
    w = init_params(spec, rng)
    train = MiniBatch(rng.standard_normal((n, 4)), rng.integers(0, 3, n))
    client = ClientState(0, train, train, 1.0, w.pers.copy())
    return spec, w, client


def run_client(spec, w, client, k, r, **kw):
    return client_round(spec, client, w.base, k, r, eta=0.1, round_idx=1, seed=3, batch_size=8, **kw)


def test_identity_rates_give_dense_gradient_and_plain_sgd():
    spec, w, client = toy_client()
    res = run_client(spec, w, client, 1.0, 1.0)
    batch = sample_batch(client.train, 8, 3, 0, 1)
    g = grad(spec, ParamVector.join(w.base, client.pers), batch)
    np.testing.assert_array_equal(res.upload.dense(), g.base)
    np.testing.assert_allclose(res.pers, client.pers - 0.1 * g.pers)


def test_zero_prune_rate_restarts_from_zeroed_head():
    spec, w, client = toy_client()
    res = run_client(spec, w, client, 1.0, 0.0)
    batch = sample_batch(client.train, 8, 3, 0, 1)
    g = grad(spec, ParamVector.join(w.base, np.zeros(spec.d_pers)), batch)
    np.testing.assert_allclose(res.pers, -0.1 * g.pers)


@given(st.floats(0.05, 1.0))
def test_upload_bits_follow_compression_accounting(k):
    spec, w, client = toy_client()
    res = run_client(spec, w, client, k, 1.0)
    up = res.upload
    assert up.indices.size == round(k * spec.d_base + 1e-12) or abs(up.indices.size - k * spec.d_base) <= 0.5
    if up.indices.size:
        assert up.bits == pytest.approx(approx_bits(up.indices.size / spec.d_base, BitsConfig(32, spec.d_base)))
    assert np.all(np.diff(up.indices) > 0) and np.all(up.indices < spec.d_base)


def test_uploads_carry_no_personal_fields():
    names = {f.name for f in dataclasses.fields(SparseUpload)}
    assert names == {"client", "indices", "values", "d_base", "bits", "exact_bits", "cost"}
    with pytest.raises(ProtocolError):
        SparseUpload(0, np.array([2, 1]), np.zeros(2), 4, 0.0, 0.0)


def up(client, idx, vals, d=4):
    return SparseUpload(client, np.array(idx), np.array(vals, dtype=float), d, 0.0, 0.0)


def test_aggregate_zero_uploads_leave_base():
    w = np.arange(4.0)
    out = server_aggregate([up(0, [], []), up(1, [], [])], [0.5, 0.5], w, 0.1)
    np.testing.assert_array_equal(out, w)


def test_aggregate_disjoint_supports_hand_values():
    w = np.zeros(4)
    ups = [up(0, [0, 1], [2.0, 4.0]), up(1, [2, 3], [6.0, 8.0])]
    out = server_aggregate(ups, [0.5, 0.5], w, 0.1)
    np.testing.assert_allclose(out, [-0.1, -0.2, -0.3, -0.4])
    np.testing.assert_array_equal(out, server_aggregate(ups[::-1], [0.5, 0.5], w, 0.1))


def test_aggregate_rejects_missing_and_duplicate():
    w = np.zeros(4)
    with pytest.raises(ProtocolError):
        server_aggregate([up(0, [0], [1.0])], [0.5, 0.5], w, 0.1)
    with pytest.raises(ProtocolError):
        server_aggregate([up(0, [0], [1.0]), up(0, [1], [1.0])], [0.5, 0.5], w, 0.1)


def test_batches_wrap_with_seeded_reshuffle():
    train = MiniBatch(np.arange(10.0)[:, None], np.zeros(10, dtype=int))
    seen = np.concatenate([sample_batch(train, 4, 1, 0, t).features[:, 0] for t in range(1, 6)])
    # the first two and a half epochs: each epoch is a permutation
    assert sorted(seen[:10]) == list(range(10))
    assert sorted(seen[10:20]) == list(range(10))
    again = sample_batch(train, 4, 1, 0, 3).features
    np.testing.assert_array_equal(again, sample_batch(train, 4, 1, 0, 3).features)


def test_rng_streams_independent_of_order():
    a = rng_for(1, 2, 3, "x").random()
    rng_for(1, 0, 0, "y").random()
    assert rng_for(1, 2, 3, "x").random() == a
    assert rng_for(1, 2, 3, "z").random() != a


def test_quantize_rate_rounds_down():
    assert quantize_rate(0.26, 10) == 0.2
    assert quantize_rate(0.001, 10, floor_one=True) == 0.1
    assert quantize_rate(1.0, 7) == 1.0


def test_zero_rounds_keep_only_initial_snapshot():
    hist = run_training(prepare(small_config(T=0)).setup)
    assert hist.T == 0 and len(hist.records) == 1
    assert hist.records[0].plan_source == "init"


def test_fedavg_shares_every_layer():
    hist = run_training(prepare(small_config(T=2, plan={"mode": "fedavg"})).setup)
    assert hist.spec.d_base == hist.spec.d
    for rec in hist.records[1:]:
        assert all(c.k == 1.0 and c.r == 1.0 for c in rec.clients)


def test_identical_seeds_identical_history():
    a = run_training(prepare(small_config(T=3)).setup)
    b = run_training(prepare(small_config(T=3)).setup)
    for ra, rb in zip(a.records, b.records):
        assert ra.weighted_loss == rb.weighted_loss
        assert [c.bits for c in ra.clients] == [c.bits for c in rb.clients]


def test_dense_convex_training_loss_mostly_decreases():
    cfg = small_config(T=40, eta=0.05, batch_size=64,
                       model={"arch": "logreg", "hidden": [], "base_layers": 1})
    hist = run_training(prepare(cfg).setup)
    losses = [r.weighted_loss for r in hist.records]
    ups = sum(1 for a, b in zip(losses, losses[1:]) if b > a)
    assert ups <= 0.05 * (len(losses) - 1)


def test_optimized_rounds_respect_latency_and_budget():
    cfg = small_config(T=6, plan={"mode": "optimized", "tau_max": 0.1, "energy_budget": 1.0},
                       physical={"bandwidth_mhz": 1.0})
    hist = run_training(prepare(cfg).setup)
    spent = np.zeros(3)
    for rec in hist.records[1:]:
        assert rec.plan_source == "dca"
        assert rec.latency <= 0.1 * (1 + 1e-6)
        assert sum(c.l for c in rec.clients) <= 1 + 1e-6
        spent += [c.cost.E_all for c in rec.clients]
    assert np.all(spent <= 1.0 * (1 + 1e-6))


def test_infeasible_rounds_fall_back_or_abort():
    tight = {"mode": "optimized", "tau_max": 1e-4, "energy_budget": 1.0}
    hist = run_training(prepare(small_config(T=2, plan=tight)).setup)
    assert all(r.plan_source == "fallback" for r in hist.records[1:])
    k_min = hist.records[1].clients[0].k
    assert k_min <= 0.05
    with pytest.raises(InfeasibleError):
        run_training(prepare(small_config(T=2, plan={**tight, "on_infeasible": "abort"})).setup)
