"""Round-by-round training with pruned personalization and sparsified base uploads.

Each round: draw device states, choose per-client (k, r, l), run every client
(prune, gradient at the pruned model, sparsify the base gradient, local
personalization step), aggregate the sparse base gradients on the server and
log losses, accuracies, costs and bound terms.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from lightpfl.bound import (
    AssumptionMonitor,
    objective_weights,
    pruning_penalty,
    sparsification_penalty,
)
from lightpfl.compression import (
    K_MIN,
    BitsConfig,
    apply_mask,
    approx_bits,
    exact_bits,
    make_prune_mask,
    make_sparse_mask,
)
from lightpfl.errors import ConfigError, InfeasibleError, InputError, ProtocolError
from lightpfl.mec import ChannelState, CostReport, DeviceProfile, PhysicalParams, draw_state, price_round
from lightpfl.model import (
    BoundConstants,
    MiniBatch,
    ModelSpec,
    ParamVector,
    accuracy,
    estimate_constants,
    init_params,
    loss,
    loss_and_grad,
)
from lightpfl.optimizer.dca import R_MAX_CLAMP, RoundPlan, build_instance, dca_solve

log = logging.getLogger(__name__)

PLAN_MODES = ("optimized", "fixed", "fedavg", "nocompress")


def rng_for(seed: int, client: int, round_idx: int, purpose: str) -> np.random.Generator:
    """Stream keyed by (run seed, client, round, purpose); independent of call order."""
    tag = zlib.crc32(purpose.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(client) + 1, int(round_idx), tag]))


@dataclass
class ClientState:
    id: int
    train: MiniBatch
    test: MiniBatch
    gamma: float
    pers: np.ndarray

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise InputError(f"client {self.id}: gamma must lie in (0, 1]")


@dataclass
class ServerState:
    base: np.ndarray
    round: int = 0
    eta: float = 0.01
    plans: list = field(default_factory=list)


@dataclass(frozen=True)
class SparseUpload:
    """Only base-layer coordinates and values travel; nothing personal."""

    client: int
    indices: np.ndarray
    values: np.ndarray
    d_base: int
    bits: float
    exact_bits: float
    cost: CostReport | None = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "indices", idx)
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= self.d_base):
            raise ProtocolError("upload indices must be strictly increasing and inside the base")
        if idx.size != np.asarray(self.values).size:
            raise ProtocolError("upload indices and values differ in length")

    def dense(self) -> np.ndarray:
        out = np.zeros(self.d_base)
        out[self.indices] = self.values
        return out


@dataclass
class ClientResult:
    upload: SparseUpload
    pers: np.ndarray
    grad_sq: float  # squared norm of the full-local-data gradient at the pruned model
    pruned_loss: float
    k: float
    r: float
    point: np.ndarray  # pruned iterate
    stoch_grad: np.ndarray
    full_grad: np.ndarray


def quantize_rate(rate: float, length: int, floor_one: bool = False) -> float:
    """Round a rate down to a whole number of elements (at least one if asked)."""
    if length == 0:
        return float(rate)
    count = int(np.floor(rate * length + 1e-9))
    if floor_one:
        count = max(count, 1)
    return min(count, length) / length


def sample_batch(train: MiniBatch, batch_size: int, seed: int, client: int, round_idx: int) -> MiniBatch:
    """Round ``round_idx`` (1-based) takes the next slice of a reshuffled stream of epochs."""
    n = train.size
    b = min(batch_size, n)
    start = (round_idx - 1) * b
    idx = []
    while len(idx) < b:
        epoch, off = divmod(start + len(idx), n)
        perm = rng_for(seed, client, epoch, "shuffle").permutation(n)
        idx.extend(perm[off:off + b - len(idx)].tolist())
    idx = np.asarray(idx)
    return MiniBatch(train.features[idx], train.labels[idx])


def client_round(spec: ModelSpec, client: ClientState, w_base: np.ndarray, k: float, r: float, *,
                 eta: float, round_idx: int, seed: int, batch_size: int, fpp: int = 32,
                 channel: ChannelState | None = None, device: DeviceProfile | None = None,
                 l: float | None = None, prune_strategy: str = "magnitude",
                 sparse_strategy: str = "topk") -> ClientResult:
    """One client's work for a round, in protocol order."""
    d_base, d_pers = spec.d_base, spec.d_pers
    if not (0 < k <= 1 and 0 <= r <= 1):
        raise InputError(f"client {client.id}: rates out of bounds (k={k}, r={r})")
    if w_base.size != d_base or client.pers.size != d_pers:
        raise ProtocolError("parameter lengths disagree with the model split")
    pers = client.pers
    grads_hint = None
    if d_pers:
        if prune_strategy == "importance":
            grads_hint = loss_and_grad(spec, ParamVector.join(w_base, pers), client.train)[1].pers
        pmask = make_prune_mask(pers, r, prune_strategy, grads=grads_hint,
                                seed=rng_for(seed, client.id, round_idx, "prune"))
        pers_hat = apply_mask(pers, pmask)
    else:
        pers_hat = pers.copy()
    w_hat = ParamVector.join(w_base, pers_hat)
    batch = sample_batch(client.train, batch_size, seed, client.id, round_idx)
    _, g_hat = loss_and_grad(spec, w_hat, batch)
    full_loss, full_grad = loss_and_grad(spec, w_hat, client.train)

    smask = make_sparse_mask(g_hat.base, k, sparse_strategy,
                             seed=rng_for(seed, client.id, round_idx, "sparse"))
    idx = smask.indices
    cfg = BitsConfig(fpp, d_base)
    k_real = smask.count / d_base
    bits = approx_bits(k_real, cfg) if smask.count else 0.0
    ebits = exact_bits(k_real, cfg) if smask.count else 0.0
    cost = None
    if channel is not None and device is not None and l is not None:
        cost = price_round(channel, device, bits, l, spec.d, d_base, r)
    upload = SparseUpload(client.id, idx.copy(), g_hat.base[idx].copy(), d_base, bits, ebits, cost)
    new_pers = pers_hat - eta * g_hat.pers
    return ClientResult(upload, new_pers, float(full_grad.values @ full_grad.values),
                        float(full_loss), k_real, r, w_hat.values, g_hat.values, full_grad.values)


def server_aggregate(uploads, gamma, w_base: np.ndarray, eta: float) -> np.ndarray:
    """w^B - eta sum_n gamma_n g_n, folded in ascending client id."""
    gamma = np.asarray(gamma, dtype=np.float64)
    by_id: dict[int, SparseUpload] = {}
    for up in uploads:
        if up.client in by_id:
            raise ProtocolError(f"duplicate upload from client {up.client}")
        by_id[up.client] = up
    missing = sorted(set(range(gamma.size)) - set(by_id))
    extra = sorted(set(by_id) - set(range(gamma.size)))
    if missing or extra:
        raise ProtocolError(f"uploads missing for {missing}, unknown clients {extra}")
    acc = np.zeros_like(w_base, dtype=np.float64)
    for n in range(gamma.size):
        up = by_id[n]
        if up.d_base != w_base.size:
            raise ProtocolError(f"client {n} upload has the wrong base length")
        acc[up.indices] += gamma[n] * up.values
    return w_base - eta * acc


# -- run-level orchestration ---------------------------------------------------

@dataclass
class PlanSettings:
    mode: str = "optimized"
    k: float = 1.0
    r: float = 1.0
    tau_max: float = 1.0
    energy_budget: float = 10.0  # joules per client for the whole run
    on_infeasible: str = "fallback"
    k_min: float = K_MIN
    r_max: float = R_MAX_CLAMP
    max_iter: int = 50
    tol: float = 1e-4
    tol_ip: float = 1e-6
    obj_tol: float | None = 1e-5
    prune_strategy: str = "magnitude"
    sparse_strategy: str = "topk"
    probe_count: int = 4

    def __post_init__(self):
        if self.mode not in PLAN_MODES:
            raise ConfigError(f"plan.mode must be one of {PLAN_MODES}")
        if self.on_infeasible not in ("fallback", "abort"):
            raise ConfigError("plan.on_infeasible must be 'fallback' or 'abort'")
        if not (0 < self.k <= 1 and 0 <= self.r <= 1):
            raise ConfigError("plan.k must lie in (0, 1] and plan.r in [0, 1]")


@dataclass
class TrainingSetup:
    spec: ModelSpec
    train: list
    test: list
    phys: PhysicalParams
    plan: PlanSettings
    eta: float = 0.01
    batch_size: int = 32
    T: int = 50
    seed: int = 0
    fpp: int = 32

    def __post_init__(self):
        if len(self.train) != len(self.test) or not self.train:
            raise ConfigError("need matching, nonempty train and test splits")
        if self.T < 0:
            raise ConfigError("T must be nonnegative")


@dataclass
class ClientRecord:
    client: int
    gamma: float
    k: float
    r: float
    l: float
    bits: float
    exact_bits: float
    cost: CostReport
    train_loss: float
    test_acc: float
    grad_sq: float
    pruning_penalty: float


@dataclass
class RoundRecord:
    round: int
    clients: list
    weighted_loss: float
    weighted_acc: float
    latency: float
    sparsification_penalty: float
    plan_source: str
    solver_iterations: int = 0
    solver_converged: bool = True
    objective: float = 0.0
    max_violation: float = 0.0
    tau_max: float | None = None


@dataclass
class RunHistory:
    records: list
    constants: BoundConstants
    gamma: np.ndarray
    mode: str
    initial_losses: np.ndarray
    monitor: AssumptionMonitor
    spec: ModelSpec

    @property
    def T(self) -> int:
        return len(self.records) - 1

    def rate_history(self):
        """(r, k) arrays of shape (T, N) over the training rounds."""
        rs = np.array([[c.r for c in rec.clients] for rec in self.records[1:]])
        ks = np.array([[c.k for c in rec.clients] for rec in self.records[1:]])
        return rs.reshape(self.T, -1), ks.reshape(self.T, -1)

    def mean_grad_sq(self) -> float:
        """Time average of sum_n gamma_n ||grad F_n at the pruned model||^2."""
        if self.T == 0:
            return 0.0
        return float(np.mean([sum(c.gamma * c.grad_sq for c in rec.clients)
                              for rec in self.records[1:]]))


def weights_from_sizes(sizes) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=np.float64)
    return sizes / sizes.sum()


def _plan_for_round(setup: TrainingSetup, spec: ModelSpec, gamma, chans, devs, caps, weights) -> RoundPlan:
    ps = setup.plan
    N = len(chans)
    if ps.mode in ("fedavg", "nocompress"):
        return RoundPlan(np.ones(N), np.ones(N), np.full(N, 1.0 / N), 0.0, 0, True, source=ps.mode)
    if ps.mode == "fixed":
        return RoundPlan(np.full(N, ps.k), np.full(N, ps.r), np.full(N, 1.0 / N), 0.0, 0, True,
                         source="fixed")
    try:
        if np.any(caps <= 0):
            n = int(np.argmin(caps))
            raise InfeasibleError(f"client {n}: energy budget exhausted", binding="energy", client=n)
        inst = build_instance(chans, devs, None, gamma, d=spec.d, d_base=spec.d_base, fpp=setup.fpp,
                              tau_max=ps.tau_max, energy_caps=caps, k_min=ps.k_min, r_max=ps.r_max,
                              weights=weights)
        return dca_solve(inst, max_iter=ps.max_iter, tol=ps.tol, tol_ip=ps.tol_ip, obj_tol=ps.obj_tol)
    except InfeasibleError as exc:
        if ps.on_infeasible == "abort":
            raise
        log.warning("round plan infeasible (%s); using fallback", exc)
        k = np.full(N, ps.k_min)
        r = np.ones(N)
        return RoundPlan(k, r, np.full(N, 1.0 / N), 0.0, 0, False, source="fallback")


def _evaluate(spec, clients, base):
    losses, accs = [], []
    for c in clients:
        w = ParamVector.join(base, c.pers)
        losses.append(loss(spec, w, c.train))
        accs.append(accuracy(spec, w, c.test.features, c.test.labels))
    return np.array(losses), np.array(accs)


def run_training(setup: TrainingSetup) -> RunHistory:
    ps = setup.plan
    spec = setup.spec.with_base_layers(setup.spec.n_layers) if ps.mode == "fedavg" else setup.spec
    N = len(setup.train)
    gamma = weights_from_sizes([tr.size for tr in setup.train])
    w0 = init_params(spec, np.random.default_rng(np.random.SeedSequence([setup.seed, 0xA11])))
    clients = [ClientState(n, setup.train[n], setup.test[n], float(gamma[n]), w0.pers.copy())
               for n in range(N)]
    server = ServerState(w0.base.copy(), 0, setup.eta)
    T = setup.T
    constants = estimate_constants(spec, setup.train, max(ps.probe_count, 2), setup.seed,
                                   eta=setup.eta, T=max(T, 1), params=w0, batch_size=setup.batch_size)
    weights = objective_weights(constants)
    weights = (max(weights[0], 0.0), max(weights[1], 0.0))
    monitor = AssumptionMonitor(constants)

    losses, accs = _evaluate(spec, clients, server.base)
    zero = CostReport(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    init_rec = RoundRecord(
        0, [ClientRecord(n, float(gamma[n]), 1.0, 1.0, 1.0 / N, 0.0, 0.0, zero, float(losses[n]),
                         float(accs[n]), 0.0, 0.0) for n in range(N)],
        float(gamma @ losses), float(gamma @ accs), 0.0, 0.0, "init")
    records = [init_rec]
    spent = np.zeros(N)
    prev_pruned: dict[int, tuple] = {}

    for t in range(1, T + 1):
        states = [draw_state(setup.phys, min(setup.batch_size, clients[n].train.size),
                             rng_for(setup.seed, n, t, "channel")) for n in range(N)]
        chans = [s[0] for s in states]
        devs = [s[1] for s in states]
        caps = (ps.energy_budget - spent) / (T - t + 1)
        plan = _plan_for_round(setup, spec, gamma, chans, devs, caps, weights)
        server.plans.append(plan)

        results = []
        crecs = []
        for n, c in enumerate(clients):
            k_q = quantize_rate(float(plan.k[n]), spec.d_base, floor_one=True)
            r_q = quantize_rate(float(min(plan.r[n], 1.0)), spec.d_pers)
            res = client_round(spec, c, server.base, k_q, r_q, eta=setup.eta, round_idx=t,
                               seed=setup.seed, batch_size=setup.batch_size, fpp=setup.fpp,
                               channel=chans[n], device=devs[n], l=float(plan.l[n]),
                               prune_strategy=ps.prune_strategy, sparse_strategy=ps.sparse_strategy)
            results.append(res)
        new_base = server_aggregate([res.upload for res in results], gamma, server.base, setup.eta)

        for c, res in zip(clients, results):
            c.pers = res.pers
        server.base = new_base
        server.round = t
        losses, accs = _evaluate(spec, clients, server.base)
        for n, res in enumerate(results):
            cost = res.upload.cost
            spent[n] += cost.E_all
            crecs.append(ClientRecord(n, float(gamma[n]), res.k, res.r, float(plan.l[n]),
                                      res.upload.bits, res.upload.exact_bits, cost,
                                      float(losses[n]), float(accs[n]), res.grad_sq,
                                      float(pruning_penalty(res.r, constants))))
        for n, res in enumerate(results):
            monitor.observe(res.stoch_grad, res.full_grad, res.point)
            if n in prev_pruned:
                w_prev, f_prev, g_prev = prev_pruned[n]
                monitor.observe_pair(w_prev, res.point, f_prev, res.pruned_loss, g_prev, res.full_grad)
            prev_pruned[n] = (res.point, res.pruned_loss, res.full_grad)
        p2 = sparsification_penalty(np.array([c.k for c in crecs]), gamma, constants)
        records.append(RoundRecord(
            t, crecs, float(gamma @ losses), float(gamma @ accs),
            max(c.cost.tau_all for c in crecs), p2, plan.source, plan.iterations, plan.converged,
            float(plan.objective), float(plan.max_violation),
            ps.tau_max if ps.mode == "optimized" else None))
    init_losses = np.array([c.train_loss for c in init_rec.clients])
    return RunHistory(records, constants, gamma, ps.mode, init_losses, monitor, spec)

