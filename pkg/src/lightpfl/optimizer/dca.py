"""Per-round joint choice of sparsification rate, pruning rate and bandwidth.

The round problem maximizes the convergence surrogate
``-sum_n gamma_n (prune_weight sqrt(1 - r_n) - sparse_weight k_n)`` under a latency cap, a
per-round energy cap and an FDMA bandwidth budget.  With a latency slack z,
a bandwidth-time product u = l z and a square-root slack v (u <= v^2) the
problem becomes a difference-of-convex program; each outer iteration
linearizes the concave parts at the current point and solves the resulting
convex program with the log-barrier method in :mod:`barrier`.

Internally times are scaled by tau_max (z~ = z / tau_max, u~ = u / tau_max,
v~ = v / sqrt(tau_max)) and every constraint is normalized to O(1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from lightpfl.bound import objective_weights, surrogate_objective
from lightpfl.compression import K_MIN, BitsConfig, approx_bits
from lightpfl.errors import DomainError, InfeasibleError, InputError
from lightpfl.mec import ChannelState, comp_costs, uplink_rate
from lightpfl.model import BoundConstants
from lightpfl.optimizer.barrier import LinearBlock, barrier_minimize, phase_one

LN2 = math.log(2.0)
R_MAX_CLAMP = 0.999


@dataclass
class OptimizationInstance:
    gamma: np.ndarray
    prune_weight: float
    sparse_weight: float
    channels: list
    devices: list
    d: int
    d_base: int
    fpp: int
    tau_max: float
    energy_caps: np.ndarray
    k_min: float = K_MIN
    r_max: float = R_MAX_CLAMP

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.energy_caps = np.asarray(self.energy_caps, dtype=np.float64)
        N = self.gamma.size
        if N == 0:
            raise InputError("instance needs at least one client")
        if len(self.channels) != N or len(self.devices) != N or self.energy_caps.size != N:
            raise InputError("channels, devices, energy caps and gamma must align")
        if not self.tau_max > 0:
            raise InputError("tau_max must be positive")
        if np.any(self.energy_caps <= 0):
            raise InputError("energy caps must be positive")
        if not 0 < self.k_min <= 0.01:
            raise InputError("k_min must lie in (0, 0.01]")
        if not 0.99 <= self.r_max < 1:
            raise InputError("r_max must lie in [0.99, 1)")
        if self.prune_weight < 0 or self.sparse_weight < 0:
            raise InputError("weights coefficients must be nonnegative")

    @property
    def N(self) -> int:
        return self.gamma.size

    @property
    def d_pers(self) -> int:
        return self.d - self.d_base

    @property
    def bits_cfg(self) -> BitsConfig:
        return BitsConfig(self.fpp, self.d_base)

    @property
    def full_bits(self) -> float:
        return self.d_base * (self.fpp + 1.0)

    def comp_latency(self, r) -> np.ndarray:
        r = np.broadcast_to(np.asarray(r, dtype=np.float64), (self.N,))
        return np.array([comp_costs(dev, self.d, self.d_base, float(ri))[0]
                         for dev, ri in zip(self.devices, r)])

    def comp_energy(self, r) -> np.ndarray:
        r = np.broadcast_to(np.asarray(r, dtype=np.float64), (self.N,))
        return np.array([comp_costs(dev, self.d, self.d_base, float(ri))[1]
                         for dev, ri in zip(self.devices, r)])

    # affine pieces of the compute cost: tau_comp = lat0 + lat1 * r
    @property
    def lat0(self):
        return self.comp_latency(0.0)

    @property
    def lat1(self):
        return self.comp_latency(1.0) - self.lat0

    @property
    def cpu_energy_coef(self):
        return np.array([dev.zeta * dev.omega**3 for dev in self.devices])

    @property
    def power(self):
        return np.array([ch.p for ch in self.channels])

    @property
    def snr(self):
        return np.array([ch.snr_coefficient for ch in self.channels])

    @property
    def bandwidth(self) -> float:
        return self.channels[0].W_total

    def payload_bits(self, k) -> np.ndarray:
        return np.array([approx_bits(float(ki), self.bits_cfg) for ki in np.atleast_1d(k)])

    def rates(self, l) -> np.ndarray:
        return np.array([uplink_rate(ch, float(li)) for ch, li in zip(self.channels, np.atleast_1d(l))])


# -- convex building blocks ---------------------------------------------------

def neg_bits(k, d_base: int, fpp: int):
    """-k d^B (log2(1/k) + FPP + 1): convex, minus the payload bit count."""
    k = np.asarray(k, dtype=np.float64)
    if np.any(k <= 0) or np.any(k > 1):
        raise DomainError("neg_bits needs 0 < k <= 1")
    return -k * d_base * (np.log2(1.0 / k) + fpp + 1.0)


def neg_bits_grad(k, d_base: int, fpp: int):
    k = np.asarray(k, dtype=np.float64)
    if np.any(k <= 0) or np.any(k > 1):
        raise DomainError("neg_bits needs 0 < k <= 1")
    return d_base * (np.log2(k) + 1.0 / LN2 - fpp - 1.0)


def pruning_term(r, prune_weight: float, gamma):
    r = np.asarray(r, dtype=np.float64)
    if np.any(r >= 1) or np.any(r < 0):
        raise DomainError("pruning_term needs 0 <= r < 1")
    return -prune_weight * np.asarray(gamma) * np.sqrt(1.0 - r)


def pruning_term_grad(r, prune_weight: float, gamma):
    r = np.asarray(r, dtype=np.float64)
    if np.any(r >= 1) or np.any(r < 0):
        raise DomainError("pruning_term needs 0 <= r < 1")
    return prune_weight * np.asarray(gamma) / (2.0 * np.sqrt(1.0 - r))


def neg_rate(l, ch: ChannelState):
    """Minus the uplink rate at bandwidth fraction l (convex in l)."""
    return -uplink_rate(ch, float(l))


def neg_rate_perspective(u, z, ch: ChannelState):
    """Perspective u W log2(1 + z h p / (u N0 W)), negated; 0 at u = 0."""
    u = float(u)
    z = float(z)
    if u < 0 or z < 0:
        raise DomainError("neg_rate_perspective needs u >= 0 and z >= 0")
    if u == 0.0:
        return 0.0
    return -u * ch.W_total * math.log2(1.0 + z * ch.snr_coefficient / u)


def sparsity_term(k, sparse_weight: float, gamma):
    return -sparse_weight * np.asarray(gamma) * np.asarray(k, dtype=np.float64)


# -- nonlinear constraint blocks in scaled variables --------------------------

class _RateBlock:
    """tau W/(ln2 S) * (-u ln(1 + c z/u)) - lin_phi1(k)/S <= 0 for every client."""

    def __init__(self, N, snr, q, k_ref, phi_ref, dphi_ref, s_full):
        self.N = N
        self.c = snr
        self.q = q
        self.k_ref = k_ref
        self.phi_ref = phi_ref / s_full
        self.dphi_ref = dphi_ref / s_full

    @property
    def size(self):
        return self.N

    def _parts(self, x):
        N = self.N
        return x[:N], x[2 * N:3 * N], x[3 * N:4 * N]

    def in_domain(self, x):
        _, z, u = self._parts(x)
        return bool(np.all(u > 0) and np.all(z > 0))

    def values(self, x):
        k, z, u = self._parts(x)
        a = self.c * z / u
        return -self.q * u * np.log1p(a) - (self.phi_ref + self.dphi_ref * (k - self.k_ref))

    def jacobian(self, x):
        N = self.N
        k, z, u = self._parts(x)
        a = self.c * z / u
        J = np.zeros((N, 5 * N))
        idx = np.arange(N)
        J[idx, idx] = -self.dphi_ref
        J[idx, 2 * N + idx] = -self.q * self.c / (1.0 + a)
        J[idx, 3 * N + idx] = -self.q * (np.log1p(a) - a / (1.0 + a))
        return J

    def hessian(self, x, weights):
        N = self.N
        _, z, u = self._parts(x)
        a = self.c * z / u
        base = weights * self.q * self.c**2 / (u * (1.0 + a) ** 2)
        H = np.zeros((5 * N, 5 * N))
        iz = 2 * N + np.arange(N)
        iu = 3 * N + np.arange(N)
        H[iu, iu] = base * (z / u) ** 2
        H[iz, iz] = base
        H[iu, iz] = H[iz, iu] = -base * z / u
        return H


class _BandwidthBlock:
    """sum_n v_n^2 / z_n - 1 <= 0."""

    def __init__(self, N):
        self.N = N

    size = 1

    def in_domain(self, x):
        return bool(np.all(x[2 * self.N:3 * self.N] > 0))

    def values(self, x):
        N = self.N
        z, v = x[2 * N:3 * N], x[4 * N:]
        return np.array([np.sum(v**2 / z) - 1.0])

    def jacobian(self, x):
        N = self.N
        z, v = x[2 * N:3 * N], x[4 * N:]
        J = np.zeros((1, 5 * N))
        J[0, 2 * N:3 * N] = -(v**2) / z**2
        J[0, 4 * N:] = 2.0 * v / z
        return J

    def hessian(self, x, weights):
        N = self.N
        z, v = x[2 * N:3 * N], x[4 * N:]
        w = float(weights[0])
        H = np.zeros((5 * N, 5 * N))
        iz = 2 * N + np.arange(N)
        iv = 4 * N + np.arange(N)
        H[iv, iv] = w * 2.0 / z
        H[iz, iz] = w * 2.0 * v**2 / z**3
        H[iv, iz] = H[iz, iv] = -w * 2.0 * v / z**2
        return H


@dataclass
class DcaIterate:
    k: np.ndarray
    r: np.ndarray
    z: np.ndarray
    u: np.ndarray
    v: np.ndarray
    converged: bool = True
    gap: float = 0.0
    newton_steps: int = 0

    def copy(self) -> "DcaIterate":
        return DcaIterate(self.k.copy(), self.r.copy(), self.z.copy(), self.u.copy(),
                          self.v.copy(), self.converged, self.gap, self.newton_steps)

    @property
    def bandwidth(self) -> np.ndarray:
        return self.u / self.z


@dataclass
class RoundPlan:
    k: np.ndarray
    r: np.ndarray
    l: np.ndarray
    objective: float
    iterations: int
    converged: bool
    objective_trace: list = field(default_factory=list)
    max_violation: float = 0.0
    source: str = "dca"
    iterate: DcaIterate | None = None

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.float64)
        self.r = np.asarray(self.r, dtype=np.float64)
        self.l = np.asarray(self.l, dtype=np.float64)


def _pack(it: DcaIterate, tau: float) -> np.ndarray:
    return np.concatenate([it.k, it.r, it.z / tau, it.u / tau, it.v / math.sqrt(tau)])


def _unpack(x: np.ndarray, N: int, tau: float) -> DcaIterate:
    return DcaIterate(x[:N].copy(), x[N:2 * N].copy(), x[2 * N:3 * N] * tau,
                      x[3 * N:4 * N] * tau, x[4 * N:] * math.sqrt(tau))


def _linear_block(inst: OptimizationInstance, v_ref: np.ndarray) -> LinearBlock:
    N = inst.N
    tau = inst.tau_max
    lat0, lat1 = inst.lat0, inst.lat1
    ecoef = inst.cpu_energy_coef
    caps = inst.energy_caps
    p = inst.power
    rows, rhs = [], []

    def row():
        return np.zeros(5 * N)

    for n in range(N):
        ik, ir, iz, iu, iv = n, N + n, 2 * N + n, 3 * N + n, 4 * N + n
        a = row(); a[ik] = -1.0; rows.append(a); rhs.append(-inst.k_min)
        a = row(); a[ik] = 1.0; rows.append(a); rhs.append(1.0)
        a = row(); a[ir] = -1.0; rows.append(a); rhs.append(0.0)
        a = row(); a[ir] = 1.0; rows.append(a); rhs.append(inst.r_max)
        a = row(); a[ir] = lat1[n] / tau; a[iz] = 1.0; rows.append(a); rhs.append(1.0 - lat0[n] / tau)
        a = row(); a[ir] = ecoef[n] * lat1[n] / caps[n]; a[iz] = p[n] * tau / caps[n]
        rows.append(a); rhs.append(1.0 - ecoef[n] * lat0[n] / caps[n])
        a = row(); a[iu] = -1.0; rows.append(a); rhs.append(0.0)
        a = row(); a[iu] = 1.0; a[iz] = -1.0; rows.append(a); rhs.append(0.0)
        a = row(); a[iu] = 1.0; a[iv] = -2.0 * v_ref[n]; rows.append(a); rhs.append(-v_ref[n] ** 2)
        a = row(); a[iv] = -1.0; rows.append(a); rhs.append(0.0)
    return LinearBlock(np.array(rows), np.array(rhs))


def _subproblem(inst: OptimizationInstance, ref: DcaIterate):
    N = inst.N
    tau = inst.tau_max
    x_ref = _pack(ref, tau)
    v_ref = x_ref[4 * N:]
    s_full = inst.full_bits
    q = tau * inst.bandwidth / (LN2 * s_full)
    blocks = [
        _linear_block(inst, v_ref),
        _RateBlock(N, inst.snr, q, ref.k, neg_bits(ref.k, inst.d_base, inst.fpp),
                   neg_bits_grad(ref.k, inst.d_base, inst.fpp), s_full),
        _BandwidthBlock(N),
    ]
    c = np.zeros(5 * N)
    c[:N] = -inst.sparse_weight * inst.gamma
    c[N:2 * N] = -pruning_term_grad(ref.r, inst.prune_weight, inst.gamma)
    scale = float(np.max(np.abs(c))) or 1.0
    free = np.ones(5 * N, dtype=bool)
    if inst.sparse_weight == 0:
        free[:N] = False
    if inst.prune_weight == 0:
        free[N:2 * N] = False
    return c / scale, scale, blocks, free, x_ref


def solve_subproblem(inst: OptimizationInstance, prev: DcaIterate, tol: float = 1e-6) -> DcaIterate:
    """Convex program linearized at ``prev``; returns its barrier solution.

    ``prev`` must be feasible for the linearized constraints.  On failure the
    last strictly feasible point is returned with ``converged=False``.
    """
    N = inst.N
    c, scale, blocks, free, x0 = _subproblem(inst, prev)
    x_start = phase_one(blocks, x0, free=free)
    if x_start is None:
        out = prev.copy()
        out.converged = False
        return out
    res = barrier_minimize(c, blocks, x_start, eps=tol, free=free)
    it = _unpack(res.x, N, inst.tau_max)
    it.converged = res.converged
    it.gap = res.gap * scale
    it.newton_steps = res.newton_steps
    return it


# -- feasibility probe and initialization -------------------------------------

def _max_feasible_k(inst: OptimizationInstance, n: int, r: float, l: float) -> float:
    """Largest k in [k_min, 1] meeting latency and energy caps at (r, l); bisection."""
    ch, dev = inst.channels[n], inst.devices[n]
    t_c, e_c = comp_costs(dev, inst.d, inst.d_base, r)
    rate = uplink_rate(ch, l)
    budget = min(inst.tau_max - t_c, (inst.energy_caps[n] - e_c) / ch.p)

    def ok(k):
        return approx_bits(k, inst.bits_cfg) / rate <= budget

    if not ok(inst.k_min):
        return float("nan")
    if ok(1.0):
        return 1.0
    lo, hi = inst.k_min, 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


def feasibility_probe(inst: OptimizationInstance) -> None:
    """Raise :class:`InfeasibleError` unless (k_min, r=0, equal l) meets every cap."""
    N = inst.N
    l = 1.0 / N
    for n in range(N):
        ch, dev = inst.channels[n], inst.devices[n]
        t_c, e_c = comp_costs(dev, inst.d, inst.d_base, 0.0)
        if t_c >= inst.tau_max:
            raise InfeasibleError(
                f"client {n}: compute latency {t_c:.4g}s at r=0 exceeds tau_max {inst.tau_max:.4g}s",
                binding="compute", client=n)
        if e_c >= inst.energy_caps[n]:
            raise InfeasibleError(
                f"client {n}: compute energy {e_c:.4g}J at r=0 exceeds cap {inst.energy_caps[n]:.4g}J",
                binding="energy", client=n)
        t_m = approx_bits(inst.k_min, inst.bits_cfg) / uplink_rate(ch, l)
        if t_c + t_m >= inst.tau_max:
            raise InfeasibleError(
                f"client {n}: latency {t_c + t_m:.4g}s at k_min exceeds tau_max",
                binding="communication", client=n)
        if e_c + ch.p * t_m >= inst.energy_caps[n]:
            raise InfeasibleError(
                f"client {n}: energy {e_c + ch.p * t_m:.4g}J at k_min exceeds cap",
                binding="energy", client=n)


def build_instance(channels, devices, constants: BoundConstants, gamma, *, d: int, d_base: int,
                   fpp: int, tau_max: float, energy_caps, k_min: float = K_MIN,
                   r_max: float = R_MAX_CLAMP, weights=None) -> OptimizationInstance:
    """Assemble and probe one round's instance.

    ``energy_caps`` are per-round caps (the caller amortizes the run budget).
    ``weights`` overrides the coefficients derived from ``constants``.
    """
    if len(channels) == 0:
        raise InputError("instance needs at least one client")
    t1, t2 = objective_weights(constants) if weights is None else weights
    inst = OptimizationInstance(gamma=gamma, prune_weight=max(t1, 0.0), sparse_weight=max(t2, 0.0),
                                channels=list(channels), devices=list(devices), d=d,
                                d_base=d_base, fpp=fpp, tau_max=tau_max,
                                energy_caps=energy_caps, k_min=k_min, r_max=r_max)
    feasibility_probe(inst)
    return inst


def initial_iterate(inst: OptimizationInstance, r0: float = 0.5) -> DcaIterate:
    """Equal bandwidth, r = 0.5 (lowered if needed), and the largest feasible k."""
    N = inst.N
    l = 1.0 / N
    k = np.empty(N)
    r = np.empty(N)
    for n in range(N):
        rn = r0
        kn = _max_feasible_k(inst, n, rn, l)
        while not np.isfinite(kn) and rn > 0:
            rn = max(rn - 0.05, 0.0) if rn > 0.05 else 0.0
            kn = _max_feasible_k(inst, n, rn, l)
        if not np.isfinite(kn):
            raise InfeasibleError(f"client {n}: no feasible starting point", binding="init", client=n)
        k[n], r[n] = max(inst.k_min, kn), rn
    z = inst.payload_bits(k) / inst.rates(np.full(N, l))
    u = l * z
    return DcaIterate(k, r, z, u, np.sqrt(u))


def _as_iterate(inst, init) -> DcaIterate:
    if init is None:
        return initial_iterate(inst)
    if isinstance(init, DcaIterate):
        return init.copy()
    # a previous RoundPlan: rebuild slacks from (k, r, l)
    k = np.clip(np.asarray(init.k, dtype=np.float64), inst.k_min, 1.0)
    r = np.clip(np.asarray(init.r, dtype=np.float64), 0.0, inst.r_max)
    l = np.asarray(init.l, dtype=np.float64)
    z = inst.payload_bits(k) / inst.rates(l)
    u = l * z
    return DcaIterate(k, r, z, u, np.sqrt(u))


def _iterate_feasible(inst: OptimizationInstance, it: DcaIterate) -> bool:
    report = feasibility_check(_plan_from_iterate(inst, it, [], 0, True), inst)
    return report.max_violation <= 1e-9


def _recover_bandwidth(it: DcaIterate) -> np.ndarray:
    l = it.u / it.z
    total = float(l.sum())
    # rates grow with l, so spreading unused bandwidth keeps every cap satisfied
    return l / total if total > 0 else l


def _plan_from_iterate(inst, it, trace, iters, converged, source="dca") -> RoundPlan:
    obj = surrogate_objective(it.r, it.k, inst.gamma, inst.prune_weight, inst.sparse_weight)
    return RoundPlan(k=it.k.copy(), r=it.r.copy(), l=_recover_bandwidth(it), objective=obj,
                     iterations=iters, converged=converged, objective_trace=list(trace),
                     source=source, iterate=it.copy())


def dca_solve(inst: OptimizationInstance, init=None, max_iter: int = 50, tol: float = 1e-4,
              tol_ip: float = 1e-6, descent_slack: float = 1e-8, obj_tol: float | None = 1e-5) -> RoundPlan:
    """Difference-of-convex iterations from a feasible start.

    Stops when every scaled variable moves by at most ``tol``, when one
    iteration lowers the objective by less than ``obj_tol`` times its range
    sum_n gamma_n (prune_weight + sparse_weight) (``None`` disables this), or after
    ``max_iter`` subproblems.  A subproblem answer that would raise the
    objective by less than its own barrier gap ends the loop at the previous
    point; a larger increase indicates a broken invariant and asserts.
    """
    it = _as_iterate(inst, init)
    if init is not None and not _iterate_feasible(inst, it):
        it = initial_iterate(inst)
    obj = surrogate_objective(it.r, it.k, inst.gamma, inst.prune_weight, inst.sparse_weight)
    trace = [obj]
    converged = False
    iters = 0
    tau = inst.tau_max
    obj_floor = None if obj_tol is None else obj_tol * float(np.sum(inst.gamma)) * (inst.prune_weight + inst.sparse_weight)
    for iters in range(1, max_iter + 1):
        new = solve_subproblem(inst, it, tol_ip)
        if not new.converged and np.allclose(_pack(new, tau), _pack(it, tau)):
            break
        new_obj = surrogate_objective(new.r, new.k, inst.gamma, inst.prune_weight, inst.sparse_weight)
        if new_obj > obj + descent_slack:
            assert new_obj <= obj + new.gap + descent_slack, (
                f"DCA objective rose from {obj!r} to {new_obj!r}")
            converged = True
            break
        delta = float(np.max(np.abs(_pack(new, tau) - _pack(it, tau))))
        gain = obj - new_obj
        it, obj = new, new_obj
        trace.append(obj)
        if delta <= tol or (obj_floor is not None and gain <= obj_floor):
            converged = True
            break
    plan = _plan_from_iterate(inst, it, trace, iters, converged)
    plan.max_violation = feasibility_check(plan, inst).max_violation
    return plan


def fallback_plan(inst: OptimizationInstance) -> RoundPlan:
    N = inst.N
    k = np.full(N, inst.k_min)
    r = np.ones(N)
    return RoundPlan(k=k, r=r, l=np.full(N, 1.0 / N),
                     objective=surrogate_objective(r, k, inst.gamma, inst.prune_weight, inst.sparse_weight),
                     iterations=0, converged=False, source="fallback")


@dataclass
class FeasibilityReport:
    max_violation: float
    violations: dict
    worst: str | None

    @property
    def ok(self) -> bool:
        return self.max_violation <= 1e-6


def feasibility_check(plan: RoundPlan, inst: OptimizationInstance) -> FeasibilityReport:
    """Scaled violation of every round constraint (positive means violated)."""
    N = inst.N
    v: dict[str, float] = {}
    k, r, l = plan.k, plan.r, plan.l
    for n in range(N):
        v[f"k_box[{n}]"] = max(inst.k_min - k[n], k[n] - 1.0)
        v[f"r_box[{n}]"] = max(-r[n], r[n] - 1.0)
        v[f"l_box[{n}]"] = max(-l[n], l[n] - 1.0)
    v["bandwidth_sum"] = float(np.sum(l) - 1.0)
    for n in range(N):
        ch, dev = inst.channels[n], inst.devices[n]
        rr = min(max(r[n], 0.0), 1.0)
        t_c, e_c = comp_costs(dev, inst.d, inst.d_base, rr)
        if 0 < k[n] <= 1 and l[n] > 0:
            t_m = approx_bits(float(k[n]), inst.bits_cfg) / uplink_rate(ch, float(min(l[n], 1.0)))
        elif k[n] <= 0:
            t_m = 0.0
        else:
            t_m = math.inf
        v[f"latency[{n}]"] = (t_c + t_m - inst.tau_max) / inst.tau_max
        v[f"energy[{n}]"] = (e_c + ch.p * t_m - inst.energy_caps[n]) / inst.energy_caps[n]
    worst = max(v, key=v.get)
    mv = max(0.0, v[worst])
    return FeasibilityReport(mv, {kk: vv for kk, vv in v.items() if vv > 0}, worst if mv > 0 else None)
