"""Uplink and on-device cost model.

All quantities are SI: watts, hertz, W/Hz, seconds, joules, cycles/s.
dBm values are converted once, when configuration is loaded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lightpfl.errors import InputError

FLOPS_PER_CYCLE = 2.0


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    return 10.0 * math.log10(watt) + 30.0


@dataclass(frozen=True)
class ChannelState:
    h: float  # linear power gain
    p: float  # transmit power, W
    W_total: float  # Hz
    N0: float  # W/Hz

    def __post_init__(self):
        for name in ("h", "p", "W_total", "N0"):
            if not getattr(self, name) > 0:
                raise InputError(f"ChannelState.{name} must be positive")

    @property
    def snr_coefficient(self) -> float:
        """h p / (N0 W): the SNR at full bandwidth."""
        return self.h * self.p / (self.N0 * self.W_total)


@dataclass(frozen=True)
class DeviceProfile:
    omega: float  # CPU frequency, cycles/s
    zeta: float  # energy coefficient, J s^2
    C: float  # cycles per sample
    b: int  # batch size

    def __post_init__(self):
        for name in ("omega", "zeta", "C", "b"):
            if not getattr(self, name) > 0:
                raise InputError(f"DeviceProfile.{name} must be positive")
        if int(self.b) != self.b:
            raise InputError("batch size must be integral")


@dataclass(frozen=True)
class CostReport:
    tau_comm: float
    tau_comp: float
    E_comm: float
    E_comp: float
    bits: float
    cycles: float = 0.0

    @property
    def tau_all(self) -> float:
        return self.tau_comm + self.tau_comp

    @property
    def E_all(self) -> float:
        return self.E_comm + self.E_comp

    @property
    def flops(self) -> float:
        return FLOPS_PER_CYCLE * self.cycles


def path_loss_gain(distance_km: float, coverage_km: float | None = None,
                   pl_const: float = 128.1, pl_slope: float = 37.6) -> float:
    """Linear gain for path loss ``pl_const + pl_slope * log10(distance)`` dB."""
    if not distance_km > 0:
        raise InputError("distance must be positive")
    if coverage_km is not None and distance_km > coverage_km:
        raise InputError(f"distance {distance_km} km beyond coverage radius {coverage_km} km")
    return 10.0 ** (-(pl_const + pl_slope * math.log10(distance_km)) / 10.0)


def uplink_rate(ch: ChannelState, l: float) -> float:
    """FDMA rate l W log2(1 + h p / (N0 l W)) in bit/s."""
    if not l > 0:
        raise InputError("bandwidth fraction must be positive")
    if l > 1:
        raise InputError("bandwidth fraction must not exceed 1")
    bw = l * ch.W_total
    return bw * math.log2(1.0 + ch.h * ch.p / (ch.N0 * bw))


def comm_costs(bits: float, rate: float, p: float) -> tuple[float, float]:
    if bits < 0:
        raise InputError("bits must be nonnegative")
    if bits == 0:
        return 0.0, 0.0
    if not rate > 0:
        raise InputError("rate must be positive")
    tau = bits / rate
    return tau, p * tau


def compute_cycles(dev: DeviceProfile, d: int, d_base: int, r: float) -> float:
    return dev.b * dev.C * (d_base + r * (d - d_base)) / d


def comp_costs(dev: DeviceProfile, d: int, d_base: int, r: float) -> tuple[float, float]:
    """Latency b C (d^B + r d^P) / (omega d) and energy zeta omega^3 tau."""
    if not 0.0 <= r <= 1.0:
        raise InputError("pruning rate outside [0, 1]")
    if not 0 <= d_base <= d or d < 1:
        raise InputError("need 0 <= d_base <= d and d >= 1")
    tau = compute_cycles(dev, d, d_base, r) / dev.omega
    return tau, dev.zeta * dev.omega**3 * tau


def price_round(ch: ChannelState, dev: DeviceProfile, bits: float, l: float,
                d: int, d_base: int, r: float) -> CostReport:
    tau_c, e_c = comm_costs(bits, uplink_rate(ch, l), ch.p) if bits > 0 else (0.0, 0.0)
    tau_p, e_p = comp_costs(dev, d, d_base, r)
    return CostReport(tau_c, tau_p, e_c, e_p, bits, compute_cycles(dev, d, d_base, r))


@dataclass(frozen=True)
class PhysicalParams:
    """Ranges that per-round device states are drawn from (SI units)."""

    W_total: float = 10e6
    N0: float = dbm_to_watt(-174.0)
    p_range: tuple[float, float] = (dbm_to_watt(20.0), dbm_to_watt(28.0))
    omega_range: tuple[float, float] = (0.5e9, 3.0e9)
    radius_km: float = 0.2
    min_distance_km: float = 0.01
    pl_const: float = 128.1
    pl_slope: float = 37.6
    zeta: float = 1e-28
    cycles_per_sample: float = 2e6

    def __post_init__(self):
        lo, hi = self.p_range
        if not 0 < lo <= hi:
            raise InputError("power range must be positive and ordered")
        lo, hi = self.omega_range
        if not 0 < lo <= hi:
            raise InputError("CPU frequency range must be positive and ordered")
        if not 0 < self.min_distance_km < self.radius_km:
            raise InputError("need 0 < min_distance_km < radius_km")
        for name in ("W_total", "N0", "zeta", "cycles_per_sample"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive")


def draw_state(phys: PhysicalParams, batch_size: int, rng: np.random.Generator):
    """One device's channel and CPU state for one round.

    Distance is uniform over the annulus [min_distance, radius] by area.
    """
    r0, r1 = phys.min_distance_km, phys.radius_km
    dist = math.sqrt(r0**2 + (r1**2 - r0**2) * rng.random())
    h = path_loss_gain(dist, r1, phys.pl_const, phys.pl_slope)
    p = rng.uniform(*phys.p_range)
    omega = rng.uniform(*phys.omega_range)
    ch = ChannelState(h=h, p=p, W_total=phys.W_total, N0=phys.N0)
    dev = DeviceProfile(omega=omega, zeta=phys.zeta, C=phys.cycles_per_sample, b=batch_size)
    return ch, dev, dist
