"""Scenario files: YAML in, validated dataclasses out.

Physical quantities are written in the units engineers quote (MHz, dBm,
dBm/Hz, GHz, metres) and converted to SI exactly once, in
:meth:`ScenarioConfig.physical_params`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from lightpfl.errors import ConfigError
from lightpfl.mec import PhysicalParams, dbm_to_watt
from lightpfl.protocol import PLAN_MODES, PlanSettings


def _fail(path: str, msg: str):
    raise ConfigError(f"{path}: {msg}")


def _positive(path, value):
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0:
        _fail(path, f"must be a positive number, got {value!r}")


def _range(path, pair, lo=None, hi=None):
    if not isinstance(pair, (list, tuple)) or len(pair) != 2:
        _fail(path, "must be a [low, high] pair")
    a, b = pair
    if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in pair) or a > b:
        _fail(path, f"must be an ordered numeric pair, got {pair!r}")
    if lo is not None and a < lo:
        _fail(path, f"low end {a} below {lo}")
    if hi is not None and b > hi:
        _fail(path, f"high end {b} above {hi}")


@dataclass
class ModelSection:
    arch: str = "mlp"
    hidden: list = field(default_factory=lambda: [64])
    base_layers: int = 1

    def validate(self, p="model"):
        if self.arch not in ("logreg", "mlp"):
            _fail(f"{p}.arch", "must be 'logreg' or 'mlp'")
        if self.arch == "logreg" and self.hidden:
            _fail(f"{p}.hidden", "logreg takes no hidden layers")
        if self.arch == "mlp" and not self.hidden:
            _fail(f"{p}.hidden", "mlp needs at least one hidden width")
        for i, h in enumerate(self.hidden):
            if not isinstance(h, int) or h < 1:
                _fail(f"{p}.hidden[{i}]", "must be a positive integer")
        if not isinstance(self.base_layers, int) or not 0 <= self.base_layers <= len(self.hidden) + 1:
            _fail(f"{p}.base_layers", f"must lie in [0, {len(self.hidden) + 1}]")


@dataclass
class DataSection:
    source: str = "synthetic"
    clusters: int = 10
    dims: int = 32
    size: int = 4000
    noise: float = 1.0
    separation: float = 3.0
    images: str | None = None
    labels: str | None = None
    limit: int | None = None

    def validate(self, p="data"):
        if self.source not in ("synthetic", "idx"):
            _fail(f"{p}.source", "must be 'synthetic' or 'idx'")
        if self.source == "synthetic":
            if not isinstance(self.clusters, int) or self.clusters < 2:
                _fail(f"{p}.clusters", "must be an integer >= 2")
            if not isinstance(self.dims, int) or self.dims < self.clusters:
                _fail(f"{p}.dims", "must be an integer >= clusters")
            if not isinstance(self.size, int) or self.size < self.clusters:
                _fail(f"{p}.size", "must be an integer >= clusters")
            if not isinstance(self.noise, (int, float)) or self.noise < 0:
                _fail(f"{p}.noise", "must be nonnegative")
            _positive(f"{p}.separation", self.separation)
        else:
            if not self.images or not self.labels:
                _fail(f"{p}.images", "idx source needs both images and labels paths")
        if self.limit is not None and (not isinstance(self.limit, int) or self.limit < 1):
            _fail(f"{p}.limit", "must be a positive integer")


@dataclass
class PartitionSection:
    mode: str = "class"
    classes_per_client: int = 2
    alpha: float = 0.5
    holdout: float = 0.2

    def validate(self, p="partition"):
        if self.mode not in ("class", "dirichlet"):
            _fail(f"{p}.mode", "must be 'class' or 'dirichlet'")
        if self.mode == "class" and (not isinstance(self.classes_per_client, int)
                                     or self.classes_per_client < 1):
            _fail(f"{p}.classes_per_client", "must be a positive integer")
        if self.mode == "dirichlet":
            _positive(f"{p}.alpha", self.alpha)
        if not isinstance(self.holdout, (int, float)) or not 0 <= self.holdout < 1:
            _fail(f"{p}.holdout", "must lie in [0, 1)")


@dataclass
class PhysicalSection:
    bandwidth_mhz: float = 10.0
    noise_dbm_hz: float = -174.0
    power_dbm: list = field(default_factory=lambda: [20.0, 28.0])
    cpu_ghz: list = field(default_factory=lambda: [0.5, 3.0])
    radius_m: float = 200.0
    min_distance_m: float = 10.0
    path_loss_const: float = 128.1
    path_loss_slope: float = 37.6
    zeta: float = 1e-28
    cycles_per_sample: float = 2e6

    def validate(self, p="physical"):
        _positive(f"{p}.bandwidth_mhz", self.bandwidth_mhz)
        if not -250 <= self.noise_dbm_hz <= -100:
            _fail(f"{p}.noise_dbm_hz", "must lie in [-250, -100] dBm/Hz")
        _range(f"{p}.power_dbm", self.power_dbm, -30.0, 50.0)
        _range(f"{p}.cpu_ghz", self.cpu_ghz, 1e-3, 10.0)
        _positive(f"{p}.radius_m", self.radius_m)
        _positive(f"{p}.min_distance_m", self.min_distance_m)
        if self.min_distance_m >= self.radius_m:
            _fail(f"{p}.min_distance_m", "must be below radius_m")
        _positive(f"{p}.path_loss_slope", self.path_loss_slope)
        _positive(f"{p}.zeta", self.zeta)
        _positive(f"{p}.cycles_per_sample", self.cycles_per_sample)


@dataclass
class PlanSection:
    mode: str = "optimized"
    k: float = 1.0
    r: float = 1.0
    tau_max: float = 1.0
    energy_budget: float = 10.0
    on_infeasible: str = "fallback"
    k_min: float = 1e-3
    r_max: float = 0.999
    max_iter: int = 50
    tol: float = 1e-4
    tol_ip: float = 1e-6
    obj_tol: float | None = 1e-5
    prune_strategy: str = "magnitude"
    sparse_strategy: str = "topk"
    probe_count: int = 4

    def validate(self, p="plan"):
        if self.mode not in PLAN_MODES:
            _fail(f"{p}.mode", f"must be one of {', '.join(PLAN_MODES)}")
        if not 0 < self.k <= 1:
            _fail(f"{p}.k", "must lie in (0, 1]")
        if not 0 <= self.r <= 1:
            _fail(f"{p}.r", "must lie in [0, 1]")
        _positive(f"{p}.tau_max", self.tau_max)
        _positive(f"{p}.energy_budget", self.energy_budget)
        if self.on_infeasible not in ("fallback", "abort"):
            _fail(f"{p}.on_infeasible", "must be 'fallback' or 'abort'")
        if not 0 < self.k_min <= 0.01:
            _fail(f"{p}.k_min", "must lie in (0, 0.01]")
        if not 0.99 <= self.r_max < 1:
            _fail(f"{p}.r_max", "must lie in [0.99, 1)")
        if not isinstance(self.max_iter, int) or self.max_iter < 1:
            _fail(f"{p}.max_iter", "must be a positive integer")
        _positive(f"{p}.tol", self.tol)
        _positive(f"{p}.tol_ip", self.tol_ip)
        if self.obj_tol is not None:
            _positive(f"{p}.obj_tol", self.obj_tol)
        if self.prune_strategy not in ("random", "magnitude", "importance"):
            _fail(f"{p}.prune_strategy", "must be random, magnitude or importance")
        if self.sparse_strategy not in ("random", "topk"):
            _fail(f"{p}.sparse_strategy", "must be random or topk")
        if not isinstance(self.probe_count, int) or self.probe_count < 2:
            _fail(f"{p}.probe_count", "must be an integer >= 2")

    def settings(self) -> PlanSettings:
        return PlanSettings(**dataclasses.asdict(self))


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    seed: int = 0
    N: int = 8
    T: int = 50
    eta: float = 0.01
    batch_size: int = 32
    fpp: int = 32
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    partition: PartitionSection = field(default_factory=PartitionSection)
    physical: PhysicalSection = field(default_factory=PhysicalSection)
    plan: PlanSection = field(default_factory=PlanSection)

    def validate(self) -> "ScenarioConfig":
        if not isinstance(self.seed, int) or self.seed < 0:
            _fail("seed", "must be a nonnegative integer")
        if not isinstance(self.N, int) or self.N < 1:
            _fail("N", "must be a positive integer")
        if not isinstance(self.T, int) or self.T < 0:
            _fail("T", "must be a nonnegative integer")
        _positive("eta", self.eta)
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            _fail("batch_size", "must be a positive integer")
        if self.fpp not in (32, 64):
            _fail("fpp", "must be 32 or 64")
        self.model.validate()
        self.data.validate()
        self.partition.validate()
        self.physical.validate()
        self.plan.validate()
        return self

    def physical_params(self) -> PhysicalParams:
        ph = self.physical
        return PhysicalParams(
            W_total=ph.bandwidth_mhz * 1e6,
            N0=dbm_to_watt(ph.noise_dbm_hz),
            p_range=(dbm_to_watt(ph.power_dbm[0]), dbm_to_watt(ph.power_dbm[1])),
            omega_range=(ph.cpu_ghz[0] * 1e9, ph.cpu_ghz[1] * 1e9),
            radius_km=ph.radius_m / 1000.0,
            min_distance_km=ph.min_distance_m / 1000.0,
            pl_const=ph.path_loss_const,
            pl_slope=ph.path_loss_slope,
            zeta=ph.zeta,
            cycles_per_sample=ph.cycles_per_sample,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


_SECTIONS = {
    "model": ModelSection,
    "data": DataSection,
    "partition": PartitionSection,
    "physical": PhysicalSection,
    "plan": PlanSection,
}


def _build(cls, raw, path):
    if not isinstance(raw, dict):
        _fail(path or "config", "must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        _fail(f"{path + '.' if path else ''}{unknown[0]}", "unknown field")
    kwargs = {}
    for key, value in raw.items():
        if path == "" and key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def parse_config(text: str) -> ScenarioConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: not valid YAML ({exc})") from exc
    if raw is None:
        raw = {}
    return _build(ScenarioConfig, raw, "").validate()


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cfg = parse_config(path.read_text(encoding="utf-8"))
    # relative IDX paths resolve against the config's directory
    for attr in ("images", "labels"):
        val = getattr(cfg.data, attr)
        if val and not Path(val).is_absolute():
            setattr(cfg.data, attr, str((path.parent / val).resolve()))
    return cfg
