"""Turn a validated config into datasets, client splits and a training setup."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lightpfl.errors import ConfigError
from lightpfl.harness.config import ScenarioConfig
from lightpfl.harness.data import (
    Dataset,
    class_histogram,
    holdout_split,
    load_idx,
    partition_class,
    partition_dirichlet,
    synth_dataset,
)
from lightpfl.model import MiniBatch, ModelSpec
from lightpfl.protocol import TrainingSetup


@dataclass
class PreparedScenario:
    setup: TrainingSetup
    dataset: Dataset
    parts: list
    train_idx: list
    test_idx: list


def load_dataset(cfg: ScenarioConfig) -> Dataset:
    d = cfg.data
    if d.source == "synthetic":
        ds = synth_dataset(d.clusters, d.dims, d.size, d.noise, cfg.seed, d.separation)
    else:
        ds = load_idx(d.images, d.labels)
    if d.limit is not None and d.limit < len(ds):
        ds = ds.subset(np.arange(d.limit))
    return ds


def make_parts(cfg: ScenarioConfig, ds: Dataset) -> list:
    p = cfg.partition
    if p.mode == "class":
        if p.classes_per_client > ds.n_classes:
            raise ConfigError(f"partition.classes_per_client: exceeds class count {ds.n_classes}")
        return partition_class(ds, p.classes_per_client, cfg.N, cfg.seed)
    return partition_dirichlet(ds, p.alpha, cfg.N, cfg.seed)


def prepare(cfg: ScenarioConfig) -> PreparedScenario:
    ds = load_dataset(cfg)
    parts = make_parts(cfg, ds)
    tr_idx, te_idx = [], []
    for n, idx in enumerate(parts):
        if idx.size < 2:
            raise ConfigError(f"partition: client {n} holds {idx.size} samples; need at least 2")
        tr, te = holdout_split(idx, ds.labels, cfg.partition.holdout, cfg.seed, n)
        tr_idx.append(tr)
        te_idx.append(te if te.size else tr)
    spec = ModelSpec(cfg.model.arch, ds.features.shape[1], max(ds.n_classes, 2),
                     tuple(cfg.model.hidden), cfg.model.base_layers)
    train = [MiniBatch(ds.features[i], ds.labels[i]) for i in tr_idx]
    test = [MiniBatch(ds.features[i], ds.labels[i]) for i in te_idx]
    setup = TrainingSetup(spec=spec, train=train, test=test, phys=cfg.physical_params(),
                          plan=cfg.plan.settings(), eta=cfg.eta, batch_size=cfg.batch_size,
                          T=cfg.T, seed=cfg.seed, fpp=cfg.fpp)
    return PreparedScenario(setup, ds, parts, tr_idx, te_idx)


def partition_report(cfg: ScenarioConfig) -> str:
    ds = load_dataset(cfg)
    parts = make_parts(cfg, ds)
    hist = class_histogram(ds, parts)
    total = hist.sum()
    lines = ["client,samples,gamma,classes," + ",".join(f"c{c}" for c in range(hist.shape[1]))]
    for n, row in enumerate(hist):
        lines.append(f"{n},{row.sum()},{row.sum() / total:.6f},{int(np.count_nonzero(row))},"
                     + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"
