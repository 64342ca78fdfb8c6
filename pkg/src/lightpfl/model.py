"""Small differentiable classifiers over a flat parameter vector.

Two architectures are supported: multinomial logistic regression and a
fully connected network with tanh hidden layers.  Parameters are stored as
one float64 vector laid out layer by layer (weights row-major, then bias),
so the base/personalization split is a single prefix length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lightpfl.errors import ConfigError, InputError

SAFETY_FACTOR = 1.2
_FLOOR = 1e-12


@dataclass(frozen=True)
class ParamVector:
    """Flat parameter (or gradient) vector with a base-prefix length."""

    values: np.ndarray
    split: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise InputError("ParamVector values must be one-dimensional")
        if not 0 <= self.split <= values.size:
            raise InputError(f"split {self.split} outside [0, {values.size}]")
        object.__setattr__(self, "values", values)

    @property
    def d(self) -> int:
        return self.values.size

    @property
    def d_base(self) -> int:
        return self.split

    @property
    def d_pers(self) -> int:
        return self.values.size - self.split

    @property
    def base(self) -> np.ndarray:
        return self.values[: self.split]

    @property
    def pers(self) -> np.ndarray:
        return self.values[self.split :]

    @classmethod
    def join(cls, base: np.ndarray, pers: np.ndarray) -> "ParamVector":
        base = np.asarray(base, dtype=np.float64)
        return cls(np.concatenate([base, np.asarray(pers, dtype=np.float64)]), base.size)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description.

    ``base_layers`` counts the leading layers shared through the server; the
    remaining layers form the personalization part.
    """

    arch: str
    input_dim: int
    n_classes: int
    hidden: tuple[int, ...] = ()
    base_layers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.arch not in ("logreg", "mlp"):
            raise ConfigError(f"arch must be 'logreg' or 'mlp', got {self.arch!r}")
        if self.arch == "logreg" and self.hidden:
            raise ConfigError("logreg takes no hidden layers")
        if self.arch == "mlp" and not self.hidden:
            raise ConfigError("mlp needs at least one hidden layer")
        if self.input_dim < 1 or self.n_classes < 2:
            raise ConfigError("input_dim must be >= 1 and n_classes >= 2")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be positive")
        if not 0 <= self.base_layers <= self.n_layers:
            raise ConfigError(f"base_layers must lie in [0, {self.n_layers}]")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.n_classes)

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1

    @property
    def layer_sizes(self) -> list[int]:
        w = self.widths
        return [w[i] * w[i + 1] + w[i + 1] for i in range(self.n_layers)]

    @property
    def d(self) -> int:
        return sum(self.layer_sizes)

    @property
    def d_base(self) -> int:
        return sum(self.layer_sizes[: self.base_layers])

    @property
    def d_pers(self) -> int:
        return self.d - self.d_base

    def with_base_layers(self, base_layers: int) -> "ModelSpec":
        return ModelSpec(self.arch, self.input_dim, self.n_classes, self.hidden, base_layers)

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "input_dim": self.input_dim,
            "n_classes": self.n_classes,
            "hidden": list(self.hidden),
            "base_layers": self.base_layers,
        }


@dataclass(frozen=True)
class MiniBatch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise InputError("features must be (b, dim) and labels (b,)")
        if y.size < 1:
            raise InputError("mini-batch must hold at least one sample")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise InputError("labels must be integral")
            y = y.astype(np.int64)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def size(self) -> int:
        return self.labels.size


@dataclass(frozen=True)
class BoundConstants:
    """Constants of the smoothness / bounded-gradient assumptions."""

    L1: float
    L2: float
    G: float
    M: float
    sigma: float
    eta: float
    T: int

    def __post_init__(self):
        for name in ("L1", "L2", "G", "M", "sigma", "eta"):
            if not getattr(self, name) >= 0:
                raise InputError(f"{name} must be nonnegative")
        if self.eta <= 0 or self.T < 1:
            raise InputError("eta must be positive and T >= 1")

    @property
    def step_condition_holds(self) -> bool:
        """True when eta <= 3 / L2."""
        return self.eta * self.L2 <= 3.0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("L1", "L2", "G", "M", "sigma", "eta", "T")}


def init_params(spec: ModelSpec, rng: np.random.Generator, scale: float = 1.0) -> ParamVector:
    """Gaussian weights with 1/sqrt(fan_in) scaling, zero biases."""
    chunks = []
    w = spec.widths
    for i in range(spec.n_layers):
        W = rng.standard_normal((w[i], w[i + 1])) * (scale / np.sqrt(w[i]))
        chunks.append(W.ravel())
        chunks.append(np.zeros(w[i + 1]))
    return ParamVector(np.concatenate(chunks), spec.d_base)


def _unpack(spec: ModelSpec, values: np.ndarray):
    layers = []
    off = 0
    w = spec.widths
    for i in range(spec.n_layers):
        n_w = w[i] * w[i + 1]
        W = values[off : off + n_w].reshape(w[i], w[i + 1])
        off += n_w
        b = values[off : off + w[i + 1]]
        off += w[i + 1]
        layers.append((W, b))
    return layers


def _check(spec: ModelSpec, params: ParamVector, batch: MiniBatch):
    if params.d != spec.d:
        raise ConfigError(f"parameter length {params.d} != model dimension {spec.d}")
    if batch.features.shape[1] != spec.input_dim:
        raise ConfigError(
            f"feature dimension {batch.features.shape[1]} != input_dim {spec.input_dim}"
        )
    if batch.labels.min() < 0 or batch.labels.max() >= spec.n_classes:
        raise ConfigError("labels outside [0, n_classes)")


def _forward(spec, values, X):
    acts = [X]
    layers = _unpack(spec, values)
    h = X
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        h = z if i == len(layers) - 1 else np.tanh(z)
        acts.append(h)
    return layers, acts


def _log_softmax(z):
    m = z.max(axis=1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def logits(spec: ModelSpec, params: ParamVector, X: np.ndarray) -> np.ndarray:
    _, acts = _forward(spec, params.values, np.asarray(X, dtype=np.float64))
    return acts[-1]


def predict(spec: ModelSpec, params: ParamVector, X: np.ndarray) -> np.ndarray:
    return np.argmax(logits(spec, params, X), axis=1)


def accuracy(spec: ModelSpec, params: ParamVector, X: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(predict(spec, params, X) == np.asarray(y)))


def loss(spec: ModelSpec, params: ParamVector, batch: MiniBatch) -> float:
    """Mean softmax cross-entropy over the batch."""
    _check(spec, params, batch)
    _, acts = _forward(spec, params.values, batch.features)
    logp = _log_softmax(acts[-1])
    return float(-np.mean(logp[np.arange(batch.size), batch.labels]))


def loss_and_grad(spec: ModelSpec, params: ParamVector, batch: MiniBatch):
    _check(spec, params, batch)
    layers, acts = _forward(spec, params.values, batch.features)
    n = batch.size
    logp = _log_softmax(acts[-1])
    value = float(-np.mean(logp[np.arange(n), batch.labels]))

    delta = np.exp(logp)
    delta[np.arange(n), batch.labels] -= 1.0
    delta /= n
    grads = []
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        h_in = acts[i]
        grads.append(delta.sum(axis=0))
        grads.append((h_in.T @ delta).ravel())
        if i > 0:
            delta = (delta @ W.T) * (1.0 - h_in**2)
    g = np.concatenate(grads[::-1])
    return value, ParamVector(g, params.split)


def grad(spec: ModelSpec, params: ParamVector, batch: MiniBatch) -> ParamVector:
    """Analytic gradient of :func:`loss`; keeps the input's split index."""
    return loss_and_grad(spec, params, batch)[1]


def _as_datasets(dataset) -> list[MiniBatch]:
    if isinstance(dataset, MiniBatch):
        return [dataset]
    if isinstance(dataset, tuple) and len(dataset) == 2 and isinstance(dataset[0], np.ndarray):
        return [MiniBatch(*dataset)]
    out = []
    for item in dataset:
        out.append(item if isinstance(item, MiniBatch) else MiniBatch(*item))
    return out


def estimate_constants(
    spec: ModelSpec,
    dataset,
    probe_count: int,
    seed: int,
    *,
    eta: float,
    T: int,
    params: ParamVector | None = None,
    batch_size: int = 32,
    n_minibatches: int = 8,
    power_iters: int = 6,
    fd_step: float = 1e-4,
    safety: float = SAFETY_FACTOR,
) -> BoundConstants:
    """Empirical smoothness and boundedness constants.

    ``dataset`` is one (features, labels) pair or a sequence of them (one per
    client); the maximum over clients is taken.  Probes walk a short SGD
    trajectory from ``params`` (or a seeded initialization), so the probe set
    for ``p`` is a prefix of the set for ``p + 1`` and every estimate is
    monotone in ``probe_count``.

    At each probe point: G and M from gradient and weight norms, sigma from the
    mean squared deviation of mini-batch from full-batch gradients, L1 from a
    finite-difference ratio of the loss along the gradient direction, and L2
    from a finite-difference power iteration on gradient differences.  All
    maxima are multiplied by ``safety``.
    """
    if probe_count < 2:
        raise InputError("probe_count must be >= 2")
    datasets = _as_datasets(dataset)
    if not datasets or any(ds.size == 0 for ds in datasets):
        raise InputError("empty dataset")

    if params is None:
        params = init_params(spec, np.random.default_rng(np.random.SeedSequence([seed, 0xC0])))
    split = params.split
    G = M = L1 = L2 = var = 0.0

    for c, full in enumerate(datasets):
        n = full.size
        b = min(batch_size, n)
        w = params.values.copy()
        for j in range(probe_count):
            rng = np.random.default_rng(np.random.SeedSequence([seed, c, j]))
            pv = ParamVector(w, split)
            F0, gF = loss_and_grad(spec, pv, full)
            M = max(M, float(np.linalg.norm(w)))
            G = max(G, gF.norm())

            mb_grads = []
            for _ in range(n_minibatches):
                if b >= n:
                    idx = np.arange(n)
                else:
                    idx = np.sort(rng.choice(n, size=b, replace=False))
                g = grad(spec, pv, MiniBatch(full.features[idx], full.labels[idx]))
                mb_grads.append(g.values)
            mb = np.asarray(mb_grads)
            G = max(G, float(np.sqrt(np.max(np.sum(mb**2, axis=1)))))
            var = max(var, float(np.mean(np.sum((mb - gF.values) ** 2, axis=1))))

            gnorm = gF.norm()
            direction = gF.values / gnorm if gnorm > 0 else _unit(rng, w.size)
            F1 = loss(spec, ParamVector(w + fd_step * direction, split), full)
            L1 = max(L1, abs(F1 - F0) / fd_step)

            v = _unit(rng, w.size)
            for _ in range(power_iters):
                g1 = grad(spec, ParamVector(w + fd_step * v, split), full).values
                hv = (g1 - gF.values) / fd_step
                hn = float(np.linalg.norm(hv))
                L2 = max(L2, hn)
                if hn == 0.0:
                    break
                v = hv / hn

            w = w - eta * mb[0]

    sigma = float(np.sqrt(var))
    return BoundConstants(
        L1=max(L1 * safety, _FLOOR),
        L2=max(L2 * safety, _FLOOR),
        G=max(G * safety, _FLOOR),
        M=max(M * safety, _FLOOR),
        sigma=sigma * safety,
        eta=float(eta),
        T=int(T),
    )


def _unit(rng, n):
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)
