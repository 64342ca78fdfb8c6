"""Log-barrier interior-point method for linear objectives over convex sets.

Constraints are supplied as blocks.  A block maps x to a vector of values
f_j(x) (feasible means f_j(x) <= 0), their Jacobian, and the weighted sum of
their Hessians.  Each centering step runs damped Newton on
t c^T x - sum_j log(-f_j(x)); t grows geometrically until the duality gap
m / t is below the requested tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LinearBlock:
    """Rows of A x <= b."""

    def __init__(self, A: np.ndarray, b: np.ndarray):
        self.A = np.asarray(A, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)

    @property
    def size(self) -> int:
        return self.b.size

    def in_domain(self, x) -> bool:
        return True

    def values(self, x):
        return self.A @ x - self.b

    def jacobian(self, x):
        return self.A

    def hessian(self, x, weights):
        return None


@dataclass
class BarrierResult:
    x: np.ndarray
    gap: float
    newton_steps: int
    converged: bool
    t: float


def _eval(blocks, x):
    vals = [blk.values(x) for blk in blocks]
    return np.concatenate(vals) if vals else np.zeros(0)


def _feasible(blocks, x) -> bool:
    for blk in blocks:
        if not blk.in_domain(x):
            return False
        v = blk.values(x)
        if not np.all(np.isfinite(v)) or np.any(v >= 0):
            return False
    return True


def _potential(c, blocks, x, t):
    f = _eval(blocks, x)
    return t * float(c @ x) - float(np.sum(np.log(-f)))


def _newton_system(c, blocks, x, t, free):
    n = x.size
    g = t * c.copy()
    H = np.zeros((n, n))
    for blk in blocks:
        f = blk.values(x)
        J = blk.jacobian(x)
        inv = 1.0 / (-f)
        g += J.T @ inv
        H += (J.T * inv**2) @ J
        Hb = blk.hessian(x, inv)
        if Hb is not None:
            H += Hb
    return g[free], H[np.ix_(free, free)]


def centering(c, blocks, x, t, free, tol=1e-10, max_steps=100, alpha=0.01, beta=0.5, stop=None):
    """Damped Newton on the barrier potential; ``stop(x)`` may end it early."""
    steps = 0
    for steps in range(1, max_steps + 1):
        if stop is not None and stop(x):
            return x, steps - 1, True
        g, H = _newton_system(c, blocks, x, t, free)
        try:
            dx = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(H, -g, rcond=None)[0]
        lam2 = float(-g @ dx)
        if lam2 / 2.0 <= tol:
            return x, steps, True
        step = np.zeros_like(x)
        step[free] = dx
        s = 1.0
        while not _feasible(blocks, x + s * step):
            s *= beta
            if s < 1e-20:
                return x, steps, False
        phi0 = _potential(c, blocks, x, t)
        slope = float(g @ dx)
        while _potential(c, blocks, x + s * step, t) > phi0 + alpha * s * slope:
            s *= beta
            if s < 1e-20:
                # no further progress representable at this precision
                return x, steps, lam2 < 1e-6
        x = x + s * step
    return x, steps, False


def n_constraints(blocks) -> int:
    return sum(blk.size for blk in blocks)


def barrier_minimize(c, blocks, x0, *, eps=1e-6, t0=1.0, mu=20.0, free=None,
                     max_newton=100, max_outer=60) -> BarrierResult:
    """Minimize c^T x subject to the blocks, from a strictly feasible ``x0``.

    ``free`` is a boolean mask; coordinates outside it are held fixed.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    c = np.asarray(c, dtype=np.float64)
    if not _feasible(blocks, x):
        raise ValueError("barrier start point is not strictly feasible")
    free = np.ones(x.size, dtype=bool) if free is None else np.asarray(free, dtype=bool)
    m = n_constraints(blocks)
    t = t0
    total = 0
    ok = True
    for _ in range(max_outer):
        x, steps, ok_c = centering(c, blocks, x, t, free, max_steps=max_newton)
        total += steps
        ok = ok and ok_c
        if m / t <= eps:
            return BarrierResult(x, m / t, total, ok, t)
        t *= mu
    return BarrierResult(x, m / t, total, False, t)


class _Shifted:
    """f_j(x) - s on the rows selected by ``mask``, for the augmented point (x, s)."""

    def __init__(self, blk, mask):
        self.blk = blk
        self.mask = np.asarray(mask, dtype=np.float64)

    @property
    def size(self):
        return self.blk.size

    def in_domain(self, y):
        return self.blk.in_domain(y[:-1])

    def values(self, y):
        return self.blk.values(y[:-1]) - self.mask * y[-1]

    def jacobian(self, y):
        J = self.blk.jacobian(y[:-1])
        return np.hstack([J, -self.mask[:, None]])

    def hessian(self, y, weights):
        H = self.blk.hessian(y[:-1], weights)
        if H is None:
            return None
        n = H.shape[0]
        out = np.zeros((n + 1, n + 1))
        out[:n, :n] = H
        return out


def phase_one(blocks, x0, *, free=None, margin=1e-9, keep=1e-3, max_outer=40):
    """Find a strictly feasible point by minimizing the maximum violation.

    Only rows with f_j(x0) > -keep are relaxed; rows already satisfied with
    room to spare stay hard, which keeps the iterates inside block domains.
    Returns ``None`` if no strictly feasible point is found (optimum s >= 0).
    ``x0`` only needs to lie in every block's domain.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if _feasible(blocks, x0):
        return x0.copy()
    if not all(blk.in_domain(x0) for blk in blocks):
        raise ValueError("phase-one start outside the constraint domain")
    n = x0.size
    masks = [(blk.values(x0) > -keep).astype(np.float64) for blk in blocks]
    s0 = float(np.max(_eval(blocks, x0)))
    aug = [_Shifted(b, m) for b, m in zip(blocks, masks)]
    # s >= -1 keeps the auxiliary problem bounded
    floor = np.zeros((1, n + 1))
    floor[0, -1] = -1.0
    aug.append(LinearBlock(floor, np.array([1.0])))
    y = np.append(x0, max(s0, 0.0) + keep)
    c = np.zeros(n + 1)
    c[-1] = 1.0
    if free is None:
        free_aug = np.ones(n + 1, dtype=bool)
    else:
        free_aug = np.append(np.asarray(free, dtype=bool), True)
    t = float(n_constraints(aug)) / keep
    def done(y):
        return y[-1] < -margin and _feasible(blocks, y[:-1])

    for _ in range(max_outer):
        y, _, _ = centering(c, aug, y, t, free_aug, stop=done)
        if done(y):
            return y[:-1]
        t *= 10.0
    return None
