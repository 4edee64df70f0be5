"""Deterministic vectorised Monte Carlo for the reflected chain.

Random numbers come from a stateless counter-based scheme so that results
are bit-identical for a given plan no matter how paths are batched or
parallelised.  With mix64 the SplitMix64 finalizer (xor-shift/multiply
chain), the uniform driving step t of path j under seed s is

    state0(s, j) = mix64(mix64(s) + j * SALT)
    u(s, j, t)   = (mix64(state0(s, j) + (t+1) * GAMMA) >> 11) * 2**-53

with GAMMA = 0x9E3779B97F4A7C15 and SALT = 0xC2B2AE3D27D4EB4F (both odd, so
distinct paths and steps get distinct counters).  This is exactly a
SplitMix64 draw sequence per path, evaluated positionally: the stream of
path j never depends on how many other paths run beside it.

Each step converts one uniform into a move by inverse transform over the
2d cells [(coord 0, -1), (coord 0, +1), (coord 1, -1), ...] whose widths
are the reflected-kernel weights (lam for a down move off the boundary, 2
for an up move on it, 1 otherwise, all relative to the site weight D).
Aggregations use fixed-shape numpy reductions only, so the summary is
reproducible bit for bit.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ResourceBudgetError
from .kernel import ModelParams, State

_GAMMA = 0x9E3779B97F4A7C15
_SALT = 0xC2B2AE3D27D4EB4F
_MASK = 0xFFFFFFFFFFFFFFFF

# Budget on paths * dim for the in-memory state block.
DEFAULT_MAX_ELEMENTS = 50_000_000


def _mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(0xBF58476D1CE4E5B9)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _path_states(seed: int, m: int) -> np.ndarray:
    """Initial SplitMix64 state for each of m path streams."""
    seed_mixed = int(_mix64(np.array([seed & _MASK], dtype=np.uint64))[0])
    offsets = (np.arange(m, dtype=np.uint64)) * np.uint64(_SALT)
    return _mix64(np.uint64(seed_mixed) + offsets)


def _step_uniforms(states: np.ndarray, t: int) -> np.ndarray:
    """Uniform [0,1) draw number t (0-based) for every path stream."""
    counter = np.uint64(((t + 1) * _GAMMA) & _MASK)
    bits = _mix64(states + counter)
    return (bits >> np.uint64(11)).astype(np.float64) * 2.0**-53


@dataclass(frozen=True)
class SimPlan:
    """One reproducible simulation request.

    Attributes:
        params: model dimension and bias.
        start: initial state in Z_+^d.
        steps: number of steps n per path (>= 1 for batch statistics;
            trajectory alone accepts 0).
        paths: number of independent paths m >= 1.
        seed: 64-bit unsigned stream seed.
    """

    params: ModelParams
    start: State
    steps: int
    paths: int
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.start) != self.params.dim:
            raise ValueError(
                f"start has {len(self.start)} coordinates, expected {self.params.dim}"
            )
        if any(c < 0 for c in self.start):
            raise ValueError(f"start must lie in Z_+^d, got {self.start}")
        if self.steps < 0:
            raise ValueError(f"steps must be nonnegative, got {self.steps}")
        if self.paths < 1:
            raise ValueError(f"paths must be >= 1, got {self.paths}")
        if not 0 <= self.seed <= _MASK:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


@dataclass(frozen=True)
class BatchSummary:
    """Aggregates over one batch.

    mean_endpoint:          average of |X_n^i| / n per coordinate.
    cov_scaled:             sample covariance of (|X_n| - n*v)/sqrt(n) with
                            the known mean n*v as centre (not the sample
                            mean), normalised by the path count.
    boundary_visit_counts:  per path, the number of indices 0 <= k <= n at
                            which some coordinate is zero.
    martingale_mean:        average over all (path, step) pairs of the
                            increments xi_k = |X_k| - |X_{k-1}| - f(X_{k-1}).
    """

    mean_endpoint: np.ndarray
    cov_scaled: np.ndarray
    boundary_visit_counts: np.ndarray
    martingale_mean: np.ndarray


@dataclass(frozen=True)
class MartingaleDiagnostic:
    """Per-coordinate sample mean and variance of the martingale increments."""

    mean: np.ndarray
    variance: np.ndarray


@dataclass(frozen=True)
class _RawBatch:
    endpoints: np.ndarray       # (m, d) int64 final states
    visits: np.ndarray          # (m,) int64 boundary-visit counts
    xi_sum: np.ndarray          # (d,) sum of martingale increments
    xi_sumsq: np.ndarray        # (d,) sum of squared increments
    states: np.ndarray | None   # (n+1, m, d) full history if requested


def _run(plan: SimPlan, *, keep_path: bool, max_elements: int) -> _RawBatch:
    p = plan.params
    d, n, m = p.dim, plan.steps, plan.paths
    if m * d > max_elements:
        raise ResourceBudgetError(
            f"batch needs {m * d} state elements, budget is {max_elements}"
        )
    lam = p.lam
    Y = np.tile(np.asarray(plan.start, dtype=np.int64), (m, 1))
    rows = np.arange(m)
    streams = _path_states(plan.seed, m)

    visits = (Y == 0).any(axis=1).astype(np.int64)
    xi_sum = np.zeros(d)
    xi_sumsq = np.zeros(d)
    weights = np.empty((m, 2 * d))
    history = None
    if keep_path:
        if (n + 1) * m * d > max_elements:
            raise ResourceBudgetError(
                f"history needs {(n + 1) * m * d} elements, budget is {max_elements}"
            )
        history = np.empty((n + 1, m, d), dtype=np.int64)
        history[0] = Y

    for t in range(n):
        zero = Y == 0
        kap = zero.sum(axis=1)
        site_weight = d + kap + lam * (d - kap)          # (m,)
        # inverse-transform cells: even slot (coord i, -1), odd (coord i, +1)
        weights[:, 0::2] = np.where(zero, 0.0, lam)
        weights[:, 1::2] = np.where(zero, 2.0, 1.0)
        cum = np.cumsum(weights, axis=1)
        u = _step_uniforms(streams, t) * site_weight
        idx = (cum[:, :-1] <= u[:, None]).sum(axis=1)
        coord = idx >> 1
        sign = ((idx & 1) << 1) - 1                      # -1 even, +1 odd
        # martingale increment xi = displacement - drift at the source site
        xi = np.where(zero, 2.0, 1.0 - lam) / (-site_weight[:, None])
        xi[rows, coord] += sign
        xi_sum += xi.sum(axis=0)
        xi_sumsq += (xi * xi).sum(axis=0)
        Y[rows, coord] += sign
        visits += (Y == 0).any(axis=1)
        if history is not None:
            history[t + 1] = Y

    return _RawBatch(
        endpoints=Y, visits=visits, xi_sum=xi_sum, xi_sumsq=xi_sumsq, states=history
    )


def simulate_batch(
    plan: SimPlan, *, max_elements: int = DEFAULT_MAX_ELEMENTS
) -> BatchSummary:
    """Run the plan and aggregate the batch statistics.

    Deterministic: the same plan yields a bit-identical summary regardless
    of how the work would be scheduled, because every path owns a
    positionally derived stream and reductions are fixed-shape.
    """
    p = plan.params
    if plan.steps < 1:
        raise ValueError("batch statistics need steps >= 1")
    raw = _run(plan, keep_path=False, max_elements=max_elements)
    n, m = plan.steps, plan.paths
    mean_endpoint = (raw.endpoints / n).mean(axis=0)
    centred = (raw.endpoints - n * p.speed) / np.sqrt(n)    # (m, d)
    cov = np.empty((p.dim, p.dim))
    for i in range(p.dim):
        for j in range(i, p.dim):
            cov[i, j] = cov[j, i] = (centred[:, i] * centred[:, j]).mean()
    return BatchSummary(
        mean_endpoint=mean_endpoint,
        cov_scaled=cov,
        boundary_visit_counts=raw.visits,
        martingale_mean=raw.xi_sum / (n * m),
    )


def trajectory(plan: SimPlan, *, max_elements: int = DEFAULT_MAX_ELEMENTS) -> np.ndarray:
    """Full single path as an (n+1, d) integer array; requires paths = 1.

    The path is the same one that path index 0 of any batch with this seed
    follows."""
    if plan.paths != 1:
        raise ValueError(f"trajectory needs paths=1, got {plan.paths}")
    return trajectories(plan, max_elements=max_elements)[0]


def trajectories(
    plan: SimPlan, *, max_elements: int = DEFAULT_MAX_ELEMENTS
) -> np.ndarray:
    """Full batch history as a (paths, steps+1, dim) integer array.

    Row j is exactly the trajectory that path index j follows in any batch
    sharing this plan's seed, so the array is reproducible path by path."""
    raw = _run(plan, keep_path=True, max_elements=max_elements)
    assert raw.states is not None
    return np.swapaxes(raw.states, 0, 1)


def martingale_diagnostic(
    plan: SimPlan, *, max_elements: int = DEFAULT_MAX_ELEMENTS
) -> MartingaleDiagnostic:
    """Sample mean and variance per coordinate of the increments
    xi_k = |X_k| - |X_{k-1}| - f(X_{k-1}) over all (path, step) pairs.

    The increments form a martingale-difference array, so the mean should
    vanish within sampling error and the variance approaches the diagonal
    of the diffusive covariance for long runs."""
    if plan.steps < 1:
        raise ValueError("martingale statistics need steps >= 1")
    raw = _run(plan, keep_path=False, max_elements=max_elements)
    count = plan.steps * plan.paths
    mean = raw.xi_sum / count
    variance = raw.xi_sumsq / count - mean**2
    return MartingaleDiagnostic(mean=mean, variance=variance)


def boundary_visits(
    plan: SimPlan, *, max_elements: int = DEFAULT_MAX_ELEMENTS
) -> dict[int, int]:
    """Histogram {visit count: number of paths} of the per-path number of
    indices 0 <= k <= n at which some coordinate is zero.

    For lam < 1 the chain leaves the coordinate hyperplanes for good after
    an almost-surely finite number of visits, so the histogram stabilises
    as n grows."""
    raw = _run(plan, keep_path=False, max_elements=max_elements)
    return dict(sorted(Counter(raw.visits.tolist()).items()))


def dump_trajectory_csv(states: np.ndarray, dest) -> None:
    """Write a trajectory as CSV with header step,x1,...,xd."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w", newline="") as fh:
            dump_trajectory_csv(states, fh)
        return
    d = states.shape[1]
    dest.write(",".join(["step"] + [f"x{i + 1}" for i in range(d)]) + "\n")
    for k, row in enumerate(states):
        dest.write(",".join([str(k)] + [str(int(c)) for c in row]) + "\n")


def dump_trajectories_csv(states: np.ndarray, dest) -> None:
    """Write a batch of trajectories in long format with header
    path,step,x1,...,xd; states has shape (paths, steps+1, dim)."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w", newline="") as fh:
            dump_trajectories_csv(states, fh)
        return
    d = states.shape[2]
    dest.write(",".join(["path", "step"] + [f"x{i + 1}" for i in range(d)]) + "\n")
    for j, path in enumerate(states):
        for k, row in enumerate(path):
            dest.write(",".join([str(j), str(k)] + [str(int(c)) for c in row]) + "\n")
