"""Forward simulation of the shared-clock compound Poisson pair.

Both processes jump at the arrival times of one Poisson clock of intensity
``lam``. Simulation counts jumps until both thresholds are reached; no time
grid is involved. Datasets are generated in fixed-size blocks, each drawn
from its own Philox stream keyed by ``(seed, block index)``, so any subset of
blocks can be produced independently (and in parallel) with identical output.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import ModelSpec, ModelVariant, Observation, prob_equal

BLOCK_SIZE = 1024
MAX_JUMPS = 10**6


class HorizonError(RuntimeError):
    """A threshold was not reached within the jump cap."""


class DegeneracyWarning(UserWarning):
    """P[T = C] = 0: one crossing time occurs almost surely before the other."""


@dataclass(frozen=True)
class LatentTrace:
    """Jump times and partial sums up to the later of the two crossings.

    Index 0 holds the starting state (time 0, sums 0); ``n_T`` and ``n_C`` are
    the first indices at which each partial sum reaches its threshold.
    """

    jump_times: np.ndarray
    x_cumsum: np.ndarray
    z_cumsum: np.ndarray
    n_T: int
    n_C: int

    @property
    def T(self) -> float:
        return float(self.jump_times[self.n_T])

    @property
    def C(self) -> float:
        return float(self.jump_times[self.n_C])


def philox_stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the substream ``(seed, *key)``."""
    seq = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def censoring_indicator(variant: ModelVariant, n_T, n_C):
    n_T = np.asarray(n_T)
    n_C = np.asarray(n_C)
    if variant is ModelVariant.I:
        return (n_T <= n_C).astype(np.int64)
    return np.where(n_T == n_C, 2, np.where(n_T < n_C, 1, 0)).astype(np.int64)


def _warn_if_degenerate(spec: ModelSpec):
    if prob_equal(spec) <= 0.0:
        warnings.warn("P[T = C] = 0 for this model: the data will be entirely censored "
                      "or entirely uncensored", DegeneracyWarning, stacklevel=3)


def simulate_outcome(spec: ModelSpec, rng: np.random.Generator, max_jumps: int = MAX_JUMPS):
    """Draw one ``(Observation, LatentTrace)`` pair."""
    chunk = 64
    times = [np.zeros(1)]
    xs = [np.zeros(1)]
    zs = [np.zeros(1)]
    n_T = n_C = None
    last_t = last_x = last_z = 0.0
    count = 0
    while n_T is None or n_C is None:
        if count >= max_jumps:
            raise HorizonError(f"no crossing of both thresholds within {max_jumps} jumps")
        gaps = rng.exponential(1.0 / spec.lam, chunk)
        jx = spec.family_x.sample(rng, chunk)
        jz = spec.family_z.sample(rng, chunk)
        t_new = last_t + np.cumsum(gaps)
        x_new = last_x + np.cumsum(jx)
        z_new = last_z + np.cumsum(jz)
        if n_T is None and np.any(x_new >= spec.x):
            n_T = count + 1 + int(np.argmax(x_new >= spec.x))
        if n_C is None and np.any(z_new >= spec.z):
            n_C = count + 1 + int(np.argmax(z_new >= spec.z))
        times.append(t_new)
        xs.append(x_new)
        zs.append(z_new)
        last_t, last_x, last_z = t_new[-1], x_new[-1], z_new[-1]
        count += chunk
    end = max(n_T, n_C) + 1
    trace = LatentTrace(np.concatenate(times)[:end], np.concatenate(xs)[:end],
                        np.concatenate(zs)[:end], n_T, n_C)
    delta = int(censoring_indicator(spec.variant, n_T, n_C))
    return Observation(float(trace.jump_times[min(n_T, n_C)]), delta), trace


def _first_crossing(family, threshold, size, rng, max_jumps):
    """Index of the first jump at which the partial sum reaches ``threshold``."""
    first = np.zeros(size, dtype=np.int64)
    level = np.zeros(size)
    active = np.arange(size)
    offset = 0
    width = 32
    while active.size:
        if offset >= max_jumps:
            raise HorizonError(
                f"{active.size} path(s) did not reach threshold {threshold} within {max_jumps} jumps")
        sums = level[active, None] + np.cumsum(family.sample(rng, (active.size, width)), axis=1)
        hit = sums >= threshold
        done = hit.any(axis=1)
        first[active[done]] = offset + np.argmax(hit[done], axis=1) + 1
        level[active] = sums[:, -1]
        active = active[~done]
        offset += width
        width = min(2 * width, 4096)
    return first


def _simulate_block(spec: ModelSpec, size: int, rng: np.random.Generator, max_jumps: int):
    n_T = _first_crossing(spec.family_x, spec.x, size, rng, max_jumps)
    n_C = _first_crossing(spec.family_z, spec.z, size, rng, max_jumps)
    # arrival time of jump m is a sum of m exponential gaps
    y = rng.gamma(np.minimum(n_T, n_C).astype(float), 1.0 / spec.lam)
    return y, censoring_indicator(spec.variant, n_T, n_C), n_T, n_C


def simulate_arrays(spec: ModelSpec, n: int, seed: int, max_jumps: int = MAX_JUMPS,
                    return_counts: bool = False):
    """``n`` outcomes as arrays ``(y, delta)`` (plus ``(n_T, n_C)`` on request)."""
    if int(n) != n or n < 1:
        raise ValueError(f"sample size must be a positive integer, got {n!r}")
    n = int(n)
    _warn_if_degenerate(spec)
    parts = []
    for block, start in enumerate(range(0, n, BLOCK_SIZE)):
        size = min(BLOCK_SIZE, n - start)
        parts.append(_simulate_block(spec, size, philox_stream(seed, block), max_jumps))
    y, delta, n_T, n_C = (np.concatenate(col) for col in zip(*parts))
    if return_counts:
        return y, delta, n_T, n_C
    return y, delta


def simulate_dataset(spec: ModelSpec, n: int, seed: int, max_jumps: int = MAX_JUMPS) -> list:
    """``n`` i.i.d. censored outcomes, bit-reproducible for a fixed seed."""
    y, delta = simulate_arrays(spec, n, seed, max_jumps)
    return [Observation(float(a), int(b)) for a, b in zip(y, delta)]


def simulate_latent(spec: ModelSpec, n: int, seed: int, max_jumps: int = MAX_JUMPS,
                    which: Optional[str] = None):
    """Latent crossing times ``(T, C)`` for ``n`` independent paths.

    Both times are read off the same jump clock, so ties ``T == C`` occur with
    probability P[T = C].
    """
    t_parts, c_parts = [], []
    for block, start in enumerate(range(0, int(n), BLOCK_SIZE)):
        size = min(BLOCK_SIZE, int(n) - start)
        rng = philox_stream(seed, block)
        n_T = _first_crossing(spec.family_x, spec.x, size, rng, max_jumps)
        n_C = _first_crossing(spec.family_z, spec.z, size, rng, max_jumps)
        lo = np.minimum(n_T, n_C)
        t_lo = rng.gamma(lo.astype(float), 1.0 / spec.lam)
        gap = np.abs(n_T - n_C)
        extra = np.zeros(size)
        pos = gap > 0
        extra[pos] = rng.gamma(gap[pos].astype(float), 1.0 / spec.lam)
        t_hi = t_lo + extra
        t_parts.append(np.where(n_T <= n_C, t_lo, t_hi))
        c_parts.append(np.where(n_C <= n_T, t_lo, t_hi))
    T = np.concatenate(t_parts)
    C = np.concatenate(c_parts)
    if which is None:
        return T, C
    return {"T": T, "C": C}[str(which).upper()]
