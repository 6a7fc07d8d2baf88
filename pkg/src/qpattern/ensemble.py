"""Monte Carlo estimators for the killed dynamics.

The common engine is a Fleming-Viot particle system: all particles advance
one step, every particle that leaves the domain is instantly replaced by a
copy of a uniformly chosen survivor, and the empirical cloud tracks the
conditioned law.  The same three "systems" (finite-state chain, 1-D SDE,
full field dynamics in a tube) also back independent-path survival curves,
eigenfunction probes, and importance-weighted never-killed sampling.

Estimator error bars are batch-means standard errors (10 batches) unless a
quantity is exact; extinction aborts with statistics rather than silently
restarting, since restarts bias the decay-rate estimate upward.

Determinism: each step's randomness is one vectorized draw keyed by
``(seed, lane, step)`` and consumed in particle-id order; resampling donors
depend only on (step, particle ids).  Worker counts only change how the
particle axis is chunked, never the numbers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as _dc_field
from typing import Callable, Optional, Sequence

import numpy as np

from .chain import SubMarkovMatrix
from .errors import (
    DegenerateWeightsError,
    ExtinctionError,
    NoLinearTailError,
    NotStationaryError,
    ValidationError,
)
from .fields import Field, basis_for
from .models import ModelSpec
from .rng import LANE_INIT, LANE_PATH, LANE_RESAMPLE, RandomPlan
from .spde import MildStepper
from .tube import TubeSpec, inside_mask_batch

DEAD = -1  # chain-state sentinel


def batch_means(x: np.ndarray, n_batches: int = 10) -> tuple[float, float]:
    """Mean and batch-means standard error along the first axis."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < n_batches:
        n_batches = max(2, n)
    usable = (n // n_batches) * n_batches
    batches = x[:usable].reshape(n_batches, usable // n_batches, *x.shape[1:])
    means = batches.mean(axis=1)
    se = means.std(axis=0, ddof=1) / np.sqrt(n_batches)
    return float(x.mean()), float(np.max(se)) if se.ndim else float(se)


# --- particle systems -------------------------------------------------------


class ChainSystem:
    """Particles on a finite state space driven by a killed chain."""

    def __init__(self, chain: SubMarkovMatrix, plan: RandomPlan,
                 lane: int = LANE_PATH):
        self.chain = chain
        self.plan = plan
        self.lane = lane
        self.cum = np.cumsum(chain.q, axis=1)
        self.dt = chain.dt_per_step

    def initial(self, start, n: int) -> np.ndarray:
        """Start states: an int (point mass), an explicit int array of
        length ``n``, or a probability vector to sample from."""
        start_arr = np.asarray(start)
        if start_arr.ndim == 0:
            return np.full(n, int(start_arr), dtype=np.int64)
        if np.issubdtype(start_arr.dtype, np.integer):
            if start_arr.size != n:
                raise ValidationError("explicit start states must have length n")
            return start_arr.astype(np.int64)
        cdf = np.cumsum(start_arr / start_arr.sum())
        u = self.plan.uniforms(LANE_INIT, 0, (n,))
        return np.searchsorted(cdf, u).astype(np.int64)

    def step(self, states: np.ndarray, step_index: int) -> np.ndarray:
        u = self.plan.uniforms(self.lane, step_index, (states.size,))
        out = np.full(states.size, DEAD, dtype=np.int64)
        alive = states >= 0
        if np.any(alive):
            rows = self.cum[states[alive]]
            nxt = (u[alive, None] >= rows).sum(axis=1)
            nxt[nxt >= self.chain.n_states] = DEAD
            out[alive] = nxt
        return out

    @staticmethod
    def alive_mask(states: np.ndarray) -> np.ndarray:
        return states >= 0

    def histogram(self, states: np.ndarray) -> np.ndarray:
        alive = states[states >= 0]
        h = np.bincount(alive, minlength=self.chain.n_states).astype(float)
        return h / max(alive.size, 1)


class Sde1dSystem:
    """Particles following a 1-D Euler SDE, killed outside an interval."""

    def __init__(self, drift: Callable[[np.ndarray], np.ndarray], sigma: float,
                 dt: float, interval: tuple[float, float], plan: RandomPlan,
                 lane: int = LANE_PATH):
        self.drift = drift
        self.sigma = float(sigma)
        self.dt = float(dt)
        self.lo, self.hi = interval
        self.plan = plan
        self.lane = lane
        self._sqdt = np.sqrt(dt)

    def initial(self, start, n: int) -> np.ndarray:
        start_arr = np.asarray(start, dtype=float)
        if start_arr.ndim == 0:
            return np.full(n, float(start_arr))
        if start_arr.size == 2:  # (lo, hi) -> uniform
            u = self.plan.uniforms(LANE_INIT, 0, (n,))
            return start_arr[0] + u * (start_arr[1] - start_arr[0])
        raise ValidationError("sde start must be a point or a (lo, hi) pair")

    def step(self, states: np.ndarray, step_index: int) -> np.ndarray:
        z = self.plan.normals(self.lane, step_index, (states.size,))
        out = np.full_like(states, np.nan)
        alive = np.isfinite(states)
        x = states[alive]
        x = x + self.drift(x) * self.dt + self.sigma * self._sqdt * z[alive]
        x = np.where((x <= self.lo) | (x >= self.hi), np.nan, x)
        out[alive] = x
        return out

    @staticmethod
    def alive_mask(states: np.ndarray) -> np.ndarray:
        return np.isfinite(states)


class SpdeSystem:
    """Field-valued particles killed on exit from the tube.

    ``workers > 1`` chunks the particle axis across a thread pool for the
    stepping only; draws and reductions are shared, so results are
    bit-identical for every worker count.
    """

    def __init__(self, spec: ModelSpec, tube: TubeSpec, dt: float,
                 plan: RandomPlan, lane: int = LANE_PATH, workers: int = 1,
                 dealias: bool = True):
        self.spec = spec
        self.tube = tube
        self.dt = float(dt)
        self.plan = plan
        self.lane = lane
        self.workers = max(1, int(workers))
        ref = tube.manifold
        self.basis = basis_for(
            Field(
                np.zeros((ref.n_comp, ref.n_grid)),
                ref.domain_length,
                ref.boundary,
            )
        )
        self.stepper = MildStepper(spec, self.basis, dt, dealias=dealias)
        self.n_comp = ref.n_comp
        self.n_grid = ref.n_grid

    def initial(self, start, n: int) -> np.ndarray:
        start = np.asarray(start, dtype=float)
        if start.ndim == 2:
            return np.repeat(start[None], n, axis=0)
        if start.ndim == 3 and start.shape[0] == n:
            return start.copy()
        raise ValidationError("spde start must be one field or one per particle")

    def step(self, states: np.ndarray, step_index: int) -> np.ndarray:
        N = states.shape[0]
        normals = (
            self.plan.normals(self.lane, step_index,
                              (N, self.n_comp, self.basis.n_modes))
            if self.stepper.has_noise
            else None
        )
        out = np.empty_like(states)
        if self.workers == 1 or N < 2 * self.workers:
            out[:] = self.stepper.step_values(states, normals, check=False)
            return out
        chunks = np.array_split(np.arange(N), self.workers)

        def work(idx):
            out[idx] = self.stepper.step_values(
                states[idx], None if normals is None else normals[idx],
                check=False,
            )

        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            list(pool.map(work, chunks))
        return out

    def alive_mask(self, states: np.ndarray) -> np.ndarray:
        finite = np.all(np.isfinite(states), axis=(-2, -1))
        inside = np.zeros(states.shape[0], dtype=bool)
        if np.any(finite):
            inside[finite] = inside_mask_batch(states[finite], self.tube)
        return inside


# --- Fleming-Viot engine -----------------------------------------------------


@dataclass
class FVResult:
    """Timeline of a Fleming-Viot run.

    ``snapshots`` holds the particle states at every recorded time
    (post-resampling, so the cloud is always fully alive and particle
    count is conserved); ``observable_traces[name][k]`` are the per-particle
    values at snapshot k.
    """

    times: np.ndarray
    snapshots: Optional[np.ndarray]
    observable_traces: dict[str, np.ndarray]
    kills_per_step: np.ndarray
    resample_log: list[tuple[int, int, int]]
    dt: float
    n_particles: int
    snapshot_stride: int

    @property
    def n_steps(self) -> int:
        return self.kills_per_step.size

    def ancestors(self) -> np.ndarray:
        """Genealogy: ``anc[k, p]`` is the snapshot-k index of the ancestor
        of the particle occupying slot p at the final snapshot.

        Built from the resample log by composing, for each snapshot
        interval, the map "index at interval end -> ancestor at interval
        start" (O(1) per resample event), then chaining the maps backward.
        """
        stride, n = self.snapshot_stride, self.n_particles
        n_snap = len(self.times)
        snap_steps = stride * (np.arange(n_snap) + 1) - 1
        maps = []
        ev = self.resample_log
        ev_i = 0
        lo = -1
        for s_k in snap_steps:
            m = np.arange(n)
            while ev_i < len(ev) and ev[ev_i][0] <= s_k:
                s, d, r = ev[ev_i]
                if s > lo:
                    m[d] = m[r]
                ev_i += 1
            maps.append(m)
            lo = s_k
        anc = np.empty((n_snap, n), dtype=np.int64)
        anc[-1] = np.arange(n)
        for k in range(n_snap - 1, 0, -1):
            anc[k - 1] = maps[k][anc[k]]
        return anc

    def lambda1_hat(self, burn_in_steps: int = 0) -> tuple[float, float]:
        """Decay-rate estimate from the stationary kill rate.

        ``lambda1 = -ln(1 - p) / dt`` with p the per-particle-step kill
        probability; the stderr propagates a batch-means error of p.
        """
        kills = self.kills_per_step[burn_in_steps:]
        if kills.size < 10:
            raise ValidationError("too few post-burn-in steps for lambda1")
        frac = kills / self.n_particles
        p_hat, p_se = batch_means(frac)
        p_hat = min(p_hat, 1 - 1e-12)
        lam = -np.log1p(-p_hat) / self.dt
        se = p_se / ((1.0 - p_hat) * self.dt)
        return float(lam), float(se)

    def snapshot_slice(self, burn_in_time: float) -> np.ndarray:
        return np.nonzero(self.times >= burn_in_time)[0]


def fleming_viot_run(
    system,
    states0: np.ndarray,
    n_steps: int,
    plan: RandomPlan,
    observables: dict[str, Callable[[np.ndarray], np.ndarray]] | None = None,
    snapshot_stride: int = 1,
    store_states: bool = True,
    carries: dict[str, np.ndarray] | None = None,
    on_snapshot: Callable[[int, float, np.ndarray], None] | None = None,
    resample_lane: int = LANE_RESAMPLE,
) -> FVResult:
    """Run the resampling particle system for ``n_steps``.

    ``carries`` maps names to per-particle arrays (first axis = particle)
    that the engine keeps consistent through resampling by copying the
    donor's row onto the dead particle's row -- used e.g. for unwrapped
    phases.  ``on_snapshot(step, time, states)`` fires at every recorded
    time after observables are evaluated.

    Raises ``ExtinctionError`` if every particle dies in one step.
    """
    observables = observables or {}
    carries = carries or {}
    states = np.array(states0)
    n = states.shape[0]
    if n < 2:
        raise ValidationError("need at least two particles")
    dt = system.dt

    times = []
    snaps = []
    traces: dict[str, list] = {name: [] for name in observables}
    kills = np.zeros(int(n_steps), dtype=np.int64)
    log: list[tuple[int, int, int]] = []

    for step in range(int(n_steps)):
        states = system.step(states, step)
        alive = system.alive_mask(states)
        n_alive = int(alive.sum())
        if n_alive == 0:
            raise ExtinctionError(step, (step + 1) * dt, n)
        if n_alive < n:
            dead_idx = np.nonzero(~alive)[0]
            surv_idx = np.nonzero(alive)[0]
            u = plan.uniforms(resample_lane, step, (n,))
            donor_idx = surv_idx[(u[dead_idx] * n_alive).astype(np.int64)]
            states[dead_idx] = states[donor_idx]
            for arr in carries.values():
                arr[dead_idx] = arr[donor_idx]
            kills[step] = dead_idx.size
            log.extend(
                (step, int(d), int(s)) for d, s in zip(dead_idx, donor_idx)
            )
        if (step + 1) % snapshot_stride == 0:
            t = (step + 1) * dt
            times.append(t)
            if store_states:
                snaps.append(states.copy())
            for name, fn in observables.items():
                traces[name].append(np.asarray(fn(states), dtype=float))
            if on_snapshot is not None:
                on_snapshot(step, t, states)

    return FVResult(
        times=np.array(times),
        snapshots=np.array(snaps) if store_states and snaps else None,
        observable_traces={k: np.array(v) for k, v in traces.items()},
        kills_per_step=kills,
        resample_log=log,
        dt=dt,
        n_particles=n,
        snapshot_stride=snapshot_stride,
    )


# --- survival curves and spectral estimates ----------------------------------


@dataclass
class SurvivalCurve:
    """Empirical survival probabilities of independent killed paths.

    ``batch_p`` (when present) holds the same curve computed on 10
    disjoint path batches; slope fits use it for an honest stderr, since
    points of one survival curve are strongly correlated.
    """

    times: np.ndarray
    p_hat: np.ndarray
    n_paths: int
    batch_p: np.ndarray | None = None

    def stderr(self) -> np.ndarray:
        p = self.p_hat
        return np.sqrt(np.clip(p * (1 - p), 0, None) / self.n_paths)


def survival_curve(system, states0: np.ndarray, n_steps: int,
                   n_batches: int = 10) -> SurvivalCurve:
    """P[t < tau] for a batch of independent paths (no resampling).

    The curve is monotone by construction: a path contributes to every
    time before its death and to none after.
    """
    states = np.array(states0)
    n = states.shape[0]
    batch_of = (np.arange(n) * n_batches) // n
    batch_sizes = np.bincount(batch_of, minlength=n_batches)
    alive_counts = [n]
    batch_counts = [batch_sizes.astype(float)]
    for step in range(int(n_steps)):
        states = system.step(states, step)
        alive = system.alive_mask(states)
        alive_counts.append(int(alive.sum()))
        batch_counts.append(
            np.bincount(batch_of[alive], minlength=n_batches).astype(float)
        )
        if alive_counts[-1] == 0:
            remaining = int(n_steps) - step - 1
            alive_counts.extend([0] * remaining)
            batch_counts.extend([np.zeros(n_batches)] * remaining)
            break
    times = np.arange(len(alive_counts)) * system.dt
    return SurvivalCurve(
        times=times,
        p_hat=np.array(alive_counts) / n,
        n_paths=n,
        batch_p=np.array(batch_counts) / batch_sizes[None, :],
    )


@dataclass
class Lambda1Fit:
    lambda1: float
    stderr: float
    window: tuple[float, float]
    r_squared: float
    degenerate: bool = False


def estimate_lambda1(curve: SurvivalCurve, noise_floor_count: float = 10.0,
                     min_points: int = 10) -> Lambda1Fit:
    """Tail-slope fit of the log survival curve.

    The fit window starts at the first index from which the fitted slope
    is stable within 10% of the slope fitted one index later, and ends at
    the last time with more than ``noise_floor_count`` surviving paths.
    Raises ``NoLinearTailError`` when no admissible window reaches
    R^2 >= 0.95.  A curve with (numerically) no decay returns rate zero
    flagged as degenerate.
    """
    floor = noise_floor_count / curve.n_paths
    valid = np.nonzero(curve.p_hat > floor)[0]
    if valid.size < min_points:
        raise NoLinearTailError(
            f"only {valid.size} points above the noise floor"
        )
    end = valid[-1] + 1
    t = curve.times[:end]
    y = np.log(curve.p_hat[:end])
    if np.ptp(y) < 1e-12:
        return Lambda1Fit(0.0, 0.0, (float(t[0]), float(t[-1])), 1.0,
                          degenerate=True)

    def fit(j):
        tt, yy = t[j:], y[j:]
        slope, intercept = np.polyfit(tt, yy, 1)
        resid = yy - (slope * tt + intercept)
        ss_res = float(np.sum(resid**2))
        ss_tot = float(np.sum((yy - yy.mean()) ** 2))
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
        dof = max(len(tt) - 2, 1)
        denom = float(np.sum((tt - tt.mean()) ** 2))
        se = np.sqrt(ss_res / dof / denom) if denom > 0 else 0.0
        return slope, se, r2

    last_start = end - min_points
    chosen = None
    for j in range(0, last_start):
        s0, _, _ = fit(j)
        s1, _, _ = fit(min(j + 1, last_start))
        if s1 != 0 and abs(s0 - s1) <= 0.10 * abs(s1):
            chosen = j
            break
    if chosen is None:
        chosen = last_start
    slope, se, r2 = fit(chosen)
    if r2 < 0.95:
        for j in range(0, last_start + 1):
            slope, se, r2 = fit(j)
            if r2 >= 0.95:
                chosen = j
                break
        else:
            raise NoLinearTailError(
                f"best window R^2 = {r2:.4f} < 0.95"
            )
    se = _batched_slope_se(curve, chosen, end, default=se)
    return Lambda1Fit(
        lambda1=float(-slope), stderr=float(se),
        window=(float(curve.times[chosen]), float(t[-1])),
        r_squared=float(r2),
    )


def _batched_slope_se(curve: SurvivalCurve, start: int, end: int,
                      default: float) -> float:
    """Slope stderr from disjoint path batches (falls back to OLS).

    Points of one survival curve share paths, so OLS residual errors are
    optimistic; refitting the window on independent path batches measures
    the real sampling spread.
    """
    if curve.batch_p is None:
        return default
    t = curve.times[start:end]
    slopes = []
    for b in range(curve.batch_p.shape[1]):
        p = curve.batch_p[start:end, b]
        ok = p > 0
        if ok.sum() < 3:
            continue
        slopes.append(np.polyfit(t[ok], np.log(p[ok]), 1)[0])
    if len(slopes) < 3:
        return default
    return float(np.std(slopes, ddof=1) / np.sqrt(len(slopes)))


@dataclass
class PhiEstimate:
    """Survival-probe eigenfunction values, defined up to a common factor."""

    probes: np.ndarray
    phi: np.ndarray
    stderr: np.ndarray
    t_probe: float

    def ratio(self, i: int, j: int) -> tuple[float, float]:
        r = self.phi[i] / self.phi[j]
        rel = np.sqrt(
            (self.stderr[i] / self.phi[i]) ** 2
            + (self.stderr[j] / self.phi[j]) ** 2
        )
        return float(r), float(abs(r) * rel)


def estimate_phi(system, probes: np.ndarray, lambda1: float,
                 t_probe_steps: int, n_paths: int) -> PhiEstimate:
    """phi(x) ~ exp(lambda1 t) P_x[t < tau] at probe states.

    All probes run as one batch of independent paths; the common factor
    (the paper-level normalization constant) cancels in ratios, which are
    the reported quantity.
    """
    probes = np.asarray(probes)
    n_probes = probes.shape[0]
    states0 = np.repeat(probes, n_paths, axis=0)
    if probes.ndim == 1 and np.issubdtype(probes.dtype, np.integer):
        states = states0.astype(np.int64)  # chain probes
    else:
        states = states0.astype(float)
    for step in range(int(t_probe_steps)):
        states = system.step(states, step)
    alive = system.alive_mask(states).reshape(n_probes, n_paths)
    p = alive.mean(axis=1)
    if np.any(p <= 0):
        raise NoLinearTailError("a probe lost every path; shorten t_probe")
    t = t_probe_steps * system.dt
    amp = np.exp(lambda1 * t)
    se = amp * np.sqrt(p * (1 - p) / n_paths)
    return PhiEstimate(probes=probes, phi=amp * p, stderr=se, t_probe=t)


# --- conditioned-law estimators ----------------------------------------------


@dataclass
class StationarityDiagnostic:
    observable: str
    z_score: float
    first_half: float
    second_half: float
    stderr: float


def qsd_snapshot(
    result: FVResult,
    burn_in_time: float,
    z_threshold: float = 3.0,
) -> tuple[np.ndarray, list[StationarityDiagnostic]]:
    """Pooled post-burn-in cloud with a two-half stationarity check.

    Returns (pooled states, diagnostics).  Raises ``NotStationaryError``
    if any registered observable's first- and second-half means disagree
    beyond ``z_threshold`` combined batch-means standard errors.
    """
    idx = result.snapshot_slice(burn_in_time)
    if idx.size < 4:
        raise ValidationError("burn-in leaves too few snapshots")
    diags = []
    for name, trace in result.observable_traces.items():
        post = trace[idx].mean(axis=1)  # ensemble mean per snapshot
        half = post.size // 2
        m1, s1 = batch_means(post[:half])
        m2, s2 = batch_means(post[half:])
        se = np.hypot(s1, s2)
        z = (m1 - m2) / se if se > 0 else 0.0
        diags.append(StationarityDiagnostic(name, float(z), m1, m2, float(se)))
    bad = [d for d in diags if abs(d.z_score) > z_threshold]
    if bad:
        raise NotStationaryError(
            "; ".join(
                f"{d.observable}: halves {d.first_half:.4g}/{d.second_half:.4g} "
                f"(z={d.z_score:.2f})"
                for d in bad
            )
        )
    if result.snapshots is None:
        raise ValidationError("run stored no states; cannot pool a cloud")
    pooled = np.concatenate(result.snapshots[idx], axis=0)
    return pooled, diags


def qed_time_average(
    result: FVResult,
    observable: str,
    burn_in_time: float,
    tail_margin_time: float | None = None,
) -> tuple[float, float]:
    """Lineage time average of a registered observable: the beta estimator.

    The quasi-ergodic law weights a time-s state by its survival to the
    far future, so the average runs over the ancestral lines of the
    final-time particles (resampling genealogy), not over the cloud at
    each time -- the plain cloud average would estimate alpha instead.
    Times closer than ``tail_margin_time`` (default: the burn-in) to the
    end are excluded, where future-conditioning has not matured.  The
    stderr is a batch-means error over the snapshot sequence.
    """
    trace = result.observable_traces[observable]
    if tail_margin_time is None:
        tail_margin_time = burn_in_time
    t = result.times
    keep = np.nonzero(
        (t >= burn_in_time) & (t <= t[-1] - tail_margin_time)
    )[0]
    if keep.size < 10:
        raise ValidationError(
            "burn-in and tail margin leave too few snapshots"
        )
    anc = result.ancestors()
    per_time = np.array(
        [trace[k][anc[k]].mean() for k in keep]
    )
    return batch_means(per_time)


# --- Q-process sampling -------------------------------------------------------


@dataclass
class QProcessSample:
    """Importance-weighted killed paths targeting the never-killed process.

    ``trajectory[s, p]`` is the state of path p after s steps (chain mode:
    ints with -1 once dead); ``weights[s, p]`` is the running weight
    ``1_{s < tau} exp(lambda1 s dt) phi(Z_s) / phi(x0)``.
    """

    trajectory: np.ndarray
    weights: np.ndarray
    dt: float

    @property
    def n_paths(self) -> int:
        return self.trajectory.shape[1]

    def mean_weight(self, s: int) -> tuple[float, float]:
        w = self.weights[s]
        m = float(w.mean())
        se = float(w.std(ddof=1) / np.sqrt(w.size))
        return m, se

    def ess(self, s: int) -> float:
        w = self.weights[s]
        tot = w.sum()
        if tot <= 0:
            return 0.0
        return float(tot**2 / np.sum(w**2))

    def expectation(self, s: int, f: np.ndarray) -> tuple[float, float]:
        """Self-normalized E_Q[f(Z_s)] with a linearized stderr."""
        w = self.weights[s]
        states = self.trajectory[s]
        vals = np.where(states >= 0, np.asarray(f, dtype=float)[np.maximum(states, 0)], 0.0)
        wsum = w.sum()
        if wsum <= 0:
            raise DegenerateWeightsError(f"all weights vanished at s={s}")
        est = float((w * vals).sum() / wsum)
        resid = vals - est
        se = float(np.sqrt(np.sum((w * resid) ** 2)) / wsum)
        return est, se

    def transition_frequencies(
        self, n_states: int, s_window: tuple[int, int],
        n_batches: int = 10,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Weighted empirical transition matrix over a step window.

        A transition i -> j observed between steps s and s+1 enters with
        weight ``weights[s+1]``; rows are normalized.  The per-entry
        stderr comes from batching over paths.
        """
        s0, s1 = s_window
        counts = np.zeros((n_states, n_states))
        batch_counts = np.zeros((n_batches, n_states, n_states))
        path_batch = (np.arange(self.n_paths) * n_batches) // self.n_paths
        for s in range(s0, s1):
            src = self.trajectory[s]
            dst = self.trajectory[s + 1]
            w = self.weights[s + 1]
            ok = (src >= 0) & (dst >= 0) & (w > 0)
            np.add.at(counts, (src[ok], dst[ok]), w[ok])
            np.add.at(
                batch_counts, (path_batch[ok], src[ok], dst[ok]), w[ok]
            )
        rows = counts.sum(axis=1, keepdims=True)
        freq = np.divide(counts, rows, out=np.zeros_like(counts),
                         where=rows > 0)
        brows = batch_counts.sum(axis=2, keepdims=True)
        bfreq = np.divide(batch_counts, brows,
                          out=np.zeros_like(batch_counts), where=brows > 0)
        se = bfreq.std(axis=0, ddof=1) / np.sqrt(n_batches)
        return freq, se


def q_process_sample(
    system,
    x0,
    phi: Callable[[np.ndarray], np.ndarray],
    lambda1: float,
    n_steps: int,
    n_paths: int,
    ess_floor: float = 0.01,
) -> QProcessSample:
    """Sample killed paths and attach the Doob weights.

    ``phi`` maps a state batch to positive eigenfunction values (exact
    oracle values in chain mode, an estimate elsewhere).  Raises
    ``DegenerateWeightsError`` when the terminal effective sample size
    drops below ``ess_floor * n_paths``.
    """
    states = system.initial(x0, n_paths)
    phi0 = np.asarray(phi(states), dtype=float)
    if np.any(phi0 <= 0):
        raise ValidationError("phi must be positive at the start state")
    traj = [states.copy()]
    weights = [np.ones(n_paths)]
    dt = system.dt
    for step in range(int(n_steps)):
        states = system.step(states, step)
        alive = system.alive_mask(states)
        w = np.zeros(n_paths)
        if np.any(alive):
            w[alive] = (
                np.exp(lambda1 * (step + 1) * dt)
                * np.asarray(phi(states), dtype=float)[alive]
                / phi0[alive]
            )
        traj.append(states.copy())
        weights.append(w)
    sample = QProcessSample(
        trajectory=np.array(traj), weights=np.array(weights), dt=dt
    )
    if sample.ess(int(n_steps)) < ess_floor * n_paths:
        raise DegenerateWeightsError(
            f"terminal ESS {sample.ess(int(n_steps)):.1f} below "
            f"{ess_floor * n_paths:.1f}"
        )
    return sample
