"""Pattern manifolds, tubes, and killed trajectories.

The invariant set is either the family of translates of a traveling
profile (periodic boundaries) or a limit cycle sampled as a phase table.
The tube is a sup-norm neighborhood: ``tube_distance`` minimizes the
sup-norm difference over all shifts (or table phases), and a state is
inside iff that distance is strictly below delta -- a tie counts as exit.

Shift search is a coarse stage (circular cross-correlation peaks, checked
against the sup-norm objective at nearby grid shifts) followed by
golden-section refinement of the continuous-shift objective.  Refinement
can only lower the distance, so a state whose coarse distance is already
below delta is conclusively inside; the killing loop exploits this and
refines only near-boundary states.
"""

from __future__ import annotations

from dataclasses import dataclass, field as _dc_field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    GridMismatchError,
    NonFiniteError,
    ValidationError,
)
from .fields import Field, PERIODIC, basis_for, shift_values
from .models import ModelSpec
from .rng import LANE_PATH, RandomPlan
from .spde import MildStepper, evolve_values

WAVE = "wave_translates"
CYCLE = "limit_cycle"

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass
class PatternManifold:
    """Traveling-wave translates or a limit cycle.

    For ``wave_translates``, ``reference`` holds the profile and
    ``period_or_length`` the domain length; the phase variable is the
    spatial shift in ``[0, L)`` and ``wave_speed_c0`` the signed profile
    speed.  For ``limit_cycle``, ``cycle_table`` holds ``n_phase`` samples
    at equally spaced times in ``[0, T)``, ``period_or_length`` is the
    period T, the phase variable is time along the cycle, and
    ``wave_speed_c0`` stores the frequency 1/T.
    """

    kind: str
    period_or_length: float
    wave_speed_c0: float
    reference: Optional[Field] = None
    cycle_table: Optional[np.ndarray] = None
    domain_length: float = 0.0
    boundary: str = PERIODIC

    def __post_init__(self):
        if self.kind not in (WAVE, CYCLE):
            raise ValidationError(f"unknown manifold kind {self.kind!r}")
        if self.period_or_length <= 0:
            raise ValidationError("period_or_length must be positive")
        if self.kind == WAVE:
            if self.reference is None:
                raise ValidationError("wave manifolds need a reference profile")
            if self.reference.boundary != PERIODIC:
                raise ValidationError("wave translates require periodic boundaries")
            v = self.reference.values
            if float(np.ptp(v)) <= 1e-12:
                raise ValidationError("wave reference must be nonconstant")
            self.domain_length = self.reference.domain_length
            self.boundary = self.reference.boundary
            self._ref_hat = np.fft.rfft(v, axis=-1)
            n = v.shape[-1]
            self._rolled = np.stack(
                [np.roll(v, m, axis=-1) for m in range(n)], axis=0
            )
            self._spline = None
        else:
            if self.cycle_table is None:
                raise ValidationError("cycle manifolds need a phase table")
            tab = np.asarray(self.cycle_table, dtype=float)
            if tab.ndim != 3:
                raise ValidationError("cycle table must be (n_phase, n_comp, n_grid)")
            if tab.shape[0] < 8:
                raise ValidationError("cycle table needs at least 8 phase samples")
            self.cycle_table = tab
            if self.domain_length <= 0:
                raise ValidationError("cycle manifolds need domain_length")
            # closure: the spline is periodic, so the wrapped sample must
            # agree with the start to within interpolation error
            closure = _table_closure_gap(tab)
            scale = max(float(np.max(np.abs(tab))), 1e-12)
            if closure > 0.05 * scale:
                raise ValidationError(
                    f"cycle table does not close: wrap gap {closure:g} "
                    f"vs amplitude {scale:g}"
                )
            theta = np.linspace(
                0.0, self.period_or_length, tab.shape[0] + 1
            )
            closed = np.concatenate([tab, tab[:1]], axis=0)
            self._spline = CubicSpline(theta, closed, axis=0, bc_type="periodic")
            self._rolled = None
            self._ref_hat = None

    # -- phase bookkeeping --------------------------------------------------

    @property
    def phase_period(self) -> float:
        """Length of the phase circle (L for waves, T for cycles)."""
        return self.period_or_length

    @property
    def phase_velocity(self) -> float:
        """Deterministic phase speed: c0 for waves, 1 for cycles."""
        return self.wave_speed_c0 if self.kind == WAVE else 1.0

    @property
    def frequency_scale(self) -> float:
        """Factor converting a phase slope into c0 units (slope*scale)."""
        v0 = self.phase_velocity
        return self.wave_speed_c0 / v0 if v0 != 0 else 1.0

    @property
    def n_comp(self) -> int:
        if self.kind == WAVE:
            return self.reference.n_comp
        return self.cycle_table.shape[1]

    @property
    def n_grid(self) -> int:
        if self.kind == WAVE:
            return self.reference.n_grid
        return self.cycle_table.shape[2]

    def point_at(self, phase: float | np.ndarray) -> np.ndarray:
        """Manifold point(s) at the given phase(s): (..., n_comp, n_grid)."""
        if self.kind == WAVE:
            phase = np.asarray(phase, dtype=float)
            if phase.ndim == 0:
                return shift_values(
                    self.reference.values, float(phase), self.domain_length
                )
            return np.stack(
                [
                    shift_values(self.reference.values, float(p), self.domain_length)
                    for p in phase.ravel()
                ]
            ).reshape(phase.shape + self.reference.values.shape)
        return self._spline(np.mod(phase, self.period_or_length))

    def cycle_derivative(self, phase: np.ndarray) -> np.ndarray:
        if self.kind != CYCLE:
            raise ValidationError("cycle_derivative is only defined for cycles")
        return self._spline(np.mod(phase, self.period_or_length), 1)

    def require_grid(self, x: Field) -> None:
        if (
            x.n_comp != self.n_comp
            or x.n_grid != self.n_grid
            or x.boundary != self.boundary
            or not np.isclose(x.domain_length, self.domain_length)
        ):
            raise GridMismatchError("field and manifold grids differ")


def _table_closure_gap(tab: np.ndarray) -> float:
    """Sup gap between the table start and a linear extrapolated wrap."""
    # the table samples [0, T) so tab[0] should continue smoothly past
    # tab[-1]; compare tab[0] with the linear continuation of the last gap
    cont = tab[-1] + (tab[-1] - tab[-2])
    return float(np.max(np.abs(cont - tab[0])))


@dataclass
class TubeSpec:
    """Sup-norm delta-neighborhood of a manifold.

    ``metric`` may be set to "l2" (grid-quadrature L2 norm) for
    sensitivity studies; the default sup norm is the one matching the
    pattern-stability setting.
    """

    delta: float
    manifold: PatternManifold
    metric: str = "sup"

    def __post_init__(self):
        if self.delta <= 0:
            raise ValidationError("delta must be positive")
        if self.metric not in ("sup", "l2"):
            raise ValidationError("metric must be 'sup' or 'l2'")


@dataclass
class KilledPath:
    """Snapshots of one trajectory up to its killing time.

    ``tau`` is ``inf`` when the path survived to ``t_max``; ``exited`` is
    true iff ``tau <= times[-1]``.  When a path exits, its final snapshot
    is the first state outside the tube.
    """

    times: np.ndarray
    snapshots: np.ndarray  # (n_snap, n_comp, n_grid)
    tau: float
    exited: bool
    exit_reason: str = ""
    domain_length: float = 0.0
    boundary: str = PERIODIC

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValidationError("snapshot times must be strictly increasing")
        finite_tau = np.isfinite(self.tau)
        if self.exited != (finite_tau and self.tau <= self.times[-1] + 1e-12):
            raise ValidationError("exited flag inconsistent with tau")

    def __len__(self) -> int:
        return len(self.times)

    def field(self, i: int) -> Field:
        return Field(self.snapshots[i], self.domain_length, self.boundary)


# --- distance computation -------------------------------------------------


def _norm_reduce(diff: np.ndarray, metric: str, cell: float) -> np.ndarray:
    """Reduce (..., n_comp, n_grid) differences to distances."""
    if metric == "sup":
        return np.max(np.abs(diff), axis=(-2, -1))
    return np.sqrt(np.sum(diff**2, axis=(-2, -1)) * cell)


def wave_distance_batch(
    values: np.ndarray,
    manifold: PatternManifold,
    metric: str = "sup",
    refine: bool = True,
    tol_cells: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray]:
    """Distance of each state to the set of profile translates.

    ``values`` has shape ``(N, n_comp, n_grid)``.  Returns ``(dist, shift)``
    with the minimizing shift in ``[0, L)``.  The coarse stage evaluates
    the objective at grid shifts near the top circular-cross-correlation
    peaks (ties broken toward the smallest shift); golden-section then
    refines within one cell.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 2:
        values = values[None]
    N, n_comp, n = values.shape
    L = manifold.domain_length
    cell = L / n
    ref_hat = manifold._ref_hat
    rolled = manifold._rolled

    # correlation against all grid shifts, summed over components
    x_hat = np.fft.rfft(values, axis=-1)
    corr = np.fft.irfft(
        np.sum(x_hat * np.conj(ref_hat)[None], axis=1), n=n, axis=-1
    )
    order = np.argsort(-corr, axis=1, kind="stable")
    peaks = order[:, :3]
    # candidate grid shifts: peaks and their neighbors
    offsets = np.array([-2, -1, 0, 1, 2])
    cand = (peaks[:, :, None] + offsets[None, None, :]).reshape(N, -1) % n
    cand = np.sort(cand, axis=1)
    diffs = values[:, None] - rolled[cand]  # (N, K, c, n)
    obj = _norm_reduce(diffs, metric, cell)
    best = np.argmin(obj, axis=1)  # first minimum = smallest shift after sort
    best_shift = cand[np.arange(N), best].astype(float) * cell
    best_dist = obj[np.arange(N), best]

    if not refine:
        return best_dist, best_shift

    lo = best_shift - cell
    hi = best_shift + cell
    dist, shift = _golden_batch(
        lambda s: _wave_objective(values, ref_hat, s, L, metric, cell),
        lo, hi, tol=tol_cells * cell,
    )
    better = dist < best_dist
    best_dist = np.where(better, dist, best_dist)
    best_shift = np.where(better, shift, best_shift)
    return best_dist, np.mod(best_shift, L)


def _wave_objective(values, ref_hat, s, L, metric, cell):
    n = values.shape[-1]
    k = np.arange(n // 2 + 1)
    phase = np.exp(-2j * np.pi * k[None, None, :] * s[:, None, None] / L)
    shifted = np.fft.irfft(ref_hat[None] * phase, n=n, axis=-1)
    return _norm_reduce(values - shifted, metric, cell)


def cycle_distance_batch(
    values: np.ndarray,
    manifold: PatternManifold,
    metric: str = "sup",
    refine: bool = True,
    tol_frac: float = 1e-8,
) -> tuple[np.ndarray, np.ndarray]:
    """Distance of each state to the limit cycle; returns (dist, phase)."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 2:
        values = values[None]
    N = values.shape[0]
    tab = manifold.cycle_table
    n_phase = tab.shape[0]
    T = manifold.period_or_length
    cell = manifold.domain_length / manifold.n_grid

    obj = _norm_reduce(values[:, None] - tab[None], metric, cell)  # (N, n_phase)
    best = np.argmin(obj, axis=1)
    dtheta = T / n_phase
    best_phase = best * dtheta
    best_dist = obj[np.arange(N), best]
    if not refine:
        return best_dist, best_phase

    lo = best_phase - dtheta
    hi = best_phase + dtheta

    def objective(theta):
        pts = manifold._spline(np.mod(theta, T))
        return _norm_reduce(values - pts, metric, cell)

    dist, phase = _golden_batch(objective, lo, hi, tol=tol_frac * T)
    better = dist < best_dist
    best_dist = np.where(better, dist, best_dist)
    best_phase = np.where(better, phase, best_phase)
    return best_dist, np.mod(best_phase, T)


def _golden_batch(objective, lo, hi, tol, max_iter=80):
    """Vectorized golden-section minimization over per-row brackets.

    Uses the classical invariant: after shrinking toward the better probe,
    one interior point is inherited (c2 == 1 - golden makes the reflected
    point coincide with the surviving probe), so each iteration costs one
    batched objective evaluation.
    """
    lo = np.asarray(lo, dtype=float).copy()
    hi = np.asarray(hi, dtype=float).copy()
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc = objective(c)
    fd = objective(d)
    for _ in range(max_iter):
        if np.all(hi - lo < tol):
            break
        take_left = fc < fd
        hi = np.where(take_left, d, hi)
        lo = np.where(take_left, lo, c)
        c = hi - _GOLDEN * (hi - lo)
        d = lo + _GOLDEN * (hi - lo)
        query = np.where(take_left, c, d)
        fq = objective(query)
        fc, fd = np.where(take_left, fq, fd), np.where(take_left, fc, fq)
    mid = 0.5 * (lo + hi)
    return objective(mid), mid


def distance_batch(
    values: np.ndarray,
    tube: TubeSpec,
    refine: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Dispatch to the wave or cycle distance for raw state batches."""
    if tube.manifold.kind == WAVE:
        return wave_distance_batch(values, tube.manifold, tube.metric, refine)
    return cycle_distance_batch(values, tube.manifold, tube.metric, refine)


def tube_distance(x: Field, tube: TubeSpec) -> tuple[float, float]:
    """Distance from a field to the manifold and the minimizing shift/phase."""
    tube.manifold.require_grid(x)
    dist, pos = distance_batch(x.values[None], tube, refine=True)
    return float(dist[0]), float(pos[0])


def is_inside(x: Field, tube: TubeSpec) -> bool:
    """Tube membership; a distance exactly equal to delta counts as exit."""
    dist, _ = tube_distance(x, tube)
    return dist < tube.delta


def inside_mask_batch(values: np.ndarray, tube: TubeSpec) -> np.ndarray:
    """Vectorized membership with boundary-only refinement.

    States whose coarse distance is below delta are inside for certain
    (refinement only lowers the distance); the rest are refined before
    deciding, so the outcome matches ``is_inside`` exactly.
    """
    dist, _ = distance_batch(values, tube, refine=False)
    inside = dist < tube.delta
    unsure = ~inside
    if np.any(unsure):
        d2, _ = distance_batch(values[unsure], tube, refine=True)
        inside[unsure] = d2 < tube.delta
    return inside


# --- killed trajectories ----------------------------------------------------


def run_killed(
    x0: Field,
    spec: ModelSpec,
    tube: TubeSpec,
    t_max: float,
    dt: float,
    plan: RandomPlan,
    path_index: int = 0,
    snapshot_stride: int = 1,
    dealias: bool = True,
) -> KilledPath:
    """Integrate one killed trajectory.

    The state is advanced with the mild step and tested against the tube
    after every step; the first step that lands outside (or overflows)
    sets ``tau`` to that step's time.  Snapshots are recorded every
    ``snapshot_stride`` steps, plus the initial state and the exit state.
    Noise comes from ``plan.child(path_index)`` so distinct paths of one
    experiment see independent streams.
    """
    tube.manifold.require_grid(x0)
    if not is_inside(x0, tube):
        raise ValidationError("x0 must start inside the tube")
    basis = basis_for(x0)
    stepper = MildStepper(spec, basis, dt, dealias=dealias)
    sub = plan.child(path_index)
    n_steps = int(round(t_max / dt))

    times = [0.0]
    snaps = [x0.values.copy()]
    values = x0.values
    tau = np.inf
    exited = False
    reason = ""
    for step in range(n_steps):
        normals = (
            sub.normals(LANE_PATH, step, (x0.n_comp, basis.n_modes))
            if stepper.has_noise
            else None
        )
        t = (step + 1) * dt
        try:
            values = stepper.step_values(values, normals)
        except NonFiniteError:
            tau, exited, reason = t, True, "overflow"
            times.append(t)
            snaps.append(np.full_like(values, np.inf))
            break
        if not inside_mask_batch(values[None], tube)[0]:
            tau, exited, reason = t, True, "exit"
            times.append(t)
            snaps.append(values.copy())
            break
        if (step + 1) % snapshot_stride == 0:
            times.append(t)
            snaps.append(values.copy())
    return KilledPath(
        times=np.array(times),
        snapshots=np.array(snaps),
        tau=tau,
        exited=exited,
        exit_reason=reason,
        domain_length=x0.domain_length,
        boundary=x0.boundary,
    )


def run_killed_batch(
    x0_values: np.ndarray,
    spec: ModelSpec,
    tube: TubeSpec,
    n_steps: int,
    dt: float,
    plan: RandomPlan,
    lane: int = LANE_PATH,
) -> np.ndarray:
    """Killing times of a batch of independent paths (inf = survived).

    All paths share the per-step draws of ``plan`` (row i of the block is
    path i), are advanced together, and are frozen once they exit.
    """
    values = np.array(x0_values, dtype=float)
    N, n_comp, _ = values.shape
    basis = basis_for(
        Field(values[0], tube.manifold.domain_length, tube.manifold.boundary)
    )
    stepper = MildStepper(spec, basis, dt)
    taus = np.full(N, np.inf)
    alive = np.ones(N, dtype=bool)
    for step in range(int(n_steps)):
        if not np.any(alive):
            break
        normals = (
            plan.normals(lane, step, (N, n_comp, basis.n_modes))
            if stepper.has_noise
            else None
        )
        idx = np.nonzero(alive)[0]
        stepped = stepper.step_values(
            values[idx], None if normals is None else normals[idx], check=False
        )
        bad = ~np.all(np.isfinite(stepped), axis=(-2, -1))
        stepped_safe = np.where(np.isfinite(stepped), stepped, 0.0)
        inside = inside_mask_batch(stepped_safe, tube) & ~bad
        values[idx] = stepped_safe
        died = idx[~inside]
        taus[died] = (step + 1) * dt
        alive[died] = False
    return taus


# --- manifold construction ---------------------------------------------------


def settle_wave(
    spec: ModelSpec,
    x_seed: Field,
    dt: float,
    settle_time: float,
    measure_time: float,
) -> PatternManifold:
    """Extract a traveling-wave manifold from the discrete dynamics.

    Evolves the seed until transients die, then measures the profile speed
    by regressing the tracked shift of the (frozen) profile over
    ``measure_time``.  The tracked shift uses the same cross-correlation +
    golden machinery as the tube distance.
    """
    basis = basis_for(x_seed)
    settled = evolve_values(
        x_seed.values, spec, basis, int(round(settle_time / dt)), dt
    )
    profile = Field(settled.copy(), x_seed.domain_length, x_seed.boundary)
    manifold = PatternManifold(
        kind=WAVE, period_or_length=x_seed.domain_length, wave_speed_c0=0.0,
        reference=profile,
    )
    n_checks = 64
    steps_per_check = max(1, int(round(measure_time / dt / n_checks)))
    values = settled
    shifts = [0.0]
    times = [0.0]
    L = x_seed.domain_length
    prev = 0.0
    for i in range(n_checks):
        values = evolve_values(values, spec, basis, steps_per_check, dt)
        _, s = wave_distance_batch(values[None], manifold)
        raw = float(s[0])
        # unwrap against the previous shift
        delta = (raw - prev + L / 2) % L - L / 2
        prev_unwrapped = shifts[-1] + delta
        shifts.append(prev_unwrapped)
        prev = raw
        times.append((i + 1) * steps_per_check * dt)
    speed = float(np.polyfit(times, shifts, 1)[0])
    return PatternManifold(
        kind=WAVE, period_or_length=L, wave_speed_c0=speed, reference=profile,
    )


def detect_limit_cycle(
    spec: ModelSpec,
    x_seed: Field,
    dt: float,
    settle_time: float,
    n_phase: int = 512,
    settle_dt: float | None = None,
) -> PatternManifold:
    """Extract a limit-cycle manifold from the discrete dynamics.

    Transients are removed at ``settle_dt`` (default 10x coarser than
    ``dt``, capped); the period is then measured at ``dt`` from upward
    crossings of the first component's spatial mean through the orbit
    midlevel (linearly interpolated between steps), and the table stores
    ``n_phase`` states sampled uniformly in time over one period starting
    at a crossing.
    """
    basis = basis_for(x_seed)
    if settle_dt is None:
        settle_dt = min(10.0 * dt, 2e-3)
    values = evolve_values(
        x_seed.values, spec, basis, int(round(settle_time / settle_dt)), settle_dt
    )
    stepper_coarse = MildStepper(_zero_sigma(spec), basis, settle_dt)

    # coarse probe: section level and rough period
    probe_steps = max(int(round(settle_time / settle_dt)), 2000)
    means = np.empty(probe_steps)
    v = values
    for i in range(probe_steps):
        v = stepper_coarse.step_values(v, None)
        means[i] = v[0].mean()
    level = 0.5 * (means.max() + means.min())
    coarse_cross = _upcrossings(means, level, settle_dt)
    if len(coarse_cross) < 3:
        raise ValidationError("no oscillation detected while settling the cycle")
    rough_period = float(np.mean(np.diff(coarse_cross)))
    values = v

    # fine probe over ~2.5 periods, caching states for the restart
    stepper = MildStepper(_zero_sigma(spec), basis, dt)
    fine_steps = int(round(2.5 * rough_period / dt))
    cache_every = max(1, fine_steps // 64)
    means = np.empty(fine_steps)
    cache = {}
    v = values
    for i in range(fine_steps):
        if i % cache_every == 0:
            cache[i] = v
        v = stepper.step_values(v, None)
        means[i] = v[0].mean()
    crossings = _upcrossings(means, level, dt)
    if len(crossings) < 2:
        raise ValidationError("fine probe found fewer than two crossings")
    period = float(np.mean(np.diff(crossings)))
    target = crossings[-1]

    # restart from the cached state just below the crossing
    start_i = (int(target / dt) // cache_every) * cache_every
    while start_i > 0 and start_i * dt > target - dt:
        start_i -= cache_every
    v = cache[start_i]
    t = start_i * dt
    state_prev = v
    while t < target:
        state_prev = v
        v = stepper.step_values(v, None)
        t += dt
    frac = (target - (t - dt)) / dt
    start = (1 - frac) * state_prev + frac * v

    # sample one period uniformly
    sample_times = np.linspace(0.0, period, n_phase, endpoint=False)
    table = np.empty((n_phase, x_seed.n_comp, x_seed.n_grid))
    v = start
    t = 0.0
    table[0] = start
    j = 1
    while j < n_phase:
        v_next = stepper.step_values(v, None)
        t_next = t + dt
        while j < n_phase and sample_times[j] <= t_next + 1e-12:
            frac = (sample_times[j] - t) / dt
            table[j] = (1 - frac) * v + frac * v_next
            j += 1
        v, t = v_next, t_next
    return PatternManifold(
        kind=CYCLE, period_or_length=period, wave_speed_c0=1.0 / period,
        cycle_table=table, domain_length=x_seed.domain_length,
        boundary=x_seed.boundary,
    )


def _upcrossings(series: np.ndarray, level: float, dt: float) -> np.ndarray:
    s = series - level
    idx = np.nonzero((s[:-1] < 0) & (s[1:] >= 0))[0]
    frac = -s[idx] / (s[idx + 1] - s[idx])
    return (idx + frac + 1) * dt


def _zero_sigma(spec: ModelSpec) -> ModelSpec:
    if spec.sigma == 0:
        return spec
    return ModelSpec(
        d=spec.d, a=spec.a, poly=spec.poly, b_multipliers=spec.b_multipliers,
        sigma=0.0, kappa_bound=spec.kappa_bound,
    )


# --- manifold import/export ---------------------------------------------------

_MAGIC = b"QPMANIF1"


def save_manifold(manifold: PatternManifold, path: str) -> None:
    """Write a manifold to ``.csv`` (text) or ``.bin`` (flat binary).

    Binary layout (all little-endian): magic ``QPMANIF1``; uint32 kind
    (0 wave, 1 cycle), n_comp, n_grid, n_phase, boundary (0 periodic,
    1 dirichlet); float64 domain_length, period_or_length, wave_speed_c0;
    float64 C-order array of shape (n_phase, n_comp, n_grid).  For waves
    n_phase = 1 and the block is the reference profile.
    """
    block = (
        manifold.reference.values[None]
        if manifold.kind == WAVE
        else manifold.cycle_table
    )
    n_phase, n_comp, n_grid = block.shape
    kind = 0 if manifold.kind == WAVE else 1
    bnd = 0 if manifold.boundary == PERIODIC else 1
    if path.endswith(".csv"):
        with open(path, "w", encoding="ascii") as fh:
            fh.write("# qpattern manifold v1\n")
            fh.write(
                "kind,n_comp,n_grid,n_phase,boundary,"
                "domain_length,period_or_length,wave_speed_c0\n"
            )
            fh.write(
                f"{manifold.kind},{n_comp},{n_grid},{n_phase},{manifold.boundary},"
                f"{float(manifold.domain_length)!r},{float(manifold.period_or_length)!r},"
                f"{float(manifold.wave_speed_c0)!r}\n"
            )
            fh.write("phase_index,comp," + ",".join(
                f"x{j}" for j in range(n_grid)) + "\n")
            for p in range(n_phase):
                for c in range(n_comp):
                    row = ",".join(repr(float(v)) for v in block[p, c])
                    fh.write(f"{p},{c},{row}\n")
        return
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        header = np.array([kind, n_comp, n_grid, n_phase, bnd], dtype="<u4")
        fh.write(header.tobytes())
        reals = np.array(
            [manifold.domain_length, manifold.period_or_length,
             manifold.wave_speed_c0],
            dtype="<f8",
        )
        fh.write(reals.tobytes())
        fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def load_manifold(path: str) -> PatternManifold:
    """Inverse of ``save_manifold`` (format chosen by extension)."""
    if path.endswith(".csv"):
        with open(path, "r", encoding="ascii") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        if not lines[0].startswith("# qpattern manifold"):
            raise ValidationError(f"{path}: not a manifold csv")
        meta = lines[2].split(",")
        kind, n_comp, n_grid, n_phase, boundary = (
            meta[0], int(meta[1]), int(meta[2]), int(meta[3]), meta[4]
        )
        dl, pol, c0 = float(meta[5]), float(meta[6]), float(meta[7])
        block = np.empty((n_phase, n_comp, n_grid))
        for ln in lines[4:]:
            parts = ln.split(",")
            p, c = int(parts[0]), int(parts[1])
            block[p, c] = [float(v) for v in parts[2:]]
    else:
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != _MAGIC:
                raise ValidationError(f"{path}: bad manifold magic {magic!r}")
            kind_i, n_comp, n_grid, n_phase, bnd = np.frombuffer(
                fh.read(20), dtype="<u4"
            )
            dl, pol, c0 = np.frombuffer(fh.read(24), dtype="<f8")
            block = np.frombuffer(
                fh.read(8 * n_phase * n_comp * n_grid), dtype="<f8"
            ).reshape(n_phase, n_comp, n_grid).copy()
        kind = WAVE if kind_i == 0 else CYCLE
        boundary = PERIODIC if bnd == 0 else "dirichlet"
    if kind == WAVE:
        return PatternManifold(
            kind=WAVE, period_or_length=pol, wave_speed_c0=c0,
            reference=Field(block[0], dl, boundary),
        )
    return PatternManifold(
        kind=CYCLE, period_or_length=pol, wave_speed_c0=c0,
        cycle_table=block, domain_length=dl, boundary=boundary,
    )
