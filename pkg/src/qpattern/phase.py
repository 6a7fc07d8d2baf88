"""Isochronal phase reduction and quasi-asymptotic frequencies.

The isochron map assigns to every basin state the manifold phase sharing
its asymptotic fate: relax the state with the deterministic flow until it
is (numerically) on the manifold, read the phase there, and pull the
elapsed time back along the manifold's own phase velocity.  The phase
variable is the spatial shift in ``[0, L)`` for wave manifolds and time
along the cycle in ``[0, T)`` for limit cycles; reported frequencies are
rescaled so the deterministic value is the manifold's ``wave_speed_c0``
(the wave speed, or ``1/T`` for cycles).

Matching uses the smooth squared-distance objective (coarse table argmin
plus a few Newton steps on the periodic spline), which keeps the phase map
twice differentiable to roundoff so that second-derivative stencils (the
Ito correction terms) are meaningful; the sup norm stays the tube metric.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    InsufficientSweepError,
    NotConvergedError,
    PhaseUnwrapError,
    StencilOverflowError,
    ValidationError,
)
from .fields import Field, SpectralBasis, basis_for
from .models import ModelSpec
from .rng import RandomPlan
from .spde import MildStepper, _silence
from .tube import (
    CYCLE,
    WAVE,
    KilledPath,
    PatternManifold,
    TubeSpec,
    wave_distance_batch,
)
from . import ensemble as _ens


def wrap_phase(p: np.ndarray, period: float) -> np.ndarray:
    return np.mod(p, period)


def phase_diff(a, b, period: float):
    """Nearest-branch difference a - b in (-period/2, period/2]."""
    return (np.asarray(a) - np.asarray(b) + period / 2) % period - period / 2


@dataclass
class IsochronMap:
    """Relax-and-match asymptotic phase for one (manifold, model, dt).

    ``n_relax`` deterministic steps carry a state onto the manifold (to
    within ``match_tol`` in the matching metric); the matched phase minus
    ``n_relax * dt`` times the phase velocity is the isochronal phase.
    Evaluations are pure and batch-vectorized; construction (including the
    relax-horizon doubling) happens in ``build_isochron``.
    """

    manifold: PatternManifold
    spec: ModelSpec
    dt: float
    n_relax: int
    match_tol: float
    basis: SpectralBasis
    chunk: int = 65536

    def __post_init__(self):
        self._stepper = MildStepper(_silence(self.spec), self.basis, self.dt)
        self.period = self.manifold.phase_period
        self.v0 = self.manifold.phase_velocity
        self.relax_time = self.n_relax * self.dt

    def phase_of(self, x: Field) -> float:
        self.manifold.require_grid(x)
        return float(self.phase_of_batch(x.values[None])[0])

    def phase_of_batch(self, values: np.ndarray) -> np.ndarray:
        """Isochronal phases of ``(N, n_comp, n_grid)`` states.

        Raises ``NotConvergedError`` (with the offending indices) when a
        relaxed state remains farther than ``match_tol`` from the
        manifold: the state is outside the usable basin.
        """
        values = np.asarray(values, dtype=float)
        if values.ndim == 2:
            values = values[None]
        out = np.empty(values.shape[0])
        for lo in range(0, values.shape[0], self.chunk):
            sl = slice(lo, min(lo + self.chunk, values.shape[0]))
            out[sl] = self._phase_chunk(values[sl])
        return out

    def _phase_chunk(self, values: np.ndarray) -> np.ndarray:
        relaxed = values
        for _ in range(self.n_relax):
            relaxed = self._stepper.step_values(relaxed, None)
        dist, pos = self._match(relaxed)
        bad = dist > self.match_tol
        if np.any(bad):
            raise NotConvergedError(
                f"{int(bad.sum())} state(s) did not relax onto the manifold "
                f"(max residual {float(dist.max()):.3g} > {self.match_tol:g}); "
                f"first index {int(np.nonzero(bad)[0][0])}"
            )
        return wrap_phase(pos - self.relax_time * self.v0, self.period)

    def _match(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.manifold.kind == WAVE:
            return wave_distance_batch(values, self.manifold, metric="l2")
        return _cycle_match_newton(values, self.manifold)

    # -- stencil directions -------------------------------------------------

    def noise_directions(self, max_modes: int | None = None) -> np.ndarray:
        """Fields B e_k for the active noise slots, one per (slot, comp).

        ``e_k`` are the orthonormal basis functions; the array has shape
        (n_directions, n_comp, n_grid).  Only slots with a nonzero noise
        multiplier contribute, lowest wavenumbers first, truncated to
        ``max_modes`` slots if given.
        """
        b = self.spec.b_for_basis(self.basis)
        slots = np.nonzero(b != 0.0)[0]
        slots = slots[np.argsort(self.basis.k_index[slots], kind="stable")]
        if max_modes is not None:
            slots = slots[:max_modes]
        n_comp = self.manifold.n_comp
        dirs = []
        for s in slots:
            e = self.basis.basis_function(int(s)) * b[s]
            for c in range(n_comp):
                d = np.zeros((n_comp, self.basis.n_grid))
                d[c] = e
                dirs.append(d)
        return np.array(dirs)


def _cycle_match_newton(
    values: np.ndarray, manifold: PatternManifold, iters: int = 8
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest cycle phase by table argmin + Newton on the L2 objective."""
    tab = manifold.cycle_table
    T = manifold.period_or_length
    n_phase = tab.shape[0]
    d2 = np.sum((values[:, None] - tab[None]) ** 2, axis=(-2, -1))
    theta = d2.argmin(axis=1) * (T / n_phase)
    dtheta_max = T / n_phase
    for _ in range(iters):
        g = manifold._spline(np.mod(theta, T))
        g1 = manifold._spline(np.mod(theta, T), 1)
        g2 = manifold._spline(np.mod(theta, T), 2)
        r = values - g
        grad = -2.0 * np.sum(r * g1, axis=(-2, -1))
        hess = 2.0 * np.sum(g1 * g1, axis=(-2, -1)) - 2.0 * np.sum(
            r * g2, axis=(-2, -1)
        )
        step = -grad / np.where(np.abs(hess) > 1e-300, hess, 1.0)
        step = np.clip(step, -dtheta_max, dtheta_max)
        theta = theta + step
    g = manifold._spline(np.mod(theta, T))
    dist = np.max(np.abs(values - g), axis=(-2, -1))
    return dist, np.mod(theta, T)


def build_isochron(
    manifold: PatternManifold,
    spec: ModelSpec,
    dt: float,
    relax_time: float | None = None,
    tol: float = 1e-6,
    match_tol: float = 1e-3,
    probes: np.ndarray | None = None,
    max_doublings: int = 6,
) -> IsochronMap:
    """Construct the phase map, doubling the relax horizon to a Cauchy stop.

    Starting from ``relax_time`` (default: five slowest-mode e-folding
    times, or one period if the linear rate vanishes), the horizon doubles
    until the probe phases move by less than ``tol``; the doubled horizon
    is kept.  Probes default to manifold points nudged off-manifold.
    """
    basis = SpectralBasis(
        manifold.boundary, manifold.n_grid, manifold.domain_length
    )
    if relax_time is None:
        omega = spec.omega(basis)
        relax_time = 5.0 / omega if omega > 0 else manifold.phase_period
    if probes is None:
        phases = np.linspace(0, manifold.phase_period, 6, endpoint=False)
        pts = np.array([manifold.point_at(p) for p in phases])
        scale = float(np.max(np.abs(pts)))
        probes = pts + 0.02 * max(scale, 1e-6)
    iso = IsochronMap(
        manifold=manifold, spec=spec, dt=dt,
        n_relax=max(1, int(round(relax_time / dt))),
        match_tol=match_tol, basis=basis,
    )
    prev = None
    for _ in range(max_doublings):
        iso2 = IsochronMap(
            manifold=manifold, spec=spec, dt=dt, n_relax=2 * iso.n_relax,
            match_tol=match_tol, basis=basis,
        )
        try:
            p1 = iso.phase_of_batch(probes)
            p2 = iso2.phase_of_batch(probes)
        except NotConvergedError:
            iso = iso2
            continue
        if np.max(np.abs(phase_diff(p1, p2, iso.period))) < tol:
            return iso2
        iso = iso2
    raise NotConvergedError(
        "relax horizon doubling did not reach the Cauchy tolerance "
        f"{tol:g}; the probes may be outside the basin"
    )


# --- phase time series --------------------------------------------------------


@dataclass
class PhaseSeries:
    """Unwrapped isochronal phase along one killed path."""

    times: np.ndarray
    unwrapped_phase: np.ndarray
    survived_to: float

    def slope(self, t_min: float = 0.0, t_max: float | None = None) -> float:
        m = self.times >= t_min
        if t_max is not None:
            m &= self.times <= t_max
        if m.sum() < 2:
            raise ValidationError("not enough points for a slope")
        return float(np.polyfit(self.times[m], self.unwrapped_phase[m], 1)[0])


def phase_series(path: KilledPath, iso: IsochronMap) -> PhaseSeries:
    """Per-snapshot phase, unwrapped by nearest-branch continuation.

    Snapshots after the killing time are excluded.  A jump larger than
    half a period between consecutive snapshots raises
    ``PhaseUnwrapError`` (the snapshot stride is too coarse) rather than
    silently unwrapping.
    """
    if path.exited:
        keep = path.times < path.tau
    else:
        keep = np.ones(path.times.size, dtype=bool)
    times = path.times[keep]
    if times.size == 0:
        return PhaseSeries(times=times, unwrapped_phase=times.copy(),
                           survived_to=float(min(path.tau, 0.0)))
    snaps = path.snapshots[keep]
    wrapped = iso.phase_of_batch(snaps)
    incr = phase_diff(wrapped[1:], wrapped[:-1], iso.period)
    expected = iso.v0 * np.diff(times)
    # a true increment beyond half a period aliases; flag the step
    if np.any(np.abs(incr - expected) > iso.period / 2 * 0.98):
        bad = int(np.argmax(np.abs(incr - expected)))
        raise PhaseUnwrapError(
            f"phase jump of {incr[bad]:+.4g} (expected ~{expected[bad]:+.4g}) "
            f"between snapshots {bad} and {bad + 1}; reduce the stride"
        )
    unwrapped = np.concatenate([[wrapped[0]], wrapped[0] + np.cumsum(incr)])
    survived = float(path.tau if path.exited else times[-1])
    return PhaseSeries(times=times, unwrapped_phase=unwrapped,
                       survived_to=survived)


# --- Ito decomposition check ---------------------------------------------------


@dataclass
class ItoCheck:
    """Drift integral, martingale residual, and quadratic-variation data."""

    times: np.ndarray
    drift_integral: np.ndarray
    residual: np.ndarray
    qv_empirical: float
    qv_predicted: float
    drift_rate: np.ndarray
    qv_rate: np.ndarray

    @property
    def qv_ratio(self) -> float:
        return self.qv_empirical / self.qv_predicted if self.qv_predicted else np.inf


def drift_and_qv_rates(
    states: np.ndarray,
    iso: IsochronMap,
    spec: ModelSpec,
    h_rel: float = 1e-4,
    max_modes: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise Ito rates of the phase at each state of a batch.

    Returns ``(drift, qv)`` where ``drift = Dpi V + (sigma^2/2) sum_k
    D2pi[Be_k, Be_k]`` and ``qv = sigma^2 sum_k (Dpi[Be_k])^2``, all by
    central differences along the actual noise directions.  Probe states
    that leave the basin surface as ``StencilOverflowError``.
    """
    states = np.asarray(states, dtype=float)
    if states.ndim == 2:
        states = states[None]
    N = states.shape[0]
    basis = iso.basis
    lam = spec.mode_rates(basis)
    v_field = basis.from_modes(-lam * basis.to_modes(states)) + spec.poly(states)
    dirs = iso.noise_directions(max_modes=max_modes)
    n_dirs = dirs.shape[0]
    scale = max(float(np.max(np.abs(states))), 1e-12)
    h = h_rel * scale

    vnorm = np.max(np.abs(v_field), axis=(-2, -1), keepdims=True)
    v_unit = v_field / np.maximum(vnorm, 1e-300)
    batch = [states]
    batch.append(states + h * v_unit)
    batch.append(states - h * v_unit)
    for d in dirs:
        batch.append(states + h * d[None])
        batch.append(states - h * d[None])
    stacked = np.concatenate(batch, axis=0)
    try:
        phases = iso.phase_of_batch(stacked)
    except NotConvergedError as exc:
        raise StencilOverflowError(
            f"a finite-difference probe left the isochron basin: {exc}"
        ) from exc
    P = iso.period
    p0 = phases[:N]
    idx = N

    def take():
        nonlocal idx
        out = phases[idx : idx + N]
        idx += N
        return out

    p_vp, p_vm = take(), take()
    dpi_v = phase_diff(p_vp, p_vm, P) / (2 * h) * vnorm[:, 0, 0]
    drift = dpi_v.copy()
    qv = np.zeros(N)
    for _ in range(n_dirs):
        pp, pm = take(), take()
        dpi = phase_diff(pp, pm, P) / (2 * h)
        d2pi = (phase_diff(pp, p0, P) + phase_diff(pm, p0, P)) / h**2
        drift += 0.5 * spec.sigma**2 * d2pi
        qv += spec.sigma**2 * dpi**2
    return drift, qv


def ito_residual_check(
    path: KilledPath,
    iso: IsochronMap,
    spec: ModelSpec,
    h_rel: float = 1e-4,
    max_modes: int | None = None,
) -> ItoCheck:
    """Decompose one path's phase into drift integral plus martingale rest.

    The residual ``unwrapped phase - integral of the Ito drift`` should be
    a martingale: mean compatible with zero over an ensemble, quadratic
    variation matching the integrated ``sigma^2 ||Dpi B||^2``.  Integrals
    are left-endpoint Riemann sums (Ito convention).
    """
    series = phase_series(path, iso)
    t = series.times
    if t.size < 3:
        raise ValidationError("path too short for an Ito check")
    snaps = path.snapshots[: t.size]
    drift, qv = drift_and_qv_rates(snaps, iso, spec, h_rel=h_rel,
                                   max_modes=max_modes)
    dts = np.diff(t)
    drift_int = np.concatenate([[0.0], np.cumsum(drift[:-1] * dts)])
    qv_int = np.concatenate([[0.0], np.cumsum(qv[:-1] * dts)])
    dphi = series.unwrapped_phase - series.unwrapped_phase[0]
    residual = dphi - drift_int
    qv_emp = float(np.sum(np.diff(residual) ** 2))
    return ItoCheck(
        times=t, drift_integral=drift_int, residual=residual,
        qv_empirical=qv_emp, qv_predicted=float(qv_int[-1]),
        drift_rate=drift, qv_rate=qv,
    )


# --- quasi-asymptotic frequency -------------------------------------------------


@dataclass
class FrequencyEstimate:
    """Both frequency estimators, in the units of the manifold's c0."""

    sigma: float
    slope_estimate: float
    slope_stderr: float
    beta_estimate: float
    beta_stderr: float
    exact: bool = False

    def agree_within(self, n_sigma: float = 3.0) -> bool:
        se = np.hypot(self.slope_stderr, self.beta_stderr)
        if se == 0:
            return np.isclose(self.slope_estimate, self.beta_estimate)
        return abs(self.slope_estimate - self.beta_estimate) <= n_sigma * se


def quasi_asymptotic_frequency(
    spec: ModelSpec,
    tube: TubeSpec,
    iso: IsochronMap,
    plan: RandomPlan,
    n_particles: int = 48,
    t_max: float = 60.0,
    dt: float = 2e-3,
    stride_steps: int = 25,
    stencil_every: int = 4,
    burn_in_frac: float = 0.2,
    h_rel: float = 1e-4,
    workers: int = 1,
) -> FrequencyEstimate:
    """Survival-conditioned phase frequency, two ways.

    The slope estimator averages per-stride phase increments of a
    Fleming-Viot ensemble (phases ride through resampling via donor
    copies); the companion estimator averages the pointwise Ito drift rate
    over the same conditioned ensemble (the quasi-ergodic integral of the
    phase drift).  Both are rescaled by the manifold's frequency scale so
    the deterministic value is c0.  With ``sigma = 0`` the flow is
    deterministic and the exact slope is returned with zero stderr.
    """
    man = iso.manifold
    scale = man.frequency_scale
    if spec.sigma == 0:
        x0 = man.point_at(0.0)
        sys0 = _ens.SpdeSystem(spec, tube, dt, plan, workers=workers)
        n_steps = int(round(t_max / dt))
        states = sys0.initial(x0, 1)
        p_prev = iso.phase_of_batch(states)[0]
        total = 0.0
        for step in range(n_steps):
            states = sys0.step(states, step)
            if (step + 1) % stride_steps == 0:
                p_new = iso.phase_of_batch(states)[0]
                total += phase_diff(p_new, p_prev, iso.period)
                p_prev = p_new
        t_covered = (n_steps // stride_steps) * stride_steps * dt
        c = total / t_covered * scale
        return FrequencyEstimate(
            sigma=0.0, slope_estimate=float(c), slope_stderr=0.0,
            beta_estimate=float(c), beta_stderr=0.0, exact=True,
        )

    system = _ens.SpdeSystem(spec, tube, dt, plan, workers=workers)
    x0 = man.point_at(0.0)
    states0 = system.initial(x0, n_particles)
    last_wrapped = iso.phase_of_batch(states0)
    carries = {"last_wrapped": last_wrapped}
    incr_means: list[float] = []
    drift_means: list[float] = []
    snap_counter = [0]

    def on_snapshot(step, t, states):
        wrapped = iso.phase_of_batch(states)
        incr = phase_diff(wrapped, carries["last_wrapped"], iso.period)
        carries["last_wrapped"][:] = wrapped
        incr_means.append(float(incr.mean()))
        if snap_counter[0] % stencil_every == 0:
            drift, _ = drift_and_qv_rates(states, iso, spec, h_rel=h_rel)
            drift_means.append(float(drift.mean()))
        snap_counter[0] += 1

    n_steps = int(round(t_max / dt))
    _ens.fleming_viot_run(
        system, states0, n_steps, plan,
        snapshot_stride=stride_steps, store_states=False,
        carries=carries, on_snapshot=on_snapshot,
    )
    k_burn = int(np.ceil(burn_in_frac * len(incr_means)))
    incr_arr = np.array(incr_means[k_burn:]) / (stride_steps * dt)
    m_slope, se_slope = _ens.batch_means(incr_arr)
    d_burn = int(np.ceil(burn_in_frac * len(drift_means)))
    drift_arr = np.array(drift_means[d_burn:])
    m_beta, se_beta = _ens.batch_means(drift_arr)
    return FrequencyEstimate(
        sigma=spec.sigma,
        slope_estimate=float(m_slope * scale),
        slope_stderr=float(se_slope * abs(scale)),
        beta_estimate=float(m_beta * scale),
        beta_stderr=float(se_beta * abs(scale)),
    )


# --- sigma sweep decomposition ---------------------------------------------------


@dataclass
class DecompositionResult:
    """Quadratic fit of a frequency sweep and the residual departure.

    ``residuals[i]`` is the measured departure of row i from the fitted
    ``c0 + q sigma^2`` law: the observable footprint of the
    noise-dependent part of the quadratic coefficient.
    """

    c0_hat: float
    quad_coeff: float
    sigmas: np.ndarray
    c_values: np.ndarray
    stderrs: np.ndarray
    residuals: np.ndarray

    def quadratic_departure(self) -> float:
        return float(np.max(np.abs(self.residuals)))


def frequency_decomposition(
    sweep: Sequence[tuple[float, float, float]],
) -> DecompositionResult:
    """Fit ``c_sigma = c0 + q sigma^2`` to a sweep of (sigma, c, stderr).

    Needs at least four sigma values including zero.  The fit is ordinary
    least squares in sigma^2 (rows are typically equally informative at
    desk scale); residuals are reported per row so a systematic departure
    from the quadratic law is visible against the stderr column.
    """
    rows = sorted(sweep)
    sigmas = np.array([r[0] for r in rows], dtype=float)
    cs = np.array([r[1] for r in rows], dtype=float)
    ses = np.array([r[2] for r in rows], dtype=float)
    if sigmas.size < 4 or not np.any(sigmas == 0.0):
        raise InsufficientSweepError(
            "need >= 4 sigma values including sigma = 0"
        )
    if np.unique(sigmas).size != sigmas.size:
        raise InsufficientSweepError("sigma values must be distinct")
    design = np.stack([np.ones_like(sigmas), sigmas**2], axis=1)
    coef, *_ = np.linalg.lstsq(design, cs, rcond=None)
    fit = design @ coef
    return DecompositionResult(
        c0_hat=float(coef[0]), quad_coeff=float(coef[1]),
        sigmas=sigmas, c_values=cs, stderrs=ses, residuals=cs - fit,
    )
