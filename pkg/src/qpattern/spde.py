"""Mild-solution integrator: exponential Euler with exact noise increments.

One step of the scheme maps mode coefficients ``x`` to

    decay * (x + dt * modes(N(state))) + xi,

where ``decay = exp(-lambda_k dt)`` is the exact linear semigroup and
``xi`` is a Gaussian increment with the exact per-mode variance of the
stochastic convolution, ``sigma^2 b_k^2 (1 - exp(-2 lambda_k dt)) /
(2 lambda_k)``.  The reaction is evaluated pointwise in physical space and
its contribution is dealiased with the 2/3 rule before re-entering mode
space (pseudo-spectral split, one transform pair per step).

With ``sigma = 0`` the step is deterministic and bit-identical to
``evolve_deterministic``; with zero reaction the step never leaves mode
space, which the linear fast path below exploits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, ValidationError
from .fields import Field, SpectralBasis, basis_for
from .models import ModelSpec, ou_increment_variance, semigroup_factor
from .rng import LANE_PATH, RandomPlan


class MildStepper:
    """Precomputed exponential-Euler step for one (spec, basis, dt).

    All methods are pure functions of their arguments; instances are
    immutable after construction and safe to share across threads.
    """

    def __init__(
        self,
        spec: ModelSpec,
        basis: SpectralBasis,
        dt: float,
        dealias: bool = True,
    ):
        if dt <= 0:
            raise ValidationError("dt must be > 0")
        self.spec = spec
        self.basis = basis
        self.dt = float(dt)
        self.decay = semigroup_factor(spec, basis, dt)
        self.noise_std = np.sqrt(ou_increment_variance(spec, basis, dt))
        self.has_noise = spec.sigma > 0 and np.any(self.noise_std > 0)
        self.mask = basis.dealias_mask() if dealias else None
        self.poly = spec.poly

    @property
    def n_noise(self) -> int:
        return self.basis.n_modes

    def step_values(
        self, values: np.ndarray, normals: np.ndarray | None, check: bool = True
    ) -> np.ndarray:
        """Advance raw ``(..., n_comp, n_grid)`` values by one step.

        ``normals`` must be standard normal with shape
        ``(..., n_comp, n_modes)`` (ignored when the model has no noise).
        With ``check`` (the default) an overflowing reaction raises
        ``NonFiniteError``; with ``check=False`` the non-finite rows are
        returned as-is for the caller to treat as killed.
        """
        basis = self.basis
        with np.errstate(over="ignore", invalid="ignore"):
            modes = basis.to_modes(values)
            if not self.poly.is_zero:
                reaction = basis.to_modes(self.poly(values))
                if self.mask is not None and self.poly.max_degree > 1:
                    reaction = reaction * self.mask
                modes = self.decay * (modes + self.dt * reaction)
            else:
                modes = self.decay * modes
            if self.has_noise and normals is not None:
                modes = modes + self.noise_std * normals
            out = basis.from_modes(modes)
        if check and not self.poly.is_zero and not np.all(np.isfinite(out)):
            raise NonFiniteError("state overflowed during the reaction step")
        return out

    def step_modes_linear(
        self, modes: np.ndarray, normals: np.ndarray | None
    ) -> np.ndarray:
        """Zero-reaction step entirely in mode space.

        Equivalent to ``to_modes(step_values(from_modes(modes)))`` when the
        polynomial is zero; used for long pure-OU runs where the transform
        round trip would dominate the cost.
        """
        if not self.poly.is_zero:
            raise ValidationError("mode-space stepping requires a zero reaction")
        out = self.decay * modes
        if self.has_noise and normals is not None:
            out = out + self.noise_std * normals
        return out


def step_mild(
    x: Field,
    spec: ModelSpec,
    dt: float,
    rng: np.random.Generator | None = None,
    normals: np.ndarray | None = None,
    dealias: bool = True,
) -> Field:
    """One mild-solution step of a single field.

    Noise is taken from ``normals`` (standard normal, shape
    ``(n_comp, n_modes)``) when given, otherwise drawn from ``rng``;
    with ``spec.sigma == 0`` neither is needed.
    """
    basis = basis_for(x)
    stepper = MildStepper(spec, basis, dt, dealias=dealias)
    if stepper.has_noise and normals is None:
        if rng is None:
            raise ValidationError("noisy step needs an rng or explicit normals")
        normals = rng.standard_normal((x.n_comp, basis.n_modes))
    return x.like(stepper.step_values(x.values, normals))


def evolve_deterministic(x: Field, spec: ModelSpec, t: float, dt: float) -> Field:
    """Flow map of the deterministic equation via repeated sigma=0 steps.

    The number of steps is ``round(t / dt)``; ``t = 0`` returns the input
    unchanged.
    """
    if t < 0:
        raise ValidationError("t must be >= 0")
    n_steps = int(round(t / dt))
    if n_steps == 0:
        return x.copy()
    basis = basis_for(x)
    stepper = MildStepper(_silence(spec), basis, dt)
    values = x.values
    for _ in range(n_steps):
        values = stepper.step_values(values, None)
    return x.like(values)


def evolve_values(
    values: np.ndarray,
    spec: ModelSpec,
    basis: SpectralBasis,
    n_steps: int,
    dt: float,
) -> np.ndarray:
    """Batched deterministic flow on raw ``(..., n_comp, n_grid)`` arrays."""
    stepper = MildStepper(_silence(spec), basis, dt)
    for _ in range(int(n_steps)):
        values = stepper.step_values(values, None)
    return values


@dataclass
class OUTrace:
    """Mode-coefficient samples of a pure OU run (samples, n_comp, n_modes)."""

    samples: np.ndarray
    dt: float
    stride: int

    def mode_variance(self, slot: int, comp: int = 0) -> tuple[float, float]:
        """Sample variance of one mode slot with a batch-means stderr."""
        x = self.samples[:, comp, slot]
        v = float(np.var(x))
        n_batches = 10
        usable = (x.size // n_batches) * n_batches
        batches = x[:usable].reshape(n_batches, -1)
        bv = batches.var(axis=1)
        se = float(bv.std(ddof=1) / np.sqrt(n_batches))
        return v, se


def simulate_ou_modes(
    spec: ModelSpec,
    basis: SpectralBasis,
    dt: float,
    n_steps: int,
    plan: RandomPlan,
    stride: int = 1,
    burn_in_steps: int = 0,
    lane: int = LANE_PATH,
) -> OUTrace:
    """Long zero-reaction run recording mode coefficients every ``stride``.

    Stays in mode space throughout (see ``MildStepper.step_modes_linear``);
    a short cross-check against ``step_mild`` on the same noise is in the
    test suite.
    """
    if not spec.poly.is_zero:
        raise ValidationError("simulate_ou_modes requires a zero reaction")
    stepper = MildStepper(spec, basis, dt)
    modes = np.zeros((spec.n_comp, basis.n_modes))
    out = []
    for step in range(int(n_steps)):
        normals = plan.normals(lane, step, modes.shape)
        modes = stepper.step_modes_linear(modes, normals)
        if step >= burn_in_steps and (step - burn_in_steps) % stride == 0:
            out.append(modes.copy())
    return OUTrace(np.array(out), dt=dt, stride=stride)


def _silence(spec: ModelSpec) -> ModelSpec:
    """Copy of the spec with the noise turned off."""
    if spec.sigma == 0:
        return spec
    return ModelSpec(
        d=spec.d, a=spec.a, poly=spec.poly,
        b_multipliers=spec.b_multipliers, sigma=0.0,
        kappa_bound=spec.kappa_bound,
    )
