"""Model specifications: linear operator, polynomial reaction, noise shape.

The linear part is ``d * Laplacian - a`` (diffusion ``d > 0``, damping
``a >= 0``), diagonal in the spectral basis with per-mode decay rate
``lambda_k = d q_k^2 + a``.  The reaction is a vector polynomial evaluated
pointwise in physical space.  The noise operator B acts as a real spectral
multiplier ``b_k`` on wavenumber index k, shared by the cosine and sine
slots of that wavenumber.

Assumption checking is two-tier: ``ModelSpec.validate`` enforces structural
invariants (positivity, shapes) and raises; ``validate_assumptions`` checks
the sufficient conditions for a spectral-gap-controlled tube problem
(slowest-mode decay rate positive, reaction Lipschitz bound below it, noise
multipliers bounded away from zero) and returns warnings, because useful
desk models routinely sit outside the sufficient regime.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError, ZeroModeError
from .fields import DIRICHLET, PERIODIC, SpectralBasis


class VectorPolynomial:
    """Polynomial map R^n -> R^n evaluated pointwise on fields.

    ``terms[i]`` is a list of ``(coef, powers)`` monomials for output
    component i, with ``powers`` a length-n tuple of exponents: component i
    of the output is ``sum(coef * prod_j u_j**powers[j])``.
    """

    def __init__(self, terms: Sequence[Sequence[tuple[float, tuple[int, ...]]]]):
        self.n_comp = len(terms)
        clean = []
        for comp_terms in terms:
            row = []
            for coef, powers in comp_terms:
                powers = tuple(int(p) for p in powers)
                if len(powers) != self.n_comp:
                    raise ValidationError(
                        "monomial power tuple length must equal n_comp"
                    )
                if any(p < 0 for p in powers):
                    raise ValidationError("monomial powers must be nonnegative")
                if coef != 0.0:
                    row.append((float(coef), powers))
            clean.append(tuple(row))
        self.terms = tuple(clean)

    @classmethod
    def scalar(cls, coeffs: Sequence[float]) -> "VectorPolynomial":
        """Single-component polynomial sum(coeffs[m] * u**m)."""
        return cls([[(c, (m,)) for m, c in enumerate(coeffs)]])

    @classmethod
    def zero(cls, n_comp: int) -> "VectorPolynomial":
        return cls([[] for _ in range(n_comp)])

    @property
    def is_zero(self) -> bool:
        return all(len(row) == 0 for row in self.terms)

    @property
    def max_degree(self) -> int:
        deg = 0
        for row in self.terms:
            for _, powers in row:
                deg = max(deg, sum(powers))
        return deg

    def __call__(self, values: np.ndarray) -> np.ndarray:
        """Evaluate on ``(..., n_comp, n_grid)`` arrays."""
        values = np.asarray(values, dtype=float)
        if values.shape[-2] != self.n_comp:
            raise ValidationError(
                f"polynomial has {self.n_comp} components, field has "
                f"{values.shape[-2]}"
            )
        # cache powers u_j^p once; each monomial is then one fused
        # multiply per contributing component
        max_pow = [0] * self.n_comp
        for row in self.terms:
            for _, powers in row:
                for j, p in enumerate(powers):
                    max_pow[j] = max(max_pow[j], p)
        pow_cache: list[list[np.ndarray | None]] = []
        for j in range(self.n_comp):
            comp = values[..., j, :]
            cache: list[np.ndarray | None] = [None, comp]
            for p in range(2, max_pow[j] + 1):
                cache.append(cache[-1] * comp)
            pow_cache.append(cache)
        out = np.zeros_like(values)
        for i, row in enumerate(self.terms):
            acc = out[..., i, :]
            for coef, powers in row:
                term = None
                for j, p in enumerate(powers):
                    if p > 0:
                        factor = pow_cache[j][p]
                        term = factor if term is None else term * factor
                if term is None:
                    acc += coef
                else:
                    acc += coef * term
        return out

    def __repr__(self):  # pragma: no cover
        return f"VectorPolynomial(n_comp={self.n_comp}, degree={self.max_degree})"


@dataclass
class ModelSpec:
    """Reaction-diffusion model with additive spectral noise.

    ``b_multipliers`` is indexed by wavenumber (mode) index; entry k scales
    the noise injected into every slot with that index.  ``kappa_bound`` is
    the user-asserted Lipschitz constant of the reaction on the tube of
    interest; it is only consulted by ``validate_assumptions``.
    """

    d: float
    a: float
    poly: VectorPolynomial
    b_multipliers: np.ndarray
    sigma: float
    kappa_bound: float = np.nan

    def __post_init__(self):
        self.b_multipliers = np.atleast_1d(
            np.asarray(self.b_multipliers, dtype=float)
        )
        self.validate()

    def validate(self) -> None:
        if not self.d > 0:
            raise ValidationError("diffusion d must be > 0")
        if self.a < 0:
            raise ValidationError("damping a must be >= 0")
        if self.sigma < 0:
            raise ValidationError("sigma must be >= 0")
        if self.b_multipliers.ndim != 1:
            raise ValidationError("b_multipliers must be a 1-D array")
        if np.any(~np.isfinite(self.b_multipliers)):
            raise ValidationError("b_multipliers must be finite")

    @property
    def n_comp(self) -> int:
        return self.poly.n_comp

    # -- spectral quantities ----------------------------------------------

    def b_for_basis(self, basis: SpectralBasis) -> np.ndarray:
        """Noise multiplier per mode slot (padded with the last entry)."""
        b = self.b_multipliers
        need = basis.n_multipliers
        if b.size == 1:
            b = np.full(need, b[0])
        elif b.size < need:
            b = np.concatenate([b, np.full(need - b.size, b[-1])])
        return b[basis.k_index]

    def mode_rates(self, basis: SpectralBasis) -> np.ndarray:
        """Per-slot decay rate lambda_k = d q_k^2 + a."""
        return self.d * basis.wavenumbers**2 + self.a

    def omega(self, basis: SpectralBasis) -> float:
        """Decay rate of the slowest linear mode (k=0 for periodic grids)."""
        if basis.boundary == PERIODIC:
            return float(self.a)
        return float(self.d * (np.pi / basis.domain_length) ** 2 + self.a)

    def validate_assumptions(self, basis: SpectralBasis) -> list[str]:
        """Warnings for violated sufficient conditions (never raises)."""
        warnings = []
        omega = self.omega(basis)
        if omega <= 0:
            warnings.append(
                f"omega = {omega:g}: slowest mode does not decay; the "
                "semigroup is not a contraction"
            )
        kappa = self.kappa_bound
        if np.isnan(kappa):
            warnings.append("kappa_bound not set; tube Lipschitz check skipped")
        elif not 0 < kappa < omega:
            warnings.append(
                f"kappa = {kappa:g} not in (0, omega = {omega:g}): the "
                "sufficient condition for the spectral gap fails"
            )
        b = self.b_for_basis(basis)
        if np.min(np.abs(b)) <= 0:
            warnings.append(
                "noise multipliers touch zero: B has no bounded inverse and "
                "irreducibility of the dynamics is not guaranteed"
            )
        return warnings


def semigroup_factor(spec: ModelSpec, basis: SpectralBasis, dt: float) -> np.ndarray:
    """Per-slot multiplier exp(-(d q_k^2 + a) dt) of the linear flow."""
    if dt <= 0:
        raise ValidationError("dt must be > 0")
    return np.exp(-spec.mode_rates(basis) * dt)


def ou_increment_variance(
    spec: ModelSpec, basis: SpectralBasis, dt: float
) -> np.ndarray:
    """Exact per-slot variance of the stochastic convolution over one step.

    ``sigma^2 b_k^2 (1 - exp(-2 lambda_k dt)) / (2 lambda_k)``, with the
    ``lambda_k = 0`` limit ``sigma^2 b_k^2 dt``.
    """
    lam = spec.mode_rates(basis)
    b = spec.b_for_basis(basis)
    out = np.empty_like(lam)
    zero = lam == 0.0
    nz = ~zero
    out[nz] = (1.0 - np.exp(-2.0 * lam[nz] * dt)) / (2.0 * lam[nz])
    out[zero] = dt
    return spec.sigma**2 * b**2 * out


def ou_stationary_variance(spec: ModelSpec, basis: SpectralBasis, k: int) -> float:
    """Stationary variance sigma^2 b_k^2 / (2 lambda_k) of mode index k.

    This is the Lyapunov-equation value, confirmed against long-run sample
    variances of the simulated process.  Raises ``ZeroModeError`` when the
    mode does not decay (no stationary law exists).
    """
    slots = basis.slots_for_k(int(k))
    if slots.size == 0:
        raise ValidationError(f"mode index {k} not resolved on this grid")
    lam = float(spec.mode_rates(basis)[slots[0]])
    if lam == 0.0:
        raise ZeroModeError(f"mode k={k} has zero decay rate")
    b = float(spec.b_for_basis(basis)[slots[0]])
    return spec.sigma**2 * b**2 / (2.0 * lam)


# --- model builders ------------------------------------------------------

def nagumo_reaction(alpha: float = 0.25) -> VectorPolynomial:
    """Bistable cubic u(1-u)(u-alpha) = -alpha u + (1+alpha) u^2 - u^3."""
    return VectorPolynomial.scalar([0.0, -alpha, 1.0 + alpha, -1.0])


def nagumo_model(
    alpha: float = 0.25,
    d: float = 1.0,
    a: float = 0.0,
    sigma: float = 0.0,
    b: float = 1.0,
) -> ModelSpec:
    """Scalar Nagumo equation u_t = d u_xx - a u + u(1-u)(u-alpha) + noise."""
    return ModelSpec(
        d=d, a=a, poly=nagumo_reaction(alpha), b_multipliers=np.array([b]),
        sigma=sigma, kappa_bound=max(alpha, 1.0),
    )


def fitzhugh_nagumo_model(
    alpha: float = 0.1,
    eps: float = 0.02,
    gamma: float = 1.0,
    d: float = 1.0,
    damping: float = 0.05,
    sigma: float = 0.0,
    b: float = 1.0,
) -> ModelSpec:
    """Excitable FitzHugh-Nagumo system supporting stable pulses on a ring.

        u_t = d u_xx + u(1-u)(u-alpha) - w
        w_t = d w_xx + eps (u - gamma w)

    The linear damping ``damping`` is applied through the semigroup and
    added back to the reaction, leaving the dynamics unchanged while giving
    the k=0 mode a positive decay rate (so the linear flow is a strict
    contraction, as the tube framework assumes).
    """
    u, w = 0, 1
    terms_u = [
        (-alpha, _pow(2, u, 1)),
        (1.0 + alpha, _pow(2, u, 2)),
        (-1.0, _pow(2, u, 3)),
        (-1.0, _pow(2, w, 1)),
        (damping, _pow(2, u, 1)),
    ]
    terms_w = [
        (eps, _pow(2, u, 1)),
        (-eps * gamma, _pow(2, w, 1)),
        (damping, _pow(2, w, 1)),
    ]
    return ModelSpec(
        d=d, a=damping,
        poly=VectorPolynomial([terms_u, terms_w]),
        b_multipliers=np.array([b]), sigma=sigma,
        kappa_bound=2.0 + eps,
    )


def stuart_landau_model(
    mu: float = 1.0,
    omega: float = 1.0,
    twist: float = 0.3,
    twist2: float = 0.0,
    damping: float = 1.0,
    sigma: float = 0.0,
    b0: float = 1.0,
) -> ModelSpec:
    """Planar normal-form oscillator embedded as constant-in-space fields.

    In polar coordinates with r^2 = u^2 + v^2:

        r'     = r (mu - r^2)
        theta' = omega + twist (r^2 - mu) + twist2 (r^2 - mu)^2

    Limit cycle at r = sqrt(mu), angular frequency omega, period
    2 pi / omega.  The asymptotic (isochronal) angle has the closed form

        chi = theta + (twist - twist2 mu) ln(r / sqrt(mu))
                    + (twist2 / 2) (r^2 - mu)

    which this module exposes through ``stuart_landau_phase`` for use as an
    independent oracle.  Noise enters only through the spatially constant
    mode (b_k = 0 for k > 0), so fields that start constant stay constant
    and the system is an honest planar SDE.
    """
    s, s2 = twist, twist2
    # u' = (mu - r^2) u - Omega(r) v,  v' = (mu - r^2) v + Omega(r) u,
    # with Omega(r) = omega + s (r^2 - mu) + s2 (r^2 - mu)^2; plus `damping`
    # added back to cancel the linear semigroup's -damping.
    u, v = 0, 1

    def omega_terms(target_sign: float, src: int):
        # expand Omega(r) * x_src: (r^2 - mu)^p * x_src as monomials
        base = omega + s * (-mu) + s2 * mu**2
        lin = s - 2.0 * s2 * mu  # coefficient of r^2
        quad = s2  # coefficient of r^4
        out = []
        out.append((target_sign * base, _pow(2, src, 1)))
        for cu, cv in ((2, 0), (0, 2)):
            powers = [0, 0]
            powers[u] += cu
            powers[v] += cv
            powers[src] += 1
            out.append((target_sign * lin, tuple(powers)))
        # r^4 = u^4 + 2 u^2 v^2 + v^4
        for coef, cu, cv in ((1, 4, 0), (2, 2, 2), (1, 0, 4)):
            powers = [0, 0]
            powers[u] += cu
            powers[v] += cv
            powers[src] += 1
            out.append((target_sign * quad * coef, tuple(powers)))
        return out

    def radial_terms(tgt: int):
        # (mu - r^2) x_tgt
        out = [(mu + damping, _pow(2, tgt, 1))]
        for cu, cv in ((2, 0), (0, 2)):
            powers = [0, 0]
            powers[u] += cu
            powers[v] += cv
            powers[tgt] += 1
            out.append((-1.0, tuple(powers)))
        return out

    terms_u = radial_terms(u) + omega_terms(-1.0, v)
    terms_v = radial_terms(v) + omega_terms(+1.0, u)
    nb = 64  # enough multiplier entries for any desk grid
    b_mult = np.zeros(nb)
    b_mult[0] = b0
    return ModelSpec(
        d=1.0, a=damping,
        poly=VectorPolynomial([terms_u, terms_v]),
        b_multipliers=b_mult, sigma=sigma,
        kappa_bound=3.0 * mu + damping,
    )


def stuart_landau_phase(
    uv: np.ndarray, mu: float, omega: float, twist: float, twist2: float = 0.0
) -> np.ndarray:
    """Analytic isochronal phase of the planar normal form, in time units.

    Input ``uv[..., 0:2]`` are the planar coordinates; output is in
    ``[0, 2 pi / omega)`` with phase zero on the positive-u axis of the
    cycle.  Independent oracle for the relax-and-match isochron map.
    """
    uv = np.asarray(uv, dtype=float)
    uu, vv = uv[..., 0], uv[..., 1]
    r2 = uu**2 + vv**2
    chi = (
        np.arctan2(vv, uu)
        + (twist - twist2 * mu) * 0.5 * np.log(r2 / mu)
        + 0.5 * twist2 * (r2 - mu)
    )
    period = 2.0 * np.pi / omega
    return np.mod(chi / omega, period)


def ou_model(
    d: float = 1.0, a: float = 1.0, sigma: float = 1.0, b: float = 1.0,
    n_comp: int = 1,
) -> ModelSpec:
    """Pure Ornstein-Uhlenbeck dynamics (zero reaction)."""
    return ModelSpec(
        d=d, a=a, poly=VectorPolynomial.zero(n_comp),
        b_multipliers=np.array([b]), sigma=sigma, kappa_bound=np.nan,
    )


def _pow(n_comp: int, which: int, p: int) -> tuple[int, ...]:
    powers = [0] * n_comp
    powers[which] = p
    return tuple(powers)
