"""Discretized fields and the orthonormal mode decomposition.

A field is a real array of shape ``(n_comp, n_grid)`` on a 1-D spatial grid,
either periodic or with homogeneous Dirichlet boundaries.  The linear part
of every model here is diagonal in the Fourier (periodic) or sine
(Dirichlet) basis, so the integrator works in mode coefficients with the
L2([0, L]) orthonormal normalization: ``a_k = integral of u * e_k``, with
``e_k`` the orthonormal eigenfunctions of the Laplacian.  In this
normalization an Ornstein-Uhlenbeck mode driven with multiplier ``b_k`` has
stationary variance ``sigma^2 b_k^2 / (2 lambda_k)`` in the coefficient
itself, which is what the variance oracles measure.
"""

from __future__ import annotations

from dataclasses import dataclass, field as _dc_field

import numpy as np
from scipy import fft as _fft

from .errors import GridMismatchError, ValidationError

PERIODIC = "periodic"
DIRICHLET = "dirichlet"


@dataclass
class Field:
    """State vector: ``values[c, j]`` is component c at grid point j.

    Invariants: all entries finite, ``n_grid >= 8``, ``n_comp >= 1``;
    Dirichlet fields carry explicit zeros at both boundary points.
    """

    values: np.ndarray
    domain_length: float
    boundary: str = PERIODIC

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        self.validate()

    def validate(self) -> None:
        v = self.values
        if v.ndim != 2:
            raise ValidationError(f"field values must be 2-D, got shape {v.shape}")
        n_comp, n_grid = v.shape
        if n_grid < 8:
            raise ValidationError(f"n_grid must be >= 8, got {n_grid}")
        if n_comp < 1:
            raise ValidationError("n_comp must be >= 1")
        if self.domain_length <= 0:
            raise ValidationError("domain_length must be positive")
        if self.boundary not in (PERIODIC, DIRICHLET):
            raise ValidationError(f"unknown boundary {self.boundary!r}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("field contains non-finite entries")
        if self.boundary == DIRICHLET and (
            np.any(v[:, 0] != 0.0) or np.any(v[:, -1] != 0.0)
        ):
            raise ValidationError("dirichlet fields must vanish at the boundary")

    @property
    def n_comp(self) -> int:
        return self.values.shape[0]

    @property
    def n_grid(self) -> int:
        return self.values.shape[1]

    @property
    def grid(self) -> np.ndarray:
        if self.boundary == PERIODIC:
            return np.arange(self.n_grid) * (self.domain_length / self.n_grid)
        return np.linspace(0.0, self.domain_length, self.n_grid)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def copy(self) -> "Field":
        return Field(self.values.copy(), self.domain_length, self.boundary)

    def like(self, values: np.ndarray) -> "Field":
        """New field on the same grid with different values."""
        return Field(np.asarray(values, dtype=float), self.domain_length, self.boundary)

    def same_grid(self, other: "Field") -> bool:
        return (
            self.values.shape == other.values.shape
            and self.boundary == other.boundary
            and np.isclose(self.domain_length, other.domain_length)
        )

    def require_same_grid(self, other: "Field") -> None:
        if not self.same_grid(other):
            raise GridMismatchError(
                f"grids differ: {self.values.shape}/{self.boundary}/L={self.domain_length} "
                f"vs {other.values.shape}/{other.boundary}/L={other.domain_length}"
            )


def sup_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Sup norm over components and grid of the difference."""
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


class SpectralBasis:
    """Orthonormal eigenbasis of the Laplacian on the grid.

    Mode slots are ordered as:

    * periodic, n even: ``[k=0, cos 1..n/2-1, Nyquist, sin 1..n/2-1]``
      (n slots total);
    * Dirichlet: interior sine modes ``k = 1..n-2`` (n-2 slots).

    ``k_index[s]`` gives the wavenumber index of slot ``s`` (the index into
    a ``b_multipliers`` table), and ``wavenumbers[s]`` the physical
    wavenumber ``q_k`` (``2 pi k / L`` periodic, ``pi k / L`` Dirichlet).
    ``to_modes``/``from_modes`` accept arrays with arbitrary leading batch
    dimensions: shape ``(..., n_comp, n_grid) <-> (..., n_comp, n_modes)``.
    """

    def __init__(self, boundary: str, n_grid: int, domain_length: float):
        if boundary not in (PERIODIC, DIRICHLET):
            raise ValidationError(f"unknown boundary {boundary!r}")
        if n_grid < 8:
            raise ValidationError("n_grid must be >= 8")
        if boundary == PERIODIC and n_grid % 2:
            raise ValidationError("periodic grids must have even n_grid")
        self.boundary = boundary
        self.n_grid = int(n_grid)
        self.domain_length = float(domain_length)

        n, L = self.n_grid, self.domain_length
        if boundary == PERIODIC:
            half = n // 2
            k = np.concatenate(
                [[0], np.arange(1, half), [half], np.arange(1, half)]
            )
            self.n_modes = n
            # scale factors between rfft coefficients and orthonormal ones
            self._c0 = np.sqrt(L) / n
            self._ck = np.sqrt(2.0 * L) / n
        else:
            m = n - 2  # interior points
            k = np.arange(1, m + 1)
            self.n_modes = m
            self._h = L / (n - 1)
        self.k_index = k.astype(int)
        if boundary == PERIODIC:
            self.wavenumbers = 2.0 * np.pi * self.k_index / L
        else:
            self.wavenumbers = np.pi * self.k_index / L
        self.n_multipliers = int(self.k_index.max()) + 1

    # -- transforms -------------------------------------------------------

    def to_modes(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        n = self.n_grid
        if values.shape[-1] != n:
            raise GridMismatchError(
                f"expected last axis {n}, got {values.shape[-1]}"
            )
        if self.boundary == PERIODIC:
            half = n // 2
            fu = np.fft.rfft(values, axis=-1)
            out = np.empty(values.shape[:-1] + (self.n_modes,), dtype=float)
            out[..., 0] = self._c0 * fu[..., 0].real
            out[..., 1:half] = self._ck * fu[..., 1:half].real
            out[..., half] = self._c0 * fu[..., half].real
            out[..., half + 1 :] = -self._ck * fu[..., 1:half].imag
            return out
        interior = values[..., 1:-1]
        return np.sqrt(self._h) * _fft.dst(interior, type=1, norm="ortho", axis=-1)

    def from_modes(self, modes: np.ndarray) -> np.ndarray:
        modes = np.asarray(modes, dtype=float)
        if modes.shape[-1] != self.n_modes:
            raise GridMismatchError(
                f"expected last axis {self.n_modes}, got {modes.shape[-1]}"
            )
        n = self.n_grid
        if self.boundary == PERIODIC:
            half = n // 2
            fu = np.zeros(modes.shape[:-1] + (half + 1,), dtype=complex)
            fu[..., 0] = modes[..., 0] / self._c0
            fu[..., 1:half] = (modes[..., 1:half] - 1j * modes[..., half + 1 :]) / self._ck
            fu[..., half] = modes[..., half] / self._c0
            return np.fft.irfft(fu, n=n, axis=-1)
        interior = _fft.idst(modes / np.sqrt(self._h), type=1, norm="ortho", axis=-1)
        out = np.zeros(modes.shape[:-1] + (n,), dtype=float)
        out[..., 1:-1] = interior
        return out

    # -- helpers ----------------------------------------------------------

    def basis_function(self, slot: int) -> np.ndarray:
        """Grid samples of the orthonormal basis function of one slot."""
        e = np.zeros(self.n_modes)
        e[slot] = 1.0
        return self.from_modes(e)

    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask: True on modes kept when adding nonlinear terms."""
        k_max = int(self.k_index.max())
        return self.k_index <= (2 * k_max) // 3

    def slots_for_k(self, k: int) -> np.ndarray:
        """All slots carrying wavenumber index k (1 or 2 slots)."""
        return np.nonzero(self.k_index == k)[0]

    def for_field(self, x: Field) -> "SpectralBasis":
        if (
            x.boundary != self.boundary
            or x.n_grid != self.n_grid
            or not np.isclose(x.domain_length, self.domain_length)
        ):
            raise GridMismatchError("field does not match this basis")
        return self


_BASIS_CACHE: dict[tuple, SpectralBasis] = {}


def basis_for(x: Field) -> SpectralBasis:
    """Memoized basis for a field's grid."""
    key = (x.boundary, x.n_grid, round(x.domain_length, 12))
    b = _BASIS_CACHE.get(key)
    if b is None:
        b = SpectralBasis(x.boundary, x.n_grid, x.domain_length)
        _BASIS_CACHE[key] = b
    return b


def shift_values(values: np.ndarray, shift: float, domain_length: float) -> np.ndarray:
    """Circularly shift a periodic field by a (possibly sub-grid) amount.

    Positive shift moves the profile toward larger xi: the result at
    xi equals the input at xi - shift.  Exact for grid multiples,
    spectral interpolation otherwise.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    cell = domain_length / n
    steps = shift / cell
    if np.isclose(steps, np.round(steps), atol=1e-12):
        return np.roll(values, int(np.round(steps)) % n, axis=-1)
    fu = np.fft.rfft(values, axis=-1)
    k = np.arange(n // 2 + 1)
    phase = np.exp(-2j * np.pi * k * shift / domain_length)
    return np.fft.irfft(fu * phase, n=n, axis=-1)
