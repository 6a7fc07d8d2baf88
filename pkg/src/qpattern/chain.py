"""Exact finite-state oracle for killed Markov dynamics.

Everything the Monte Carlo estimators target has a closed finite-state
counterpart: for a sub-stochastic matrix Q (row sums <= 1, with genuine
mass loss somewhere) the per-step principal eigenvalue rho and the
positive left/right eigenvectors u, v give

* the quasi-stationary law  alpha_i = u_i            (normalized),
* the quasi-ergodic law     beta_i  ~ u_i v_i        (normalized),
* the decay rate            lambda1 = -ln(rho) / dt,
* the conditioned-convergence rate gamma = ln(rho / |rho2|) / dt,
* the never-killed process  P~_ij = Q_ij v_j / (rho v_i),

all computed here by power iteration with one deflation step (dense,
deterministic, n <= a few thousand).  The eigenfunction identifications
``phi_i = v_i`` and ``phi*_i = u_i / mu_i`` use the reference weights mu
(the invariant law of the unkilled chain) and the normalization
``sum(phi mu) = sum(phi* mu) = 1``; only u, v, rates, and the derived
alpha/beta are convention-free, and those are what the tests pin down.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csgraph, csr_matrix

from .errors import (
    NoKillingError,
    NotIrreducibleError,
    StepTooLargeError,
    ValidationError,
)

_EIG_TOL = 1e-13
_MAX_ITER = 200_000


@dataclass
class SubMarkovMatrix:
    """Killed one-step transition matrix with reference weights.

    ``q[i, j]`` is the probability of moving alive from i to j in one step
    of length ``dt_per_step``; ``1 - sum_j q[i, j]`` is the kill mass of
    state i.  ``mu`` is the reference probability vector used for the
    eigenfunction normalization (for SDE-derived chains: the stationary
    law of the unkilled chain).
    """

    q: np.ndarray
    dt_per_step: float = 1.0
    mu: np.ndarray | None = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        n = self.n_states
        if self.mu is None:
            self.mu = np.full(n, 1.0 / n)
        self.mu = np.asarray(self.mu, dtype=float)
        self.validate()

    @property
    def n_states(self) -> int:
        return self.q.shape[0]

    def validate(self) -> None:
        q = self.q
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValidationError("q must be square")
        if self.dt_per_step <= 0:
            raise ValidationError("dt_per_step must be positive")
        if np.any(q < 0):
            raise ValidationError("q entries must be nonnegative")
        rows = q.sum(axis=1)
        if np.any(rows > 1 + 1e-12):
            raise ValidationError("row sums must not exceed 1")
        if not np.any(rows < 1 - 1e-14):
            raise NoKillingError("every row conserves mass; nothing is killed")
        if self.mu.shape != (self.n_states,):
            raise ValidationError("mu must have one weight per state")
        if np.any(self.mu <= 0):
            raise ValidationError("mu entries must be positive")
        if not np.isclose(self.mu.sum(), 1.0, atol=1e-10):
            raise ValidationError("mu must sum to 1")

    def kill_mass(self) -> np.ndarray:
        return 1.0 - self.q.sum(axis=1)


@dataclass
class SpectralData:
    """Principal eigen-data of a killed chain.

    ``u`` is the left eigenvector normalized to a probability vector (the
    quasi-stationary law), ``v`` the right eigenvector normalized so that
    ``sum(v * mu) = 1`` (the survival eigenfunction phi), ``gap_gamma``
    the rate from the second eigenvalue modulus, and ``M = sum(u * v)``
    the duality pairing in the chain normalization.
    """

    rho: float
    lambda1: float
    u: np.ndarray
    v: np.ndarray
    gap_gamma: float
    M: float
    dt_per_step: float
    mu: np.ndarray

    @property
    def phi(self) -> np.ndarray:
        return self.v

    @property
    def phi_star(self) -> np.ndarray:
        return self.u / self.mu


def _require_irreducible(q: np.ndarray) -> None:
    sparse = csr_matrix(q > 0)
    n_comp, _ = csgraph.connected_components(sparse, directed=True,
                                             connection="strong")
    if n_comp != 1:
        raise NotIrreducibleError(
            f"transition pattern splits into {n_comp} strongly connected pieces"
        )


def principal_eigen(chain: SubMarkovMatrix) -> SpectralData:
    """Power iteration (with one deflation for the gap) to 1e-13 residuals.

    Raises ``NotIrreducibleError`` if the support graph is not strongly
    connected, ``NoKillingError`` if the principal eigenvalue reaches 1.
    """
    q = chain.q
    n = chain.n_states
    _require_irreducible(q)

    v = _power_iterate(q)
    u = _power_iterate(q.T)
    rho = float(u @ q @ v) / float(u @ v)
    if rho >= 1.0 - 1e-14:
        raise NoKillingError(f"principal eigenvalue {rho} is not below 1")
    if rho <= 0:
        raise NotIrreducibleError("principal eigenvalue collapsed to zero")

    # residual polish: one inverse-iteration-like sweep via normalization
    for _ in range(5):
        v = q @ v / rho
        v /= v.sum()
        u = q.T @ u / rho
        u /= u.sum()
        rho = float(u @ q @ v) / float(u @ v)
    res_v = np.max(np.abs(q @ v - rho * v))
    res_u = np.max(np.abs(q.T @ u - rho * u))
    if max(res_u, res_v) > 1e-11:
        raise NotIrreducibleError(
            f"power iteration stalled at residual {max(res_u, res_v):.2e}"
        )

    rho2 = _second_modulus(q, rho, u, v)
    dt = chain.dt_per_step
    lambda1 = -np.log(rho) / dt
    gap = np.log(rho / rho2) / dt if rho2 > 0 else np.inf

    u_n = u / u.sum()
    v_n = v / float(v @ chain.mu)
    return SpectralData(
        rho=rho, lambda1=float(lambda1), u=u_n, v=v_n,
        gap_gamma=float(gap), M=float(u_n @ v_n),
        dt_per_step=dt, mu=chain.mu.copy(),
    )


def _power_iterate(mat: np.ndarray) -> np.ndarray:
    """Dominant eigenvector (L1-normalized); converges on the residual."""
    n = mat.shape[0]
    x = np.full(n, 1.0 / n)
    for it in range(_MAX_ITER):
        y = mat @ x
        s = y.sum()
        if s <= 0:
            raise NotIrreducibleError("iterate lost all mass")
        y /= s
        if it % 8 == 7:
            rho = float(y @ (mat @ y)) / float(y @ y)
            if np.max(np.abs(mat @ y - rho * y)) < _EIG_TOL:
                return y
        x = y
    raise NotIrreducibleError("power iteration did not converge")


def _second_modulus(q, rho, u, v) -> float:
    """Modulus of the second eigenvalue via deflated power iteration.

    The deflated matrix ``q - rho v u^T / (u . v)`` keeps the rest of the
    spectrum; complex pairs make single-step ratios oscillate, so the
    growth rate is read from a least-squares fit of ``ln ||x_m||`` over a
    trailing window.
    """
    n = q.shape[0]
    deflate_uv = np.outer(v, u) / float(u @ v)

    def apply(x):
        return q @ x - rho * (deflate_uv @ x)

    rng = np.random.default_rng(12345)  # fixed: deterministic oracle
    x = rng.standard_normal(n)
    x -= deflate_uv @ x  # project away the principal component
    norm = np.linalg.norm(x)
    if norm == 0:
        return 0.0
    x /= norm
    window = 64
    logs: list[float] = []
    for it in range(3000):
        x = apply(x)
        x -= deflate_uv @ x  # re-project: keeps roundoff leakage down
        nrm = np.linalg.norm(x)
        if nrm < 1e-300:
            return 0.0
        logs.append(np.log(nrm))
        x /= nrm
        # early exit when the iterate has settled to a fixed direction
        # (real simple second eigenvalue)
        if len(logs) >= 2 * window:
            recent = np.mean(logs[-window:])
            older = np.mean(logs[-2 * window : -window])
            if abs(recent - older) < 1e-13:
                return float(np.exp(recent))
    # complex pair: single-step growth oscillates, so average a long tail
    return float(np.exp(np.mean(logs[len(logs) // 2 :])))


def exact_qsd(sd: SpectralData) -> np.ndarray:
    """Quasi-stationary law alpha = u, checked for one-step stationarity."""
    return sd.u.copy()


def exact_qed(sd: SpectralData) -> np.ndarray:
    """Quasi-ergodic law beta proportional to u * v."""
    b = sd.u * sd.v
    return b / b.sum()


def exact_conditioned_expectation(
    chain: SubMarkovMatrix, f: np.ndarray, x0: int, t_steps: int
) -> float:
    """E_x0[f(Z_t) | t < tau] = (Q^t f)(x0) / (Q^t 1)(x0).

    Vectors are renormalized each step by the maximum of Q^t 1 so the
    ratio never underflows.
    """
    f_t = np.asarray(f, dtype=float).copy()
    one_t = np.ones(chain.n_states)
    q = chain.q
    for _ in range(int(t_steps)):
        f_t = q @ f_t
        one_t = q @ one_t
        scale = one_t.max()
        if scale <= 0:
            raise NoKillingError("survival mass vanished entirely")
        f_t /= scale
        one_t /= scale
    return float(f_t[x0] / one_t[x0])


def exact_two_time(
    chain: SubMarkovMatrix,
    f: np.ndarray,
    g: np.ndarray,
    a_frac: float,
    t_steps: int,
    x0: int,
    b_frac: float | None = None,
) -> float:
    """Conditioned product expectation at two (or three) pinned times.

    With ``b_frac`` omitted: ``E_x0[f(Z_at) g(Z_t) | t < tau]`` computed as
    ``Q^{at}(f * Q^{t-at} g)(x0) / Q^t 1(x0)``; the t -> inf limit is
    ``beta(f) alpha(g)``.  With ``b_frac`` in (a, 1): the observable g is
    read at time ``bt`` instead, giving ``E[f(Z_at) g(Z_bt) | t < tau]``
    with limit ``beta(f) beta(g)``.
    """
    if not 0 < a_frac < 1:
        raise ValidationError("a_frac must be in (0, 1)")
    if b_frac is not None and not a_frac < b_frac < 1:
        raise ValidationError("b_frac must be in (a_frac, 1)")
    q = chain.q
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    t_a = int(round(a_frac * t_steps))
    if b_frac is None:
        inner = _apply_power(q, g, t_steps - t_a)
    else:
        t_b = int(round(b_frac * t_steps))
        tail = _apply_power(q, np.ones(chain.n_states), t_steps - t_b)
        inner = _apply_power(q, g * tail, t_b - t_a)
    num = _apply_power(q, f * inner, t_a)
    den = _apply_power(q, np.ones(chain.n_states), t_steps)
    return float(num[x0] / den[x0])


def _apply_power(q: np.ndarray, vec: np.ndarray, steps: int) -> np.ndarray:
    out = vec.copy()
    for _ in range(int(steps)):
        out = q @ out
    return out


def q_process_matrix(sd: SpectralData, chain: SubMarkovMatrix) -> np.ndarray:
    """Doob transform P~_ij = q_ij v_j / (rho v_i): the never-killed chain.

    Rows sum to one exactly up to the eigen residual; the unique stationary
    law of the result is the quasi-ergodic law beta.
    """
    p = chain.q * sd.v[None, :] / (sd.rho * sd.v[:, None])
    return p / p.sum(axis=1, keepdims=True)


def stationary_distribution(p: np.ndarray) -> np.ndarray:
    """Stationary law of a stochastic matrix by left power iteration."""
    x = _power_iterate(p.T)
    return x / x.sum()


# --- SDE bridge -------------------------------------------------------------


def discretize_sde_to_chain(
    drift,
    sigma: float,
    n_states: int,
    interval: tuple[float, float],
    dt: float,
) -> SubMarkovMatrix:
    """Finite-state chain for a 1-D SDE killed outside an interval.

    The alive interval is split into ``n_states`` equal cells; one step
    from cell center ``x_i`` is the exact Euler kernel
    ``Normal(x_i + drift(x_i) dt, sigma^2 dt)`` integrated over target
    cells.  Mass landing outside the interval is killed.  The reference
    weights mu are the stationary law of the companion unkilled chain in
    which outside mass is folded back by reflection at the interval ends.
    """
    lo, hi = interval
    if not hi > lo:
        raise ValidationError("interval must have positive length")
    if sigma <= 0:
        raise ValidationError("sigma must be positive for the Gaussian bridge")
    if dt <= 0:
        raise ValidationError("dt must be positive")
    span = hi - lo
    step_sd = sigma * np.sqrt(dt)
    if step_sd > span:
        raise StepTooLargeError(
            f"one-step noise sd {step_sd:g} exceeds the interval span {span:g}"
        )
    edges = np.linspace(lo, hi, n_states + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    means = centers + np.asarray(drift(centers), dtype=float) * dt

    from scipy.special import ndtr

    z = (edges[None, :] - means[:, None]) / step_sd
    cdf = ndtr(z)
    q = np.diff(cdf, axis=1)

    # unkilled companion: reflect outside mass back across the edges;
    # reflected cell [a, b] about lo maps to [2 lo - b, 2 lo - a]
    lo_hi = (2 * lo - edges[:-1][None, :] - means[:, None]) / step_sd
    lo_lo = (2 * lo - edges[1:][None, :] - means[:, None]) / step_sd
    hi_hi = (2 * hi - edges[:-1][None, :] - means[:, None]) / step_sd
    hi_lo = (2 * hi - edges[1:][None, :] - means[:, None]) / step_sd
    q_reflect = q + (ndtr(lo_hi) - ndtr(lo_lo)) + (ndtr(hi_hi) - ndtr(hi_lo))
    p_unkilled = q_reflect / q_reflect.sum(axis=1, keepdims=True)
    mu = stationary_distribution(p_unkilled)

    return SubMarkovMatrix(q=q, dt_per_step=dt, mu=mu)
