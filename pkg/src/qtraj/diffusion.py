"""Diffusive (central-limit) regime of the monitored dynamics.

When the scattering rate grows while the per-event coupling shrinks like
kappa = gamma / sqrt(nu) (with a zero-mean-momentum pointer), the counting
noise converges to Wiener noise whose statistics are set by the logarithmic
derivative of the pointer packet, the osmotic velocity -f0'/f0.  This module
realizes the limiting equations with classical Gaussian processes carrying
the limit covariances:

* linear state equation   dchi + K chi dt = gamma R chi dv,
  K = (i/hbar) H + (1/2) (gamma/hbar)^2 R sigma^2 R, with complex noise
  E[dv dv] = c1 dt, E[dv* dv] = c2 dt; the drift exactly balances the noise
  quadratic variation, making ||chi||^2 a mean-one martingale.  The
  Hamiltonian factor of each Euler-Maruyama step is applied as the exact
  unitary, so the gamma = 0 limit conserves the norm to rounding and the
  O(dt) weak bias comes only from the measurement terms.
* coupled (dilation) equation  dpsi + K psi dt = (i/hbar) gamma R psi du
  with a real Wiener du of variance sigma^2 dt.  The noise enters as an
  R-generated phase, so the integrator steps with the exact unitary factor
  exp((i/hbar) gamma R du); R-populations are then conserved pathwise when
  [R, H] = 0, as the continuum equation demands.
* density equation for M particles, driven by one complex Wiener process
  with the covariance of sqrt(M) v, trace-normalized in the mean.

The state equation uses Euler-Maruyama stepping.  The density equation
factors the noise exactly as the completely positive map
exp(gamma dw Rbar) . exp(gamma dw* Rbar), with the noise mean moved out of
the Euler drift; this has the same first-order weak accuracy but keeps the
positivity defect at the O(dt^2) level (a plain Euler step dips to
O(sqrt(dt)^3) negativity near the spectrum edge, which violates the
positivity contract at practical step sizes).  All noise draws are pure
functions of (seed, path index, step index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import expm

from .errors import NumericError, ValidationError
from .linalg import HermitianOperator, StateVector, embed_at_slot, hermitian_eig
from .meter import PointerState, POINTER_ZERO, STATE_NORM_TOL
from .rng import stream

BLOWUP_LIMIT = 1e6
POSITIVITY_TOL = 1e-6
_STEP_BLOCK = 1000


class NoiseCovariance(NamedTuple):
    """Per-unit-time noise statistics derived from the pointer packet."""

    c1: complex  # E[dv dv] / dt
    c2: float    # E[dv* dv] / dt, equals sigma^2 / hbar^2
    q0: float    # mean pointer momentum (f0, Q f0), Q = i hbar d/dlambda
    sigma2: float


def noise_covariance(pointer: PointerState, hbar: float = 1.0) -> NoiseCovariance:
    """Quadrature evaluation of the osmotic-velocity covariances.

    Uses the closed-form derivative for tagged Gaussian packets and
    second-order finite differences for tabulated ones.  sigma^2 is defined
    as hbar^2 c2 so the martingale balance of the linear equation is exact
    by construction.
    """
    if hbar <= 0:
        raise ValidationError(f"hbar must be positive, got {hbar}")
    mask = pointer.support
    if not np.any(mask):
        raise ValidationError("pointer packet has empty support")
    lo, hi = np.flatnonzero(mask)[[0, -1]]
    if not np.all(mask[lo : hi + 1]):
        raise NumericError(
            "pointer packet vanishes inside its bulk support; "
            "osmotic velocity is degenerate there"
        )
    f0 = pointer.values[lo : hi + 1]
    df0 = pointer.derivative_values()[lo : hi + 1]
    dlam = pointer.weights[lo : hi + 1]
    lp = -df0 / f0
    dens = np.abs(f0) ** 2 * dlam
    c1 = complex(np.sum(lp * lp * dens))
    c2 = float(np.sum(np.abs(lp) ** 2 * dens).real)
    q0 = float((1j * hbar * np.sum(f0.conj() * df0 * dlam)).real)
    return NoiseCovariance(c1=c1, c2=c2, q0=q0, sigma2=hbar * hbar * c2)


@dataclass(frozen=True)
class WienerPath:
    """Pre-drawn complex Wiener increments with their covariance table."""

    increments: np.ndarray
    dt: float
    c1: complex
    c2: float


def _noise_chol(dt: float, c1: complex, c2: float) -> tuple[float, float, float]:
    """Cholesky factors mapping two standard normals to (Re dv, Im dv)."""
    if c2 < abs(c1) - 1e-12:
        raise ValidationError(f"covariance table needs c2 >= |c1|, got c1={c1}, c2={c2}")
    vx = max((c2 + c1.real) / 2.0 * dt, 0.0)
    vy = max((c2 - c1.real) / 2.0 * dt, 0.0)
    cxy = c1.imag / 2.0 * dt
    a11 = math.sqrt(vx)
    a21 = cxy / a11 if a11 > 0 else 0.0
    a22 = math.sqrt(max(vy - a21 * a21, 0.0))
    return a11, a21, a22


def sample_wiener_increments(
    rng: np.random.Generator, n_steps: int, dt: float, c1: complex, c2: float
) -> WienerPath:
    """Draw n_steps complex increments with E[dv dv] = c1 dt, E[dv* dv] = c2 dt.

    Each step consumes exactly two standard normals, so the draw sequence is
    identical whether increments are generated one step or one block at a time.
    """
    a11, a21, a22 = _noise_chol(dt, c1, c2)
    z = rng.standard_normal((n_steps, 2))
    dv = a11 * z[:, 0] + 1j * (a21 * z[:, 0] + a22 * z[:, 1])
    return WienerPath(increments=dv, dt=float(dt), c1=complex(c1), c2=float(c2))


@dataclass(frozen=True)
class DiffusionConfig:
    """Configuration of the diffusive-regime integrators.

    H and R are single-particle operators; for the M-particle density
    equation the Hamiltonian is lifted as a sum over slots.  The pointer
    supplies the noise covariances, the mean momentum q0 and the dispersion
    sigma^2 through :func:`noise_covariance`.
    """

    H: HermitianOperator
    R: HermitianOperator
    gamma: float
    pointer: PointerState
    dt: float
    hbar: float = 1.0
    seed: int = 0
    M: int = 1

    def __post_init__(self):
        if self.dt <= 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if self.hbar <= 0:
            raise ValidationError(f"hbar must be positive, got {self.hbar}")
        if self.M < 1 or self.M > 4:
            raise ValidationError(f"M must lie in 1..4, got {self.M}")
        if self.H.dim != self.R.dim:
            raise ValidationError("H and R must share a dimension")
        cov = noise_covariance(self.pointer, self.hbar)
        if cov.sigma2 <= 0:
            raise ValidationError("pointer packet has zero dispersion sigma^2")
        object.__setattr__(self, "noise", cov)
        g_h = self.gamma / self.hbar
        damping = 0.5 * g_h * g_h * cov.sigma2 * (self.R.entries @ self.R.entries)
        K = (1j / self.hbar) * self.H.entries + damping
        object.__setattr__(self, "_K", K)
        object.__setattr__(self, "_damping", damping)

    @property
    def dim(self) -> int:
        return self.H.dim

    def drift_matrix(self) -> np.ndarray:
        """K = (i/hbar) H + (1/2)(gamma/hbar)^2 R sigma^2 R."""
        return self._K


@dataclass
class StatePath:
    times: np.ndarray
    states: np.ndarray  # (n_times, d)
    norm2: np.ndarray


@dataclass
class DensityPath:
    times: np.ndarray
    rhos: np.ndarray  # (n_times, D, D)
    trace: np.ndarray
    entropy: np.ndarray
    min_eig: np.ndarray


def _step_count(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ValidationError(f"T={T} must be a positive multiple of dt={dt}")
    return n


def _record_steps(times, n_steps: int, dt: float) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    steps = np.round(times / dt).astype(int)
    if np.any(np.abs(steps * dt - times) > 1e-9) or np.any(steps < 0) or np.any(steps > n_steps):
        raise ValidationError("sample times must align with the integration step grid")
    return steps


def evolve_diffusive_sse(
    cfg: DiffusionConfig, eta: StateVector, T: float, index: int = 0, record_times=None
) -> StatePath:
    """Euler-Maruyama path of the linear diffusive state equation.

    Per step the measurement terms are applied in Euler form and the
    Hamiltonian factor as the exact unitary exp(-i H dt / hbar)."""
    if cfg.M != 1:
        raise ValidationError("the state equations are single-particle; use M=1")
    if abs(eta.norm2() - 1.0) > STATE_NORM_TOL:
        raise ValidationError("initial state must be normalized")
    n_steps = _step_count(T, cfg.dt)
    rec = _record_steps(record_times if record_times is not None else [T], n_steps, cfg.dt)
    rng = stream(cfg.seed, index)
    dv = sample_wiener_increments(rng, n_steps, cfg.dt, cfg.noise.c1, cfg.noise.c2).increments
    wH, VH = hermitian_eig(cfg.H)
    expH = (VH * np.exp(-1j * wH * (cfg.dt / cfg.hbar))) @ VH.conj().T
    D = cfg._damping
    R = cfg.R.entries
    chi = eta.amps.astype(complex).copy()
    out = np.empty((rec.size, cfg.dim), dtype=complex)
    rec_map = {}
    for j, s in enumerate(rec):
        rec_map.setdefault(int(s), []).append(j)
    for j in rec_map.get(0, []):
        out[j] = chi
    for s in range(n_steps):
        chi = expH @ (chi - cfg.dt * (D @ chi) + cfg.gamma * dv[s] * (R @ chi))
        if s + 1 in rec_map:
            n2 = float(np.vdot(chi, chi).real)
            if n2 > BLOWUP_LIMIT:
                raise NumericError(
                    f"squared norm {n2:.3e} exceeded {BLOWUP_LIMIT:.0e}; reduce dt"
                )
            for j in rec_map[s + 1]:
                out[j] = chi
    norm2 = np.einsum("ni,ni->n", out.conj(), out).real
    return StatePath(times=rec * cfg.dt, states=out, norm2=norm2)


def evolve_coupled_sse(
    cfg: DiffusionConfig, eta: StateVector, T: float, index: int = 0, record_times=None
) -> StatePath:
    """Unitary-dilation path: per step the exact phase factor
    exp((i/hbar) gamma R du) followed by the free factor exp(-i H dt / hbar).

    Pathwise norm-preserving; R-populations are exactly conserved whenever
    [R, H] = 0 because the noise acts as an R-generated phase.
    """
    if cfg.M != 1:
        raise ValidationError("the state equations are single-particle; use M=1")
    if abs(eta.norm2() - 1.0) > STATE_NORM_TOL:
        raise ValidationError("initial state must be normalized")
    n_steps = _step_count(T, cfg.dt)
    rec = _record_steps(record_times if record_times is not None else [T], n_steps, cfg.dt)
    rng = stream(cfg.seed, index)
    du = math.sqrt(cfg.noise.sigma2 * cfg.dt) * rng.standard_normal(n_steps)
    wR, VR = hermitian_eig(cfg.R)
    wH, VH = hermitian_eig(cfg.H)
    free_ph = np.exp(-1j * wH * (cfg.dt / cfg.hbar))
    expH = (VH * free_ph) @ VH.conj().T
    chi = eta.amps.astype(complex).copy()
    out = np.empty((rec.size, cfg.dim), dtype=complex)
    rec_map = {}
    for j, s in enumerate(rec):
        rec_map.setdefault(int(s), []).append(j)
    for j in rec_map.get(0, []):
        out[j] = chi
    coef = 1j * cfg.gamma / cfg.hbar
    for s in range(n_steps):
        chi = VR @ (np.exp(coef * wR * du[s]) * (VR.conj().T @ chi))
        chi = expH @ chi
        for j in rec_map.get(s + 1, []):
            out[j] = chi
    norm2 = np.einsum("ni,ni->n", out.conj(), out).real
    return StatePath(times=rec * cfg.dt, states=out, norm2=norm2)


def _lifted_ops(cfg: DiffusionConfig) -> tuple[np.ndarray, list[np.ndarray], np.ndarray]:
    """(H_total, [R(k)], mean coupling operator) on the M-fold product space."""
    M = cfg.M
    H = sum(embed_at_slot(cfg.H.entries, k, M) for k in range(1, M + 1))
    Rks = [embed_at_slot(cfg.R.entries, k, M) for k in range(1, M + 1)]
    Rbar = sum(Rks) / M
    return H, Rks, Rbar


def density_drift_superop(cfg: DiffusionConfig) -> np.ndarray:
    """Row-major superoperator of the deterministic part of the density
    equation: -(K rho + rho K^dag) + (gamma/hbar)^2 sigma^2 sum_k R(k) rho R(k)."""
    H, Rks, _ = _lifted_ops(cfg)
    D = H.shape[0]
    eye = np.eye(D, dtype=complex)
    g_h = cfg.gamma / cfg.hbar
    K = (1j / cfg.hbar) * H + 0.5 * g_h * g_h * cfg.noise.sigma2 * sum(
        Rk @ Rk for Rk in Rks
    )
    L = -(np.kron(K, eye) + np.kron(eye, K.conj()))
    for Rk in Rks:
        L = L + g_h * g_h * cfg.noise.sigma2 * np.kron(Rk, Rk.T)
    return L


def _density_kernel(cfg: DiffusionConfig):
    """Stepping data in the eigenbasis of the mean coupling operator Rbar.

    In that basis every lifted R(k) is diagonal, so the exact noise factor
    exp(gamma dw Rbar) acts as an elementwise rank-one scaling of the
    density.  The deterministic part of a step is the constant superoperator

        P0 = kron(E0, conj(E0)) + dt * S,
        E0 = expm(-K' dt),  S[rho] = (gamma/hbar)^2 sigma^2
                                     sum_k (R_k - Rbar) rho (R_k - Rbar),

    with K' = K + (1/2) gamma^2 M c1 Rbar^2 absorbing the one-step mean of
    the noise factor.  Every factor of a step is a completely positive map,
    so positivity holds pathwise up to rounding, while the one-step mean
    still matches the density equation to first weak order.  Returns
    (VM, rbar, L_full, P0).
    """
    d, M = cfg.dim, cfg.M
    w, V = hermitian_eig(cfg.R)
    VM = V
    for _ in range(M - 1):
        VM = np.kron(VM, V)
    D = d ** M
    rk_vecs = []
    for k in range(1, M + 1):
        vec = np.ones(1)
        for j in range(1, M + 1):
            vec = np.kron(vec, w if j == k else np.ones(d))
        rk_vecs.append(vec)
    rbar = sum(rk_vecs) / M
    H_single_t = V.conj().T @ cfg.H.entries @ V
    Ht = sum(embed_at_slot(H_single_t, k, M) for k in range(1, M + 1))
    g_h = cfg.gamma / cfg.hbar
    Kt = (1j / cfg.hbar) * Ht + np.diag(
        0.5 * g_h * g_h * cfg.noise.sigma2 * sum(rk * rk for rk in rk_vecs)
    ).astype(complex)
    eye = np.eye(D, dtype=complex)
    diag_idx = np.arange(D * D)
    L = -(np.kron(Kt, eye) + np.kron(eye, Kt.conj()))
    sandwich = np.zeros(D * D)
    for rk in rk_vecs:
        sandwich += np.outer(rk, rk).ravel()
    L[diag_idx, diag_idx] += g_h * g_h * cfg.noise.sigma2 * sandwich

    Kp = Kt + np.diag(0.5 * cfg.gamma ** 2 * cfg.M * cfg.noise.c1 * rbar * rbar)
    E0 = expm(-Kp * cfg.dt)
    P0 = np.kron(E0, E0.conj())
    exchange = np.zeros(D * D)
    for rk in rk_vecs:
        dk = rk - rbar
        exchange += np.outer(dk, dk).ravel()
    P0[diag_idx, diag_idx] += cfg.dt * g_h * g_h * cfg.noise.sigma2 * exchange
    return VM, rbar, L, P0


def _density_spectra(rhos: np.ndarray, dt: float, rec: np.ndarray):
    """Trace, entropy and minimum eigenvalue of recorded densities, with the
    blow-up and positivity guards applied."""
    trace = np.einsum("...ii->...", rhos).real
    if np.any(np.abs(trace) > BLOWUP_LIMIT):
        raise NumericError(f"density trace exceeded {BLOWUP_LIMIT:.0e}; reduce dt")
    eigs = np.linalg.eigvalsh(rhos)
    min_eig = eigs[..., 0]
    abs_sum = np.sum(np.abs(eigs), axis=-1)
    if np.any(min_eig < -POSITIVITY_TOL * np.maximum(abs_sum, 1e-30)):
        raise NumericError(
            f"positivity defect beyond -{POSITIVITY_TOL:.0e} of the trace norm; reduce dt"
        )
    p = np.clip(eigs, 0.0, None)
    tot = np.sum(p, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(tot > 0, p / tot, 0.0)
        terms = np.where(frac > 0, frac * np.log(frac), 0.0)
    entropy = -np.sum(terms, axis=-1)
    return trace, entropy, min_eig


def evolve_diffusive_density(
    cfg: DiffusionConfig,
    rho0,
    T: float,
    index: int = 0,
    record_times=None,
    noise: bool = True,
) -> DensityPath:
    """One path of the M-particle diffusive density equation.

    Each step applies the completely positive deterministic factor from
    :func:`_density_kernel` followed by the exact completely positive noise
    map exp(gamma dw Rbar) . exp(gamma dw* Rbar); Hermiticity is restored by
    symmetrization.  With noise=False the path solves the averaged
    (Lindblad-form) equation by plain Euler stepping.
    """
    arr = rho0.entries if hasattr(rho0, "entries") else np.asarray(rho0, dtype=complex)
    D = cfg.dim ** cfg.M
    if arr.shape != (D, D):
        raise ValidationError(f"initial density must have shape {(D, D)}, got {arr.shape}")
    if abs(float(np.trace(arr).real) - 1.0) > 1e-8:
        raise ValidationError("initial density must have unit trace")
    n_steps = _step_count(T, cfg.dt)
    rec = _record_steps(record_times if record_times is not None else [T], n_steps, cfg.dt)
    rng = stream(cfg.seed, index)
    dw = sample_wiener_increments(
        rng, n_steps, cfg.dt, cfg.M * cfg.noise.c1, cfg.M * cfg.noise.c2
    ).increments
    VM, rbar, L, P0 = _density_kernel(cfg)
    perm_t = np.arange(D * D).reshape(D, D).T.ravel()
    rt = (VM.conj().T @ arr @ VM).astype(complex)
    v = rt.reshape(-1).copy()
    rec_map: dict[int, list[int]] = {}
    for j, s in enumerate(rec):
        rec_map.setdefault(int(s), []).append(j)
    rhos = np.empty((rec.size, D, D), dtype=complex)

    def store(slots):
        back = VM @ v.reshape(D, D) @ VM.conj().T
        for j in slots:
            rhos[j] = back

    if 0 in rec_map:
        store(rec_map[0])
    for s in range(n_steps):
        if noise:
            v = P0 @ v
            a = np.exp(cfg.gamma * dw[s] * rbar)
            v = (a[:, None] * v.reshape(D, D) * a.conj()[None, :]).reshape(-1)
        else:
            v = v + cfg.dt * (L @ v)
        v = 0.5 * (v + v.conj()[perm_t])
        if s + 1 in rec_map:
            store(rec_map[s + 1])
    trace, entropy, min_eig = _density_spectra(rhos, cfg.dt, rec)
    return DensityPath(times=rec * cfg.dt, rhos=rhos, trace=trace, entropy=entropy, min_eig=min_eig)


def mean_field_evolve(
    cfg: DiffusionConfig, eta: StateVector, T: float, record_times=None
) -> StatePath:
    """Deterministic macroscopic-limit evolution under H - gamma q0 R.

    For a real packet (q0 = 0) this is the free unitary evolution.
    """
    rec_times = np.asarray(record_times if record_times is not None else [T], dtype=float)
    Heff = cfg.H.entries - cfg.gamma * cfg.noise.q0 * cfg.R.entries
    w, V = hermitian_eig(Heff)
    et = V.conj().T @ eta.amps
    out = np.empty((rec_times.size, cfg.dim), dtype=complex)
    for j, t in enumerate(rec_times):
        out[j] = V @ (np.exp(-1j * w * (t / cfg.hbar)) * et)
    norm2 = np.einsum("ni,ni->n", out.conj(), out).real
    return StatePath(times=rec_times, states=out, norm2=norm2)


def _sse_batch(
    cfg: DiffusionConfig,
    eta: StateVector,
    T: float,
    indices,
    sample_times,
    observables: dict[str, np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized linear-equation paths for the given trajectory indices.

    Returns (weights, obs) with weights[i, s] = ||chi||^2 and obs[i, s, o]
    the normalized expectation of observable o, both at sample time s.
    Noise per path comes from that path's own stream, so results do not
    depend on how paths are grouped into batches.
    """
    n_steps = _step_count(T, cfg.dt)
    rec = _record_steps(sample_times, n_steps, cfg.dt)
    indices = list(indices)
    n = len(indices)
    a11, a21, a22 = _noise_chol(cfg.dt, cfg.noise.c1, cfg.noise.c2)
    gens = [stream(cfg.seed, i) for i in indices]
    wH, VH = hermitian_eig(cfg.H)
    expH = (VH * np.exp(-1j * wH * (cfg.dt / cfg.hbar))) @ VH.conj().T
    D = cfg._damping
    R = cfg.R.entries
    obs_mats = list(observables.values())
    chi = np.tile(eta.amps.astype(complex), (n, 1))
    weights = np.empty((n, rec.size))
    obs = np.empty((n, rec.size, len(obs_mats)))
    rec_map = {}
    for j, s in enumerate(rec):
        rec_map.setdefault(int(s), []).append(j)

    def record(slots):
        n2 = np.einsum("ni,ni->n", chi.conj(), chi).real
        if np.any(n2 > BLOWUP_LIMIT):
            raise NumericError(f"squared norm exceeded {BLOWUP_LIMIT:.0e}; reduce dt")
        for j in slots:
            weights[:, j] = n2
            for o, X in enumerate(obs_mats):
                val = np.einsum("ni,ij,nj->n", chi.conj(), X, chi).real
                obs[:, j, o] = val / n2
    if 0 in rec_map:
        record(rec_map[0])
    s = 0
    while s < n_steps:
        block = min(_STEP_BLOCK, n_steps - s)
        z = np.stack([g.standard_normal((block, 2)) for g in gens])
        dv = a11 * z[:, :, 0] + 1j * (a21 * z[:, :, 0] + a22 * z[:, :, 1])
        for b in range(block):
            chi = chi - cfg.dt * (chi @ D.T) + cfg.gamma * dv[:, b, None] * (chi @ R.T)
            chi = chi @ expH.T
            if s + b + 1 in rec_map:
                record(rec_map[s + b + 1])
        s += block
    return weights, obs


def _density_batch(
    cfg: DiffusionConfig,
    rho0,
    T: float,
    indices,
    sample_times,
    observables: dict[str, np.ndarray],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized density-equation paths; returns (traces, obs, entropy)
    with obs holding normalized expectations Tr(X rho) / Tr(rho)."""
    arr = rho0.entries if hasattr(rho0, "entries") else np.asarray(rho0, dtype=complex)
    D = cfg.dim ** cfg.M
    n_steps = _step_count(T, cfg.dt)
    rec = _record_steps(sample_times, n_steps, cfg.dt)
    indices = list(indices)
    n = len(indices)
    a11, a21, a22 = _noise_chol(cfg.dt, cfg.M * cfg.noise.c1, cfg.M * cfg.noise.c2)
    gens = [stream(cfg.seed, i) for i in indices]
    VM, rbar, _, P0 = _density_kernel(cfg)
    perm_t = np.arange(D * D).reshape(D, D).T.ravel()
    obs_mats = [VM.conj().T @ X @ VM for X in observables.values()]

    rt = (VM.conj().T @ arr @ VM).astype(complex)
    v = np.tile(rt.reshape(-1), (n, 1))
    traces = np.empty((n, rec.size))
    obs = np.empty((n, rec.size, len(obs_mats)))
    entropy = np.empty((n, rec.size))
    rec_map: dict[int, list[int]] = {}
    for j, s in enumerate(rec):
        rec_map.setdefault(int(s), []).append(j)

    def record(slots):
        rh = v.reshape(n, D, D)
        tr, ent, _ = _density_spectra(rh, cfg.dt, rec)
        for j in slots:
            traces[:, j] = tr
            entropy[:, j] = ent
            for o, X in enumerate(obs_mats):
                obs[:, j, o] = np.einsum("ij,nji->n", X, rh).real / tr

    if 0 in rec_map:
        record(rec_map[0])
    s = 0
    while s < n_steps:
        block = min(_STEP_BLOCK, n_steps - s)
        z = np.stack([g.standard_normal((block, 2)) for g in gens])
        dw = a11 * z[:, :, 0] + 1j * (a21 * z[:, :, 0] + a22 * z[:, :, 1])
        for b in range(block):
            v = v @ P0.T
            a = np.exp(cfg.gamma * dw[:, b, None] * rbar[None, :])
            v3 = v.reshape(n, D, D)
            v3 *= a[:, :, None] * a.conj()[:, None, :]
            v = v3.reshape(n, D * D)
            v = 0.5 * (v + v.conj()[:, perm_t])
            if s + b + 1 in rec_map:
                record(rec_map[s + b + 1])
        s += block
    return traces, obs, entropy
