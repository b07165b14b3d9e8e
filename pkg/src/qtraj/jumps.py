"""Poisson-driven quantum-jump trajectories for a single monitored particle.

Between scattering events the state evolves under the exact unitary
propagator of H; at each event one reduction operator G(lambda) acts once,
which realizes the counting rule (dn)^2 = dn without any time-discretization
error.  Two modes are supported:

* normalized: event times follow a homogeneous Poisson process with the
  configured intensity (valid because the reduction family resolves the
  identity against the pointer density, which the meter enforces at
  construction) and outcomes are drawn from the a-posteriori law
  w(lambda) ~ ||G(lambda) chi||^2 |f0(lambda)|^2 dlambda; the state is
  renormalized after every jump.
* linear: same event-time law, outcomes drawn from the bare pointer density,
  state left unnormalized (tracked as a normalized direction plus a log
  squared-norm weight).  The squared norm is then a mean-one martingale,
  which the test suite checks by Monte Carlo.

Trajectories are pure functions of (config, trajectory index): the random
stream is derived deterministically from the seed and the index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ValidationError
from .linalg import HermitianOperator, StateVector, hermitian_eig
from .meter import MeterModel, STATE_NORM_TOL
from .rng import stream

MODES = ("normalized", "linear")


@dataclass(frozen=True)
class JumpConfig:
    """Configuration of a single-particle jump unravelling."""

    H: HermitianOperator
    meter: MeterModel
    nu: float
    hbar: float = 1.0
    seed: int = 0
    mode: str = "normalized"

    def __post_init__(self):
        if self.nu < 0:
            raise ValidationError(f"nu >= 0 required, got {self.nu}")
        if self.hbar <= 0:
            raise ValidationError(f"hbar must be positive, got {self.hbar}")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.H.dim != self.meter.dim:
            raise ValidationError(
                f"H dimension {self.H.dim} does not match meter dimension {self.meter.dim}"
            )
        object.__setattr__(self, "_heig", hermitian_eig(self.H))

    def free_step(self, amps: np.ndarray, dt: float) -> np.ndarray:
        """Exact unitary evolution of amplitudes over a gap of length dt."""
        w, V = self._heig
        return V @ (np.exp(-1j * w * (dt / self.hbar)) * (V.conj().T @ amps))


@dataclass
class Trajectory:
    """One realized jump trajectory.

    state is the final state at t_final: normalized in normalized mode, the
    unnormalized linear solution in linear mode.  log_weight is the log of
    the squared norm of the linear solution (zero in normalized mode).
    Optional per-sample series hold the reported squared norm and normalized
    expectation values at the requested sample times.
    """

    events: tuple[tuple[float, float], ...]
    t_final: float
    state: StateVector
    log_weight: float
    sample_times: np.ndarray | None = None
    norm2_series: np.ndarray | None = None
    observable_series: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.events)


def sample_poisson_times(nu: float, T: float, rng: np.random.Generator) -> np.ndarray:
    """Event times of a homogeneous Poisson process on [0, T)."""
    if nu < 0:
        raise ValidationError(f"nu >= 0 required, got {nu}")
    if not T > 0:
        raise ValidationError(f"T must be positive, got {T}")
    if nu == 0:
        return np.empty(0)
    times = []
    t = rng.exponential(1.0 / nu)
    while t < T:
        times.append(t)
        t += rng.exponential(1.0 / nu)
    return np.array(times)


def _sample_index(weights: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from unnormalized categorical weights."""
    total = float(np.sum(weights))
    if total < 1e-300:
        raise NumericError("all outcome weights vanish; state is degenerate")
    cdf = np.cumsum(weights)
    idx = int(np.searchsorted(cdf, rng.random() * total, side="right"))
    return min(idx, len(weights) - 1)


def sample_outcome(meter: MeterModel, chi, rng: np.random.Generator) -> float:
    """Draw one pointer reading from the a-posteriori law of a normalized chi."""
    amps = chi.amps if isinstance(chi, StateVector) else np.asarray(chi, dtype=complex)
    ct = meter.eigenvectors.conj().T @ amps
    weights = meter.outcome_weight_matrix @ (np.abs(ct) ** 2)
    idx = _sample_index(weights, rng)
    return float(meter.support_grid[idx])


def _apply_reduction(meter: MeterModel, amps: np.ndarray, idx: int) -> tuple[np.ndarray, float]:
    """Apply G at support index idx; return (normalized amplitudes, norm^2)."""
    V = meter.eigenvectors
    ct = meter.reduction_family[idx] * (V.conj().T @ amps)
    out = V @ ct
    n2 = float(np.vdot(out, out).real)
    if n2 < 1e-300:
        raise NumericError("reduction annihilated the state (zero likelihood)")
    return out / math.sqrt(n2), n2


def evolve_jump(
    cfg: JumpConfig,
    eta: StateVector,
    T: float,
    index: int = 0,
    sample_times=None,
    observables: dict[str, np.ndarray] | None = None,
) -> Trajectory:
    """Propagate one trajectory exactly from a normalized initial state.

    Event times are Poisson(nu); between events the evolution is the exact
    unitary, at events exactly one reduction is applied.  With sample_times
    given, the reported squared norm (1 in normalized mode, exp(log_weight)
    in linear mode) and normalized expectations of the observables are
    recorded at those times.
    """
    if abs(eta.norm2() - 1.0) > STATE_NORM_TOL:
        raise ValidationError(f"initial state must be normalized, norm^2={eta.norm2()!r}")
    if not T > 0:
        raise ValidationError(f"T must be positive, got {T}")
    rng = stream(cfg.seed, index)
    times = sample_poisson_times(cfg.nu, T, rng)
    meter = cfg.meter
    linear = cfg.mode == "linear"

    samples = None if sample_times is None else np.asarray(sample_times, dtype=float)
    if samples is not None and samples.size and (samples[0] < 0 or samples[-1] > T):
        raise ValidationError("sample times must lie in [0, T]")
    obs = observables or {}
    norm2_series = None if samples is None else np.empty(samples.size)
    obs_series = {name: np.empty(samples.size) for name in obs} if samples is not None else {}

    amps = eta.normalized().amps.copy()
    log_w = 0.0
    events: list[tuple[float, float]] = []
    t = 0.0
    i_ev = 0
    i_s = 0

    def record(k: int):
        norm2_series[k] = math.exp(log_w) if linear else 1.0
        for name, X in obs.items():
            obs_series[name][k] = float(np.vdot(amps, X @ amps).real)

    while True:
        t_ev = times[i_ev] if i_ev < len(times) else math.inf
        t_s = samples[i_s] if samples is not None and i_s < samples.size else math.inf
        t_next = min(t_ev, t_s, T)
        if t_next > t:
            amps = cfg.free_step(amps, t_next - t)
            t = t_next
        if t_s <= min(t_ev, T):
            record(i_s)
            i_s += 1
            continue
        if t_ev < T:
            ct = meter.eigenvectors.conj().T @ amps
            if linear:
                idx = int(np.searchsorted(meter.mu0_cdf, rng.random(), side="right"))
                idx = min(idx, meter.mu0_cdf.size - 1)
            else:
                weights = meter.outcome_weight_matrix @ (np.abs(ct) ** 2)
                idx = _sample_index(weights, rng)
            amps, n2 = _apply_reduction(meter, amps, idx)
            if linear:
                log_w += math.log(n2)
            events.append((float(t_ev), float(meter.support_grid[idx])))
            i_ev += 1
            continue
        break

    final = amps * math.exp(0.5 * log_w) if linear else amps
    return Trajectory(
        events=tuple(events),
        t_final=float(T),
        state=StateVector(final),
        log_weight=log_w if linear else 0.0,
        sample_times=samples,
        norm2_series=norm2_series,
        observable_series=obs_series,
    )


def trajectory_product_check(
    cfg: JumpConfig,
    events,
    eta: StateVector,
    T: float,
) -> tuple[StateVector, StateVector]:
    """Evolve a fixed event list two independent ways.

    The stepwise route interleaves exact unitary gaps with reductions; the
    product route assembles the chronological operator product with every
    reduction rotated into the Heisenberg picture at its event time, then
    applies one final unitary.  The two must agree to rounding.
    """
    events = [(float(t), float(lam)) for t, lam in events]
    if any(not 0 <= t < T for t, _ in events):
        raise ValidationError("event times must lie in [0, T)")
    if sorted(t for t, _ in events) != [t for t, _ in events]:
        raise ValidationError("event times must be chronologically ordered")
    meter = cfg.meter

    # Route 1: stepwise.
    amps = eta.amps.copy()
    t = 0.0
    for t_ev, lam in events:
        if t_ev > t:
            amps = cfg.free_step(amps, t_ev - t)
            t = t_ev
        amps = meter.reduction(lam) @ amps
    if T > t:
        amps = cfg.free_step(amps, T - t)
    step_state = StateVector(amps)

    # Route 2: chronological product in the Heisenberg picture.
    amps2 = eta.amps.copy()
    for t_ev, lam in events:
        amps2 = cfg.free_step(amps2, t_ev)
        amps2 = meter.reduction(lam) @ amps2
        amps2 = cfg.free_step(amps2, -t_ev)
    amps2 = cfg.free_step(amps2, T)
    return step_state, StateVector(amps2)
