"""Indistinguishable-particle monitoring: mixing reductions and the
stochastic density-matrix trajectory.

M identical particles scatter independently off meter quanta, so the merged
event stream is Poisson with intensity M nu, but the observer cannot tell
which particle scattered.  Conditioning on an outcome therefore averages the
single-particle reduction over the particle label,

    rho -> (1/M) sum_k G(k, lambda) rho G(k, lambda)^dag,

which maps pure states to mixtures and generically produces entropy even
though each hidden-label operation is pure.  A brute-force oracle enumerates
all label assignments for a short event list and must agree with the
iterated mixing reduction; that identity is the module's correctness anchor.

The engine works in the full tensor space.  Label averaging commutes with
slot permutations, so a permutation-symmetric initial density stays
symmetric; no per-step projection is applied and any drift of the symmetry
defect is a bug signal, which the tests watch for.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, NumericError, ValidationError
from .linalg import (
    DensityMatrix,
    HermitianOperator,
    StateVector,
    embed_at_slot,
    embed_pair,
    hermitian_eig,
    permutation_matrix,
    permute_slots_matrix,
    von_neumann_entropy,
)
from .meter import MeterModel
from .jumps import sample_poisson_times, _sample_index
from .rng import stream

MAX_BRUTE_FORCE_EVENTS = 6
SECTORS = ("full", "symmetric")


def nearest_neighbor_coupling(d: int, strength: float) -> np.ndarray:
    """Diagonal pair potential coupling adjacent sites: strength on |i, j>
    with |i - j| = 1, zero elsewhere."""
    W = np.zeros((d * d, d * d), dtype=complex)
    for i in range(d):
        for j in range(d):
            if abs(i - j) == 1:
                W[i * d + j, i * d + j] = strength
    return W


def symmetric_projector(d: int, M: int) -> np.ndarray:
    """Projector onto the permutation-symmetric subspace of (C^d)^{x M}."""
    D = d ** M
    P = np.zeros((D, D), dtype=complex)
    perms = list(itertools.permutations(range(M)))
    for perm in perms:
        P += permutation_matrix(perm, d, M)
    return P / len(perms)


def permutation_defect(rho, d: int, M: int) -> float:
    """Max over slot transpositions of the entrywise deviation of the
    conjugated operator from the original."""
    arr = rho.entries if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    worst = 0.0
    for k in range(M):
        for l in range(k + 1, M):
            perm = list(range(M))
            perm[k], perm[l] = perm[l], perm[k]
            swapped = permute_slots_matrix(arr, tuple(perm), d, M)
            worst = max(worst, float(np.max(np.abs(swapped - arr))))
    return worst


@dataclass(frozen=True)
class ManyBodyConfig:
    """Configuration of an M-particle monitored system.

    The single-particle meter supplies kappa, R and the pointer packet; nu is
    the per-particle scattering intensity, so the merged observed stream has
    intensity M nu.  W, if given, is a pair potential on d^2 applied to every
    ordered pair of slots.
    """

    M: int
    d: int
    H_single: HermitianOperator
    meter: MeterModel
    nu: float
    W: np.ndarray | None = None
    hbar: float = 1.0
    seed: int = 0
    sector: str = "full"

    def __post_init__(self):
        if self.M < 1:
            raise ValidationError(f"M must be >= 1, got {self.M}")
        if self.M > 4:
            raise CapacityError(f"at most 4 particles supported, got M={self.M}")
        if self.nu < 0:
            raise ValidationError(f"nu >= 0 required, got {self.nu}")
        if self.hbar <= 0:
            raise ValidationError(f"hbar must be positive, got {self.hbar}")
        if self.sector not in SECTORS:
            raise ValidationError(f"sector must be one of {SECTORS}, got {self.sector!r}")
        if self.H_single.dim != self.d or self.meter.dim != self.d:
            raise ValidationError(
                "H_single and meter must act on dimension d="
                f"{self.d}, got {self.H_single.dim} and {self.meter.dim}"
            )
        h = np.zeros((self.dim, self.dim), dtype=complex)
        for k in range(1, self.M + 1):
            h += embed_at_slot(self.H_single.entries, k, self.M)
        if self.W is not None:
            for k in range(1, self.M + 1):
                for l in range(k + 1, self.M + 1):
                    h += embed_pair(self.W, k, l, self.M, self.d)
        object.__setattr__(self, "_h_total", h)
        object.__setattr__(self, "_heig", hermitian_eig(h))
        # Squared single-particle reduction moduli on the support grid, used
        # for the label-averaged outcome law Tr{E(lambda) rho} mu0(dlambda).
        g2 = np.abs(self.meter.reduction_family) ** 2
        object.__setattr__(self, "_g2_family", g2)

    @property
    def dim(self) -> int:
        return self.d ** self.M

    @property
    def total_intensity(self) -> float:
        return self.M * self.nu

    @property
    def hamiltonian(self) -> np.ndarray:
        return self._h_total

    def free_step(self, rho: np.ndarray, dt: float) -> np.ndarray:
        """Exact unitary conjugation over a gap of length dt."""
        w, V = self._heig
        ph = np.exp(-1j * w * (dt / self.hbar))
        return (V * ph) @ (V.conj().T @ rho @ V) @ (V.conj().T * ph.conj()[:, None])

    def embedded_reduction(self, idx: int, k: int) -> np.ndarray:
        """G(k, lambda_idx): the support-grid reduction lifted to slot k."""
        V = self.meter.eigenvectors
        g = (V * self.meter.reduction_family[idx]) @ V.conj().T
        return embed_at_slot(g, k, self.M)

    def _slot_populations(self, rho: np.ndarray) -> np.ndarray:
        """R-eigenbasis populations of each particle's reduced state, (M, d)."""
        d, M = self.d, self.M
        V = self.meter.eigenvectors
        tens = rho.reshape((d,) * (2 * M))
        pops = np.empty((M, d))
        for k in range(M):
            axes_out = [k] + [j for j in range(M) if j != k]
            axes_in = [M + k] + [M + j for j in range(M) if j != k]
            r = np.transpose(tens, axes=axes_out + axes_in).reshape(d, d ** (M - 1), d, d ** (M - 1))
            red = np.einsum("aibi->ab", r)
            pops[k] = np.einsum("xa,ab,bx->x", V.conj().T, red, V).real
        return pops

    def outcome_weights(self, rho: np.ndarray) -> np.ndarray:
        """Unnormalized law Tr{E(lambda_i) rho} |f0|^2 dlambda over the support
        grid, evaluated through single-particle reduced densities."""
        pops = self._slot_populations(rho)
        mean_pop = np.mean(pops, axis=0)
        return (self._g2_family @ mean_pop) * self.meter.support_mu0


@dataclass
class DensityTrajectory:
    """One realized density-matrix trajectory.

    rho is the final a-posteriori density: trace one in normalized mode, the
    mean-normalized linear solution in linear mode, with log_weight holding
    the log trace of the linear solution.  Per-sample series carry the
    reported trace, entropy, minimum eigenvalue and requested normalized
    expectations.
    """

    events: tuple[tuple[float, float], ...]
    t_final: float
    rho: DensityMatrix
    log_weight: float
    sample_times: np.ndarray | None = None
    trace_series: np.ndarray | None = None
    entropy_series: np.ndarray | None = None
    min_eig_series: np.ndarray | None = None
    observable_series: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.events)


def mixing_reduction(cfg: ManyBodyConfig, rho, lam: float) -> DensityMatrix:
    """Label-averaged single-event reduction
    (1/M) sum_k G(k, lambda) rho G(k, lambda)^dag, not renormalized."""
    arr = rho.entries if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    g = cfg.meter.reduction(lam)
    out = np.zeros_like(arr)
    for k in range(1, cfg.M + 1):
        gk = embed_at_slot(g, k, cfg.M)
        out += gk @ arr @ gk.conj().T
    out /= cfg.M
    return DensityMatrix((out + out.conj().T) / 2.0)


def mixing_povm_element(cfg: ManyBodyConfig, lam: float) -> np.ndarray:
    """E(lambda) = (1/M) sum_k G(k, lambda)^dag G(k, lambda); its trace against
    rho is the unnormalized outcome density at lambda."""
    g = cfg.meter.reduction(lam)
    gg = g.conj().T @ g
    out = np.zeros((cfg.dim, cfg.dim), dtype=complex)
    for k in range(1, cfg.M + 1):
        out += embed_at_slot(gg, k, cfg.M)
    return out / cfg.M


def mixing_brute_force_oracle(cfg: ManyBodyConfig, rho, lams) -> DensityMatrix:
    """Average over all M^n hidden label assignments of the chronological
    reduction product.  Must equal the n-fold iterated mixing reduction;
    kept deliberately independent of it as the correctness oracle."""
    lams = [float(x) for x in lams]
    n = len(lams)
    if n > MAX_BRUTE_FORCE_EVENTS:
        raise CapacityError(
            f"brute-force oracle supports at most {MAX_BRUTE_FORCE_EVENTS} events, got {n}"
        )
    arr = rho.entries if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    if n == 0:
        return DensityMatrix(arr)
    gs = [cfg.meter.reduction(lam) for lam in lams]
    embedded = [
        [embed_at_slot(g, k, cfg.M) for k in range(1, cfg.M + 1)] for g in gs
    ]
    out = np.zeros_like(arr)
    for labels in itertools.product(range(cfg.M), repeat=n):
        op = np.eye(cfg.dim, dtype=complex)
        for j, k in enumerate(labels):
            op = embedded[j][k] @ op
        out += op @ arr @ op.conj().T
    out /= cfg.M ** n
    return DensityMatrix((out + out.conj().T) / 2.0)


def evolve_density(
    cfg: ManyBodyConfig,
    rho0: DensityMatrix,
    T: float,
    mode: str = "normalized",
    index: int = 0,
    sample_times=None,
    observables: dict[str, np.ndarray] | None = None,
) -> DensityTrajectory:
    """Propagate one a-posteriori density trajectory exactly.

    Event times follow Poisson(M nu).  In normalized mode outcomes are drawn
    from Tr{E(lambda) rho} |f0|^2 dlambda and the trace is renormalized after
    each event; in linear mode outcomes follow the bare pointer density and
    the log trace is accumulated, making the reported trace a mean-one
    martingale.
    """
    if mode not in ("normalized", "linear"):
        raise ValidationError(f"mode must be 'normalized' or 'linear', got {mode!r}")
    if abs(rho0.trace() - 1.0) > 1e-8:
        raise ValidationError(f"initial density must have unit trace, got {rho0.trace()!r}")
    if rho0.dim != cfg.dim:
        raise ValidationError(f"initial density dimension {rho0.dim} != d^M = {cfg.dim}")
    if not T > 0:
        raise ValidationError(f"T must be positive, got {T}")
    linear = mode == "linear"
    rng = stream(cfg.seed, index)
    times = sample_poisson_times(cfg.total_intensity, T, rng)

    rho = rho0.entries.astype(complex).copy()
    if cfg.sector == "symmetric":
        P = symmetric_projector(cfg.d, cfg.M)
        rho = P @ rho @ P
        tr = float(np.trace(rho).real)
        if tr < 1e-12:
            raise NumericError("initial density has no symmetric component")
        rho /= tr

    samples = None if sample_times is None else np.asarray(sample_times, dtype=float)
    if samples is not None and samples.size and (samples[0] < 0 or samples[-1] > T):
        raise ValidationError("sample times must lie in [0, T]")
    obs = observables or {}
    nrec = 0 if samples is None else samples.size
    trace_series = np.empty(nrec) if samples is not None else None
    entropy_series = np.empty(nrec) if samples is not None else None
    mineig_series = np.empty(nrec) if samples is not None else None
    obs_series = {name: np.empty(nrec) for name in obs} if samples is not None else {}

    log_w = 0.0
    events: list[tuple[float, float]] = []
    t = 0.0
    i_ev = 0
    i_s = 0

    def record(kk: int):
        herm = (rho + rho.conj().T) / 2.0
        eigs = np.linalg.eigvalsh(herm)
        trace_series[kk] = math.exp(log_w) if linear else 1.0
        mineig_series[kk] = float(eigs[0])
        p = np.clip(eigs, 0.0, None)
        tot = float(np.sum(p))
        p = p[p > 0] / tot
        entropy_series[kk] = float(-np.sum(p * np.log(p)))
        for name, X in obs.items():
            obs_series[name][kk] = float(np.trace(X @ herm).real)

    while True:
        t_ev = times[i_ev] if i_ev < len(times) else math.inf
        t_s = samples[i_s] if samples is not None and i_s < samples.size else math.inf
        t_next = min(t_ev, t_s, T)
        if t_next > t:
            rho = cfg.free_step(rho, t_next - t)
            t = t_next
        if t_s <= min(t_ev, T):
            record(i_s)
            i_s += 1
            continue
        if t_ev < T:
            if linear:
                idx = int(np.searchsorted(cfg.meter.mu0_cdf, rng.random(), side="right"))
                idx = min(idx, cfg.meter.mu0_cdf.size - 1)
            else:
                idx = _sample_index(cfg.outcome_weights(rho), rng)
            out = np.zeros_like(rho)
            for k in range(1, cfg.M + 1):
                gk = cfg.embedded_reduction(idx, k)
                out += gk @ rho @ gk.conj().T
            rho = out / cfg.M
            rho = (rho + rho.conj().T) / 2.0
            tr = float(np.trace(rho).real)
            if tr < 1e-300:
                raise NumericError("density trace collapsed at a mixing event")
            rho /= tr
            log_w += math.log(tr)
            events.append((float(t_ev), float(cfg.meter.support_grid[idx])))
            i_ev += 1
            continue
        break

    final = rho * math.exp(log_w) if linear else rho
    final = (final + final.conj().T) / 2.0
    return DensityTrajectory(
        events=tuple(events),
        t_final=float(T),
        rho=DensityMatrix(final),
        log_weight=log_w if linear else 0.0,
        sample_times=samples,
        trace_series=trace_series,
        entropy_series=entropy_series,
        min_eig_series=mineig_series,
        observable_series=obs_series,
    )


def entropy_after_first_event(cfg: ManyBodyConfig, psi: StateVector, lam: float) -> float:
    """Entropy produced by one normalized mixing event on a pure state."""
    rho = DensityMatrix(np.outer(psi.normalized().amps, psi.normalized().amps.conj()))
    reduced = mixing_reduction(cfg, rho, lam)
    return von_neumann_entropy(reduced.entries)
