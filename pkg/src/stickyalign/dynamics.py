"""Event-driven integration of the reduced first-order alignment system.

The state is the vector of cluster positions; the right-hand side is

    dx_i/dt = psi_i - sum_j m_j Phi(x_i - x_j)

with psi frozen at t = 0.  Only the primitive Phi ever gets evaluated, so
weakly singular kernels are as smooth to the integrator as bounded ones.

Collisions are events: an adjacent gap reaching the contact threshold stops
the step, the instant is localized by bisection on the cubic-Hermite dense
output of the accepted Dormand-Prince 5(4) step, and the touching clusters
merge inelastically.  The merge rule at one instant is the tangent-cone
projection of velocities: within each maximal run of contact pairs, closing
neighbours pool (mass-weighted) until the run's velocities are nondecreasing,
which is exactly blockwise pool-adjacent-violators and conserves momentum.

Zero-measure integrals for later verification (the per-cell convolution
integral of the projection formula, and the dissipation integral of the
squared velocity norm) are accumulated with a left-endpoint rule on the grid
of snapshot nodes and event times, giving clean first-order convergence as
``snapshot_dt`` shrinks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ensemble import Ensemble
from .exceptions import InvalidScenarioError, NumericalAbortError
from .kernels import Kernel

__all__ = [
    "Tolerances",
    "MergeEvent",
    "StepResult",
    "SimulationRecord",
    "drift",
    "step",
    "simulate",
]

# contact threshold and event-time localization scales
EPS_CONTACT = 1e-13
TAU_EVENT = 1e-12
_MAX_EVENTS = 20000

# Dormand-Prince 5(4) tableau
_C = (0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0)
_A = (
    (),
    (1.0 / 5.0,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0),
    (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0),
)
_B = _A[6] + (0.0,)
# b - b_hat: weights of the embedded error estimate
_E = (71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0,
      -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)


@dataclass(frozen=True)
class Tolerances:
    """Error-control knobs of the embedded Runge-Kutta pair."""

    atol: float = 1e-10
    rtol: float = 1e-9


@dataclass(frozen=True)
class MergeEvent:
    """One inelastic merge: a contiguous cell range became one cluster.

    ``first_index``/``last_index`` are inclusive *original cell* indices.
    ``pre_velocities``/``pre_masses`` list the participating clusters just
    before the merge, so ``post_velocity`` is their mass-weighted mean and
    ``post_psi`` the mass-weighted mean of the constituent cell psi.  Events
    loaded from disk carry ``pre_velocities=None``: cluster velocities at the
    event instant are not serialized and cannot be reconstructed.
    """

    time: float
    first_index: int
    last_index: int
    post_velocity: float
    post_psi: float
    pre_velocities: tuple[float, ...] | None = None
    pre_masses: tuple[float, ...] | None = None


@dataclass(frozen=True)
class StepResult:
    ensemble: Ensemble
    events: tuple[MergeEvent, ...]
    dt_taken: float
    dt_next: float


def drift(ensemble: Ensemble, kernel: Kernel) -> np.ndarray:
    """Cluster velocities psi - (Phi * rho)(x) of the first-order system."""
    x = ensemble.positions
    return ensemble.psi - kernel.big_phi(x[:, None] - x[None, :]) @ ensemble.masses


def _make_rhs(masses: np.ndarray, psi: np.ndarray, kernel: Kernel):
    def rhs(x: np.ndarray) -> np.ndarray:
        return psi - kernel.big_phi(x[:, None] - x[None, :]) @ masses
    return rhs


def _attempt(x0, k1, h, rhs):
    """One Dormand-Prince trial step; returns (x1, k7, error_estimate)."""
    k = [k1]
    for i in range(1, 6):
        xi = x0 + h * sum(a * kj for a, kj in zip(_A[i], k))
        k.append(rhs(xi))
    x1 = x0 + h * sum(b * kj for b, kj in zip(_A[6], k))
    k7 = rhs(x1)
    k.append(k7)
    err = h * sum(e * kj for e, kj in zip(_E, k))
    return x1, k7, err


def _error_norm(err, x0, x1, tol: Tolerances) -> float:
    sc = tol.atol + tol.rtol * np.maximum(np.abs(x0), np.abs(x1))
    with np.errstate(over="ignore"):
        return float(np.sqrt(np.mean((err / sc) ** 2)))


def _initial_dt(x0, f, tol: Tolerances, dt_max: float) -> float:
    sc = tol.atol + tol.rtol * np.abs(x0)
    with np.errstate(over="ignore", invalid="ignore"):
        d0 = float(np.sqrt(np.mean((x0 / sc) ** 2)))
        d1 = float(np.sqrt(np.mean((f / sc) ** 2)))
    if not (math.isfinite(d0) and math.isfinite(d1)):
        # tolerances so extreme the scaled norms overflowed; start tiny and
        # let the controller (or the underflow guard) take it from there
        return min(dt_max, 1e-6)
    if d1 < 1e-10:
        return dt_max
    return min(dt_max, max(1e-6, 0.01 * d0 / d1))


def _hermite(s, x0, v0, x1, v1, h):
    """Cubic Hermite dense output on the accepted step, s in [0, 1]."""
    s2, s3 = s * s, s * s * s
    h00 = 2.0 * s3 - 3.0 * s2 + 1.0
    h10 = s3 - 2.0 * s2 + s
    h01 = -2.0 * s3 + 3.0 * s2
    h11 = s3 - s2
    return h00 * x0 + (h10 * h) * v0 + h01 * x1 + (h11 * h) * v1


def _pair_crossing(a, b, c, d, thr, s_tol):
    """Earliest s in (0,1] where the Hermite cubic drops to <= thr.

    The cubic is H(s) = a s^3 + b s^2 + c s + d with H(0) = d > thr.
    Candidates are the interior critical points and s = 1; between
    consecutive candidates H is monotone, so the first candidate at or below
    the threshold brackets the first crossing.
    """
    def H(s):
        return ((a * s + b) * s + c) * s + d

    cands = []
    qa, qb, qc = 3.0 * a, 2.0 * b, c
    if qa != 0.0:
        disc = qb * qb - 4.0 * qa * qc
        if disc >= 0.0:
            r = math.sqrt(disc)
            # numerically stable quadratic roots (q == 0 only when all roots are 0)
            q = -0.5 * (qb + math.copysign(r, qb))
            roots = [q / qa] + ([qc / q] if q != 0.0 else [])
            cands = sorted(s for s in roots if 0.0 < s < 1.0)
    elif qb != 0.0:
        s = -qc / qb
        if 0.0 < s < 1.0:
            cands = [s]
    lo = 0.0
    for s in cands + [1.0]:
        if H(s) <= thr:
            hi = s
            while hi - lo > s_tol:
                mid = 0.5 * (lo + hi)
                if H(mid) <= thr:
                    hi = mid
                else:
                    lo = mid
            return hi
        lo = s
    return None


def _first_trigger(x0, v0, x1, v1, h, eps, s_tol):
    """Earliest contact trigger across all adjacent gaps, or None.

    Gaps that start above twice the contact threshold trigger when they reach
    it; gaps already inside the contact zone (left there by a previous
    cascade because they were separating) trigger only on actual overlap, so
    a kissing-but-separating pair cannot stall the integration.
    """
    g0 = np.diff(x0)
    g1 = np.diff(x1)
    dg0 = np.diff(v0)
    dg1 = np.diff(v1)
    # power-basis coefficients of the Hermite cubic per gap
    ca = 2.0 * g0 + h * dg0 - 2.0 * g1 + h * dg1
    cb = -3.0 * g0 - 2.0 * h * dg0 + 3.0 * g1 - h * dg1
    cc = h * dg0
    best = None
    for i in range(g0.size):
        thr = eps if g0[i] > eps else 0.0
        if g0[i] <= thr:  # already at/below the floor (separating contact)
            continue
        s = _pair_crossing(ca[i], cb[i], cc[i], g0[i], thr, s_tol)
        if s is not None and (best is None or s < best):
            best = s
    return best


def _cascade(ens: Ensemble, t_ev: float, eps: float):
    """Resolve all contacts at one instant; returns (ensemble, events).

    Repeatedly merges maximal runs of adjacent pairs that overlap or are in
    contact and closing, pooling velocities mass-weighted.  Pooling only ever
    averages the *pre-event* velocities (never re-derived forces), so the
    whole cascade is the tangent-cone projection of the incoming velocity
    vector and momentum is conserved run by run.
    """
    cur = ens
    while True:
        gaps = np.diff(cur.positions)
        v = cur.velocities
        mark = (gaps <= 0.0) | ((gaps <= 2.0 * eps) & (v[:-1] - v[1:] >= 0.0))
        if not np.any(mark):
            break
        runs = []
        i = 0
        while i < mark.size:
            if mark[i]:
                j = i
                while j < mark.size and mark[j]:
                    j += 1
                runs.append((i, j + 1))
                i = j + 1
            else:
                i += 1
        cur = cur.merged(runs)

    events = []
    if cur.n_clusters != ens.n_clusters:
        old_lin = ens.lineage
        for k, (a, b) in enumerate(cur.cluster_cell_ranges()):
            old_clusters = np.unique(old_lin[a:b])
            if old_clusters.size > 1:
                events.append(MergeEvent(
                    time=t_ev,
                    first_index=int(a),
                    last_index=int(b - 1),
                    pre_velocities=tuple(float(ens.velocities[c]) for c in old_clusters),
                    pre_masses=tuple(float(ens.masses[c]) for c in old_clusters),
                    post_velocity=float(cur.velocities[k]),
                    post_psi=float(cur.psi[k]),
                ))
    return cur, events


def step(ensemble: Ensemble, kernel: Kernel, dt_max: float,
         tolerances: Tolerances | None = None, *,
         t: float = 0.0, dt_hint: float | None = None) -> StepResult:
    """Advance by one accepted step, stopping early at the first contact.

    Returns the post-step (or post-merge) ensemble, any merge events with
    absolute times (``t`` is the time of the input state), the time actually
    advanced, and a step-size suggestion for the next call.
    """
    if dt_max <= 0.0:
        raise InvalidScenarioError(f"dt_max must be positive, got {dt_max}")
    tol = tolerances or Tolerances()
    x0 = ensemble.positions
    rhs = _make_rhs(ensemble.masses, ensemble.psi, kernel)
    k1 = rhs(x0)
    h = min(dt_hint, dt_max) if dt_hint else _initial_dt(x0, k1, tol, dt_max)
    # Never let one step fully traverse a closing gap: beyond the contact the
    # stages would oscillate across the pair and the dense output could miss
    # the crossing entirely.  Capping at the time-to-contact of the fastest
    # closing pair keeps every crossing visible to the Hermite interpolant.
    eps = EPS_CONTACT * max(1.0, float(np.max(np.abs(x0))))
    gaps0 = np.diff(x0)
    rates0 = -np.diff(k1)  # positive where the pair is closing
    closing = (rates0 > 0.0) & (gaps0 > eps)
    if np.any(closing):
        h_contact = float(np.min(gaps0[closing] / rates0[closing]))
        # Keep the cap above the underflow guard; a pair closer than that
        # simply overlaps within the step and is merged by the usual trigger.
        h = min(h, max(h_contact, 2e-14 * max(1.0, abs(t))))
    while True:
        if h < 1e-14 * max(1.0, abs(t)):
            raise NumericalAbortError(
                f"step size underflow at t={t}: h={h} (events cannot be separated)")
        x1, k7, err = _attempt(x0, k1, h, rhs)
        errnorm = _error_norm(err, x0, x1, tol)
        if errnorm <= 1.0:
            break
        h *= max(0.2, 0.9 * errnorm ** -0.2)
    factor = 5.0 if errnorm == 0.0 else min(5.0, max(0.2, 0.9 * errnorm ** -0.2))
    dt_next = h * factor

    s_tol = TAU_EVENT * max(1.0, abs(t) + h) / h
    s_star = _first_trigger(x0, k1, x1, k7, h, eps, s_tol)
    if s_star is None:
        return StepResult(ensemble.evolved(x1, k7), (), h, dt_next)

    x_ev = _hermite(s_star, x0, k1, x1, k7, h)
    v_ev = rhs(x_ev)
    post, events = _cascade(ensemble.evolved(x_ev, v_ev), t + s_star * h, eps)
    return StepResult(post, tuple(events), s_star * h, dt_next)


@dataclass
class SimulationRecord:
    """Snapshots, merge events, and verification integrals of one run.

    ``phi_integrals[k, i]`` is the per-cell integral of (Phi * rho_s) along
    the cell's cluster trajectory up to ``times[k]``; ``v2_integrals[k]`` the
    integral of the mass-weighted squared velocity norm.
    """

    kernel: Kernel
    initial: Ensemble
    times: np.ndarray
    snapshots: list[Ensemble]
    events: list[MergeEvent]
    phi_integrals: np.ndarray
    v2_integrals: np.ndarray

    def index_at(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"{t} is not a snapshot time")
        return k

    def snapshot_at(self, t: float) -> Ensemble:
        return self.snapshots[self.index_at(t)]

    def partition_at(self, t: float) -> list[tuple[int, int]]:
        """Half-open cell ranges of the clusters at snapshot time t."""
        return self.snapshots[self.index_at(t)].cluster_cell_ranges()


def _snapshot_nodes(t_end: float, snapshot_dt: float) -> list[float]:
    n = int(math.floor(t_end / snapshot_dt + 1e-9))
    nodes = [k * snapshot_dt for k in range(n + 1)]
    if t_end - nodes[-1] > 1e-9 * max(1.0, t_end):
        nodes.append(t_end)
    else:
        nodes[-1] = min(nodes[-1], t_end)
    return nodes


def simulate(ensemble: Ensemble, kernel: Kernel, t_end: float, snapshot_dt: float,
             tolerances: Tolerances | None = None) -> SimulationRecord:
    """Integrate to ``t_end`` with snapshots at multiples of ``snapshot_dt``.

    Snapshots taken at an event time show the post-merge state.  Integration
    always lands exactly on snapshot nodes (the step is capped by the time to
    the next node), so records of the same scenario at refined ``snapshot_dt``
    share their coarse nodes.
    """
    if t_end <= 0.0:
        raise InvalidScenarioError(f"t_end must be positive, got {t_end}")
    if snapshot_dt <= 0.0:
        raise InvalidScenarioError(f"snapshot_dt must be positive, got {snapshot_dt}")
    tol = tolerances or Tolerances()
    nodes = _snapshot_nodes(t_end, snapshot_dt)

    state = ensemble
    n_cells = state.n_cells
    times = [0.0]
    snaps = [state]
    events: list[MergeEvent] = []
    phi_rows = [np.zeros(n_cells)]
    v2_vals = [0.0]

    acc_phi = np.zeros(n_cells)
    acc_v2 = 0.0
    t_mark = 0.0
    state_mark = state  # state at the last accumulation node (left endpoint)

    def accumulate_to(t_new: float) -> None:
        nonlocal acc_phi, acc_v2, t_mark
        dt = t_new - t_mark
        if dt <= 0.0:
            return
        conv = state_mark.convolve_big_phi(kernel, state_mark.positions)
        acc_phi = acc_phi + dt * np.asarray(conv)[state_mark.lineage]
        acc_v2 = acc_v2 + dt * float(np.sum(state_mark.masses * state_mark.velocities ** 2))
        t_mark = t_new

    t = 0.0
    dt_hint: float | None = None
    for target in nodes[1:]:
        while True:
            remaining = target - t
            if remaining <= 1e-12 * max(1.0, target):
                t = target
                break
            res = step(state, kernel, remaining, tol, t=t, dt_hint=dt_hint)
            t_new = t + res.dt_taken
            if res.events:
                accumulate_to(t_new)
                state_mark = res.ensemble
                events.extend(res.events)
                if len(events) > _MAX_EVENTS:
                    raise NumericalAbortError(
                        f"event cascade runaway: more than {_MAX_EVENTS} events by t={t_new}")
            state = res.ensemble
            dt_hint = res.dt_next
            t = t_new
        accumulate_to(target)
        state_mark = state
        times.append(target)
        snaps.append(state)
        phi_rows.append(acc_phi.copy())
        v2_vals.append(acc_v2)

    return SimulationRecord(kernel=kernel, initial=ensemble,
                            times=np.array(times), snapshots=snaps, events=events,
                            phi_integrals=np.vstack(phi_rows),
                            v2_integrals=np.array(v2_vals))
