"""Particle/cluster state and its quantile-function representation.

An :class:`Ensemble` is a finite mass distribution on the line: cells are the
original particles (immutable once constructed), clusters are the current
maximal groups of stuck-together cells.  The *natural velocity*

    psi_i = v_i + sum_j m_j Phi(x_i - x_j)

is computed once from the initial data and is the conserved slope field of the
reduced first-order dynamics: between collisions each cluster's psi is
constant, and at a collision the merged cluster's psi is the mass-weighted
mean of its constituents.

Cluster masses and cluster psi are always *recomputed from the cell arrays*
(one canonical arithmetic path) rather than updated incrementally; with this
convention merging never touches the conserved cell data at all.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidEnsembleError
from .kernels import Kernel

__all__ = [
    "Ensemble",
    "QuantileFunction",
    "natural_velocities",
]

#: relative slack allowed on sum(masses) == 1 at construction
MASS_BUDGET_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


def natural_velocities(masses, positions, velocities, kernel: Kernel) -> np.ndarray:
    """psi_i = v_i + sum_j m_j Phi(x_i - x_j), by direct O(N^2) summation.

    The self term vanishes because Phi(0) = 0, so weakly singular kernels are
    safe here (only the primitive is evaluated).
    """
    m = np.asarray(masses, dtype=float)
    x = np.asarray(positions, dtype=float)
    v = np.asarray(velocities, dtype=float)
    if not (m.shape == x.shape == v.shape) or m.ndim != 1:
        raise InvalidEnsembleError("masses, positions, velocities must be equal-length 1-d")
    if np.any(m <= 0.0):
        raise InvalidEnsembleError("masses must be strictly positive")
    if np.any(np.diff(x) < 0.0):
        raise InvalidEnsembleError("positions must be nondecreasing")
    return v + kernel.big_phi(x[:, None] - x[None, :]) @ m


@dataclass(frozen=True)
class Ensemble:
    """Cluster-resolved state over an immutable cell (original particle) grid.

    Attributes
    ----------
    cell_masses, cell_positions, cell_velocities, cell_psi
        Original particle data, frozen at construction.
    lineage
        Cell index -> cluster index; nondecreasing and surjective.
    masses, positions, velocities, psi
        Per-cluster state.  ``positions`` strictly increasing across clusters;
        ``masses`` and ``psi`` are the cellwise sums/means of their block.
    """

    cell_masses: np.ndarray
    cell_positions: np.ndarray
    cell_velocities: np.ndarray
    cell_psi: np.ndarray
    lineage: np.ndarray
    masses: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    psi: np.ndarray

    # -- construction ---------------------------------------------------

    @staticmethod
    def from_particles(masses, positions, velocities, kernel: Kernel,
                       *, normalize: bool = False) -> "Ensemble":
        """Build the initial ensemble from raw particles.

        Positions must be nondecreasing.  Exactly coincident particles are
        pre-merged into a single cluster (mass-weighted velocity and psi), so
        the cluster positions are strictly increasing from the start.  With
        ``normalize`` the masses are rescaled to total 1; otherwise a total
        off by more than ``MASS_BUDGET_TOL`` is an error.
        """
        m = np.array(masses, dtype=float)
        x = np.array(positions, dtype=float)
        v = np.array(velocities, dtype=float)
        if not (m.shape == x.shape == v.shape) or m.ndim != 1 or m.size == 0:
            raise InvalidEnsembleError("masses, positions, velocities must be equal-length 1-d")
        if np.any(~np.isfinite(m)) or np.any(~np.isfinite(x)) or np.any(~np.isfinite(v)):
            raise InvalidEnsembleError("state must be finite")
        if np.any(m <= 0.0):
            raise InvalidEnsembleError("masses must be strictly positive")
        total = float(np.sum(m))
        if normalize:
            m = m / total
        elif abs(total - 1.0) > MASS_BUDGET_TOL:
            raise InvalidEnsembleError(f"masses must sum to 1 (got {total!r}); "
                                       "pass normalize=True to rescale")
        if np.any(np.diff(x) < 0.0):
            raise InvalidEnsembleError("positions must be nondecreasing")

        psi = natural_velocities(m, x, v, kernel)

        # pre-merge exactly coincident particles into clusters
        new_cluster = np.concatenate(([True], np.diff(x) > 0.0))
        lineage = np.cumsum(new_cluster) - 1
        return Ensemble._assemble(m, x, v, psi, lineage,
                                  cluster_positions=x[new_cluster],
                                  cluster_velocities=None)

    @staticmethod
    def _assemble(cell_m, cell_x, cell_v, cell_psi, lineage,
                  cluster_positions, cluster_velocities) -> "Ensemble":
        """Common path: pool cluster mass/psi from cells along ``lineage``.

        ``cluster_velocities=None`` pools cell velocities too (construction
        time); the dynamics passes evolved per-cluster velocities instead.
        """
        n_clusters = int(lineage[-1]) + 1
        starts = np.searchsorted(lineage, np.arange(n_clusters), side="left")
        stops = np.searchsorted(lineage, np.arange(n_clusters), side="right")
        cm = np.array([np.sum(cell_m[a:b]) for a, b in zip(starts, stops)])
        cpsi = np.array([np.sum(cell_m[a:b] * cell_psi[a:b]) for a, b in zip(starts, stops)]) / cm
        if cluster_velocities is None:
            cluster_velocities = np.array(
                [np.sum(cell_m[a:b] * cell_v[a:b]) for a, b in zip(starts, stops)]) / cm
        return Ensemble(
            cell_masses=_frozen(cell_m),
            cell_positions=_frozen(cell_x),
            cell_velocities=_frozen(cell_v),
            cell_psi=_frozen(cell_psi),
            lineage=np.asarray(lineage, dtype=np.intp),
            masses=_frozen(cm),
            positions=_frozen(cluster_positions),
            velocities=_frozen(cluster_velocities),
            psi=_frozen(cpsi),
        )

    # -- basic geometry -------------------------------------------------

    @property
    def n_cells(self) -> int:
        return self.cell_masses.size

    @property
    def n_clusters(self) -> int:
        return self.masses.size

    def cluster_cell_ranges(self) -> list[tuple[int, int]]:
        """Half-open cell index range of each cluster, in order."""
        idx = np.arange(self.n_clusters)
        starts = np.searchsorted(self.lineage, idx, side="left")
        stops = np.searchsorted(self.lineage, idx, side="right")
        return list(zip(starts.tolist(), stops.tolist()))

    def validate(self) -> None:
        """Re-check all structural invariants; raise on violation."""
        if abs(float(np.sum(self.cell_masses)) - 1.0) > MASS_BUDGET_TOL:
            raise InvalidEnsembleError("cell masses must sum to 1")
        if np.any(np.diff(self.positions) <= 0.0):
            raise InvalidEnsembleError("cluster positions must be strictly increasing")
        lin = self.lineage
        if lin[0] != 0 or np.any(np.diff(lin) < 0) or np.any(np.diff(lin) > 1):
            raise InvalidEnsembleError("lineage must be nondecreasing, surjective, gap-free")
        if int(lin[-1]) + 1 != self.n_clusters:
            raise InvalidEnsembleError("lineage range must match cluster count")
        for (a, b), mass, psi in zip(self.cluster_cell_ranges(), self.masses, self.psi):
            if abs(np.sum(self.cell_masses[a:b]) - mass) > 1e-12:
                raise InvalidEnsembleError("cluster mass must pool its cells")
            pooled = np.sum(self.cell_masses[a:b] * self.cell_psi[a:b]) / np.sum(self.cell_masses[a:b])
            if abs(pooled - psi) > 1e-12 * (1.0 + abs(pooled)):
                raise InvalidEnsembleError("cluster psi must be the pooled cell psi")

    # -- evolution helpers ----------------------------------------------

    def evolved(self, positions, velocities) -> "Ensemble":
        """Same clusters, new positions/velocities (integrator output)."""
        x = _frozen(positions)
        if x.shape != self.positions.shape:
            raise InvalidEnsembleError("evolved positions must keep the cluster count")
        return Ensemble(
            cell_masses=self.cell_masses,
            cell_positions=self.cell_positions,
            cell_velocities=self.cell_velocities,
            cell_psi=self.cell_psi,
            lineage=self.lineage,
            masses=self.masses,
            positions=x,
            velocities=_frozen(velocities),
            psi=self.psi,
        )

    def merged(self, runs: list[tuple[int, int]]) -> "Ensemble":
        """Merge each half-open *cluster*-index run into one cluster.

        Pooled position and velocity are the mass-weighted means of the
        participating clusters (the momentum-conserving inelastic rule);
        pooled mass and psi are recomputed from the underlying cells.
        """
        n = self.n_clusters
        prev_stop = 0
        for start, stop in runs:
            if not (0 <= start < stop <= n) or start < prev_stop:
                raise InvalidEnsembleError(f"malformed merge run {(start, stop)!r}")
            prev_stop = stop
        in_run_start = {a: b for a, b in runs}
        new_positions = []
        new_velocities = []
        old_to_new = np.empty(n, dtype=np.intp)
        i = 0
        k = 0
        while i < n:
            if i in in_run_start:
                j = in_run_start[i]
                w = self.masses[i:j]
                new_positions.append(float(np.sum(w * self.positions[i:j]) / np.sum(w)))
                new_velocities.append(float(np.sum(w * self.velocities[i:j]) / np.sum(w)))
                old_to_new[i:j] = k
                i = j
            else:
                new_positions.append(float(self.positions[i]))
                new_velocities.append(float(self.velocities[i]))
                old_to_new[i] = k
                i += 1
            k += 1
        lineage = old_to_new[self.lineage]
        return Ensemble._assemble(
            self.cell_masses, self.cell_positions, self.cell_velocities, self.cell_psi,
            lineage,
            cluster_positions=np.array(new_positions),
            cluster_velocities=np.array(new_velocities),
        )

    # -- measure-side views ---------------------------------------------

    def to_quantile(self) -> "QuantileFunction":
        """Quantile (monotone-rearrangement) view of the cluster measure."""
        theta = np.cumsum(self.masses)[:-1]
        return QuantileFunction(breakpoints=_frozen(theta), values=self.positions)

    def convolve_big_phi(self, kernel: Kernel, at):
        """(Phi * rho)(at) = sum_j m_j Phi(at - x_j); scalar or vectorized."""
        pts = np.atleast_1d(np.asarray(at, dtype=float))
        out = kernel.big_phi(pts[:, None] - self.positions[None, :]) @ self.masses
        if np.isscalar(at) or getattr(at, "ndim", 1) == 0:
            return float(out[0])
        return out

    def momentum(self) -> float:
        return float(np.sum(self.masses * self.velocities))


@dataclass(frozen=True)
class QuantileFunction:
    """Right-continuous step quantile function of an atomic measure.

    ``breakpoints`` are the interior cumulative masses (strictly increasing,
    in (0,1)); ``values`` has one entry per cell and is nondecreasing.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if bp.size != vals.size - 1:
            raise InvalidEnsembleError("need exactly one breakpoint between consecutive cells")
        if bp.size and (np.any(np.diff(bp) <= 0.0) or bp[0] <= 0.0 or bp[-1] >= 1.0):
            raise InvalidEnsembleError("breakpoints must be strictly increasing inside (0,1)")
        if np.any(np.diff(vals) < 0.0):
            raise InvalidEnsembleError("quantile values must be nondecreasing")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @property
    def cell_widths(self) -> np.ndarray:
        edges = np.concatenate(([0.0], self.breakpoints, [1.0]))
        return np.diff(edges)

    def __call__(self, m):
        idx = np.searchsorted(self.breakpoints, m, side="right")
        return self.values[idx]

    def integrate(self, f) -> float:
        """Push-forward integral: int_0^1 f(X(m)) dm = sum_i m_i f(x_i)."""
        return float(np.sum(self.cell_widths * np.asarray(f(self.values), dtype=float)))
