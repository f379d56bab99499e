"""Communication kernels and their closed-form primitives.

A kernel is a symmetric, radially nonincreasing, locally integrable weight
phi(r) >= 0 controlling how strongly two particles at distance r align.  The
reduced first-order dynamics never evaluates phi itself: every force term goes
through the odd primitive

    Phi(x) = integral_0^x phi(y) dy,

which stays continuous even when phi blows up at the origin (weakly singular
families).  Each family below therefore ships closed forms for Phi, for the
even convex potential W(x) = integral_0^x Phi(y) dy, and - where the range
permits - for the inverse of Phi on [0, sup Phi).  No quadrature runs in the
dynamics hot path.

Families
--------
Zero            phi = 0 (free transport).
AllToAll        phi = K, the mean-field constant kernel; Phi(x) = K x is
                unbounded (fat tail).
PowerLaw        phi(r) = c r^(-beta) for r <= R with beta in (0, 1), continued
                by c R^(-beta) e^(-(r-R)) beyond R.  The exponential
                continuation is a modeling choice: it keeps phi nonincreasing
                and integrable with closed-form primitives, so the singular
                short-range regime and a thin tail are exercised together.
Exponential     phi(r) = a e^(-|r|).
CompactBump     phi(r) = height on |r| <= radius, zero beyond.

All values are plain dimensionless reals; instances are immutable and safe to
share between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import KernelRangeError, SingularKernelError

__all__ = [
    "Kernel",
    "Zero",
    "AllToAll",
    "PowerLaw",
    "Exponential",
    "CompactBump",
    "kernel_from_config",
    "kernel_to_config",
]


def _maybe_scalar(x, out):
    """Return ``out`` as a python float when the input was scalar."""
    if np.isscalar(x) or getattr(x, "ndim", 1) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class Kernel:
    """Base class; concrete families implement the four evaluations.

    Subclasses provide:

    phi(r)
        pointwise kernel value (vectorized, even in r).
    big_phi(x)
        odd primitive Phi with Phi(0) = 0, nondecreasing, concave on x >= 0.
    w_phi(x)
        even convex potential W with W(0) = 0 and W' = Phi.
    inv_big_phi(y)
        the x >= 0 with Phi(x) = y, for y in [0, sup Phi).

    and the tail/origin descriptors ``big_phi_sup``, ``phi_l1_norm``,
    ``reciprocal_phi_integrable_at_zero``.
    """

    def phi(self, r):
        raise NotImplementedError

    def big_phi(self, x):
        raise NotImplementedError

    def w_phi(self, x):
        raise NotImplementedError

    @property
    def big_phi_sup(self) -> float:
        """sup of Phi on [0, inf); ``inf`` for fat-tailed families."""
        raise NotImplementedError

    @property
    def phi_l1_norm(self) -> float:
        """L1 norm of phi over the whole line; equals 2 sup Phi."""
        return 2.0 * self.big_phi_sup

    @property
    def is_fat_tailed(self) -> bool:
        """True when Phi is unbounded (phi not integrable at infinity)."""
        return math.isinf(self.big_phi_sup)

    @property
    def vanishes(self) -> bool:
        """True when phi is identically zero (no interaction at all)."""
        return self.big_phi_sup == 0.0

    @property
    def reciprocal_phi_integrable_at_zero(self) -> bool:
        """True iff integral_0^1 dx / Phi(x) converges.

        Weakly singular families (PowerLaw) give Phi(x) ~ x^(1-beta) near 0,
        so the reciprocal is integrable and contact happens in finite time.
        Bounded families have Phi(x) <= phi(0) x, whose reciprocal diverges
        logarithmically: approach is asymptotic only.  For the Zero kernel the
        flag is False by convention (Phi vanishes identically).
        """
        return False

    def inv_big_phi(self, y: float) -> float:
        """Inverse of the primitive on [0, sup Phi).

        Raises
        ------
        KernelRangeError
            if ``y`` is negative, or at/above the supremum of a bounded Phi.
        """
        raise NotImplementedError

    def _check_inv_range(self, y: float) -> None:
        if y < 0.0:
            raise KernelRangeError(f"inverse primitive needs y >= 0, got {y}")
        if y > 0.0 and y >= self.big_phi_sup:
            raise KernelRangeError(
                f"y={y} is outside the range of the primitive (sup={self.big_phi_sup})"
            )


@dataclass(frozen=True)
class Zero(Kernel):
    """No communication: free transport with sticky collisions."""

    def phi(self, r):
        return _maybe_scalar(r, np.zeros_like(np.asarray(r, dtype=float)))

    def big_phi(self, x):
        return _maybe_scalar(x, np.zeros_like(np.asarray(x, dtype=float)))

    def w_phi(self, x):
        return _maybe_scalar(x, np.zeros_like(np.asarray(x, dtype=float)))

    @property
    def big_phi_sup(self) -> float:
        return 0.0

    def inv_big_phi(self, y: float) -> float:
        if y == 0.0:
            return 0.0
        raise KernelRangeError("the zero kernel has an identically zero primitive")


@dataclass(frozen=True)
class AllToAll(Kernel):
    """Constant kernel phi = K: the classical mean-field alignment force."""

    K: float = 1.0

    def __post_init__(self):
        if not self.K > 0.0:
            raise ValueError(f"K must be positive, got {self.K}")

    def phi(self, r):
        return _maybe_scalar(r, np.full_like(np.asarray(r, dtype=float), self.K))

    def big_phi(self, x):
        return _maybe_scalar(x, self.K * np.asarray(x, dtype=float))

    def w_phi(self, x):
        xa = np.asarray(x, dtype=float)
        return _maybe_scalar(x, 0.5 * self.K * xa * xa)

    @property
    def big_phi_sup(self) -> float:
        return math.inf

    def inv_big_phi(self, y: float) -> float:
        self._check_inv_range(y)
        return y / self.K


@dataclass(frozen=True)
class PowerLaw(Kernel):
    """Weakly singular kernel c r^(-beta) near the origin, thin tail beyond R.

    phi(r) = c r^(-beta) on 0 < r <= R and c R^(-beta) e^(-(r-R)) for r > R.
    Continuous and nonincreasing on r > 0; the primitive is

        Phi(x) = c/(1-beta) x^(1-beta)                          for 0 <= x <= R,
        Phi(x) = Phi(R) + c R^(-beta) (1 - e^(-(x-R)))          for x > R,

    bounded with sup Phi = Phi(R) + c R^(-beta).
    """

    c: float = 1.0
    beta: float = 0.5
    R: float = 1.0

    def __post_init__(self):
        if not self.c > 0.0:
            raise ValueError(f"c must be positive, got {self.c}")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0,1), got {self.beta}")
        if not self.R > 0.0:
            raise ValueError(f"R must be positive, got {self.R}")

    def phi(self, r):
        ra = np.abs(np.asarray(r, dtype=float))
        if np.any(ra == 0.0):
            raise SingularKernelError(
                "power-law kernel is singular at r=0; the dynamics must use big_phi"
            )
        core = self.c * np.minimum(ra, self.R) ** (-self.beta)
        tail = np.exp(-np.maximum(ra - self.R, 0.0))
        return _maybe_scalar(r, core * tail)

    def big_phi(self, x):
        xa = np.asarray(x, dtype=float)
        ax = np.abs(xa)
        head = (self.c / (1.0 - self.beta)) * np.minimum(ax, self.R) ** (1.0 - self.beta)
        tail = (self.c * self.R ** (-self.beta)) * (-np.expm1(-np.maximum(ax - self.R, 0.0)))
        return _maybe_scalar(x, np.sign(xa) * (head + tail))

    def w_phi(self, x):
        ax = np.abs(np.asarray(x, dtype=float))
        c, beta, R = self.c, self.beta, self.R
        head = (c / ((1.0 - beta) * (2.0 - beta))) * np.minimum(ax, R) ** (2.0 - beta)
        # beyond R: W(R) + (Phi(R) + cR^-beta)(x-R) - cR^-beta (1 - e^-(x-R))
        phiR = (c / (1.0 - beta)) * R ** (1.0 - beta)
        cR = c * R ** (-beta)
        over = np.maximum(ax - R, 0.0)
        tail = (phiR + cR) * over - cR * (-np.expm1(-over))
        return _maybe_scalar(x, head + tail)

    @property
    def big_phi_sup(self) -> float:
        return (self.c / (1.0 - self.beta)) * self.R ** (1.0 - self.beta) + self.c * self.R ** (
            -self.beta
        )

    @property
    def reciprocal_phi_integrable_at_zero(self) -> bool:
        return True

    def inv_big_phi(self, y: float) -> float:
        self._check_inv_range(y)
        phiR = (self.c / (1.0 - self.beta)) * self.R ** (1.0 - self.beta)
        if y <= phiR:
            return ((1.0 - self.beta) * y / self.c) ** (1.0 / (1.0 - self.beta))
        cR = self.c * self.R ** (-self.beta)
        return self.R - math.log1p(-(y - phiR) / cR)


@dataclass(frozen=True)
class Exponential(Kernel):
    """phi(r) = a e^(-|r|): smooth, bounded, thin-tailed."""

    a: float = 1.0

    def __post_init__(self):
        if not self.a > 0.0:
            raise ValueError(f"a must be positive, got {self.a}")

    def phi(self, r):
        ra = np.abs(np.asarray(r, dtype=float))
        return _maybe_scalar(r, self.a * np.exp(-ra))

    def big_phi(self, x):
        xa = np.asarray(x, dtype=float)
        return _maybe_scalar(x, np.sign(xa) * self.a * (-np.expm1(-np.abs(xa))))

    def w_phi(self, x):
        ax = np.abs(np.asarray(x, dtype=float))
        # integral of a(1 - e^-y) from 0 to x
        return _maybe_scalar(x, self.a * (ax - 1.0 + np.exp(-ax)))

    @property
    def big_phi_sup(self) -> float:
        return self.a

    def inv_big_phi(self, y: float) -> float:
        self._check_inv_range(y)
        return -math.log1p(-y / self.a)


@dataclass(frozen=True)
class CompactBump(Kernel):
    """Indicator kernel: constant height within |r| <= radius, zero outside."""

    radius: float = 1.0
    height: float = 1.0

    def __post_init__(self):
        if not self.radius > 0.0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if self.height < 0.0:
            raise ValueError(f"height must be nonnegative, got {self.height}")

    def phi(self, r):
        ra = np.abs(np.asarray(r, dtype=float))
        return _maybe_scalar(r, np.where(ra <= self.radius, self.height, 0.0))

    def big_phi(self, x):
        xa = np.asarray(x, dtype=float)
        return _maybe_scalar(
            x, np.sign(xa) * self.height * np.minimum(np.abs(xa), self.radius)
        )

    def w_phi(self, x):
        ax = np.abs(np.asarray(x, dtype=float))
        inside = 0.5 * self.height * np.minimum(ax, self.radius) ** 2
        outside = self.height * self.radius * np.maximum(ax - self.radius, 0.0)
        return _maybe_scalar(x, inside + outside)

    @property
    def big_phi_sup(self) -> float:
        return self.height * self.radius

    def inv_big_phi(self, y: float) -> float:
        self._check_inv_range(y)
        if y == 0.0:
            return 0.0
        return y / self.height


_FAMILIES = {
    "zero": (Zero, ()),
    "all_to_all": (AllToAll, ("K",)),
    "power_law": (PowerLaw, ("c", "beta", "R")),
    "exponential": (Exponential, ("a",)),
    "compact_bump": (CompactBump, ("radius", "height")),
}


def kernel_from_config(cfg: dict) -> Kernel:
    """Build a kernel from its JSON configuration, e.g.

    ``{"type": "power_law", "c": 1.0, "beta": 0.5, "R": 1.0}``.
    """
    if not isinstance(cfg, dict) or "type" not in cfg:
        raise ValueError("kernel config must be an object with a 'type' field")
    name = cfg["type"]
    if name not in _FAMILIES:
        raise ValueError(f"unknown kernel type {name!r}; choose from {sorted(_FAMILIES)}")
    cls, fields = _FAMILIES[name]
    extra = set(cfg) - {"type"} - set(fields)
    if extra:
        raise ValueError(f"unexpected kernel fields for {name!r}: {sorted(extra)}")
    kwargs = {f: float(cfg[f]) for f in fields if f in cfg}
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ValueError(f"bad kernel parameters for {name!r}: {exc}") from exc


def kernel_to_config(kernel: Kernel) -> dict:
    """Inverse of :func:`kernel_from_config`."""
    for name, (cls, fields) in _FAMILIES.items():
        if type(kernel) is cls:
            out = {"type": name}
            out.update({f: getattr(kernel, f) for f in fields})
            return out
    raise ValueError(f"unregistered kernel type {type(kernel)!r}")
