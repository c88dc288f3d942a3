"""Lattice model: domains, potentials, interaction kernels and Hamiltonians.

The single-particle Hamiltonian on a finite box of Z^d has hopping 1 between
nearest neighbours (open boundaries, zero diagonal for the kinetic part) and
the potential on the diagonal.  The potential is a 2-periodic staggered part
of amplitude xi plus uniform on-site disorder on [0, w].  The two-body kernel
is radial in the l1 distance with a short range, and enters through the
mean-field operator

    A(gamma)(x, y) = delta_{x=y} * sum_n W(n - y) gamma(n, n) - W(x - y) gamma(x, y)

whose diagonal (Hartree) and off-diagonal (exchange) parts derive from the
quadratic interaction energy.  All functions are pure; values are treated as
immutable after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "derived_seed",
    "LatticeBox",
    "PotentialField",
    "InteractionKernel",
    "HamiltonianMatrix",
    "build_hamiltonian",
    "interaction_kernel_nnn",
    "kernel_matrix",
    "effective_interaction",
    "hf_energy",
    "as_matrix",
]


def as_matrix(obj) -> np.ndarray:
    """Return the dense ndarray behind a matrix-like object."""
    if hasattr(obj, "matrix"):
        return obj.matrix
    return np.asarray(obj, dtype=float)


@dataclass(frozen=True)
class LatticeBox:
    """Finite box of Z^d with row-major site indexing.

    Sites are tuples of non-negative coordinates, one per axis; the flat
    index runs over 0..size-1 in row-major (C) order.  Two sites are
    adjacent iff their l1 distance is exactly 1 (open boundaries, no
    wraparound).
    """

    shape: tuple[int, ...]

    def __post_init__(self):
        if not self.shape or any(int(s) < 1 for s in self.shape):
            raise ValueError(f"box side lengths must be positive, got {self.shape}")
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))

    @property
    def dimension(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def coordinates(self) -> np.ndarray:
        """(size, d) integer array of site coordinates in index order."""
        idx = np.arange(self.size)
        return np.stack(np.unravel_index(idx, self.shape), axis=1).astype(np.int64)

    def index_of(self, site) -> int:
        return int(np.ravel_multi_index(tuple(int(c) for c in site), self.shape))

    def site_of(self, index: int) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(int(index), self.shape))

    def l1_distances(self) -> np.ndarray:
        """Pairwise l1 distances between all sites, (size, size)."""
        c = self.coordinates()
        return np.abs(c[:, None, :] - c[None, :, :]).sum(axis=2)


def _stream(seed: int) -> np.random.Generator:
    # Counter-based generator so draws are reproducible and platform-stable.
    return np.random.Generator(np.random.Philox(key=np.uint64(int(seed) & (2**64 - 1))))


def derived_seed(base: int, index: int) -> int:
    """Stable per-member seed for ensembles; independent of evaluation order."""
    ss = np.random.SeedSequence(entropy=int(base), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class PotentialField:
    """On-site potential V = V0 + V_omega with its construction provenance.

    V0 alternates +xi / -xi with the parity of the coordinate sum; V_omega
    is drawn uniformly from [0, w] per site from a counter-based stream
    keyed by the seed.
    """

    box: LatticeBox
    v0: np.ndarray
    v_omega: np.ndarray
    xi: float
    w: float
    seed: int

    @property
    def values(self) -> np.ndarray:
        return self.v0 + self.v_omega

    @classmethod
    def sample(cls, box: LatticeBox, xi: float, w: float, seed: int) -> "PotentialField":
        if xi < 0:
            raise ValueError(f"periodic amplitude must be >= 0, got {xi}")
        if w < 0:
            raise ValueError(f"disorder width must be >= 0, got {w}")
        parity = box.coordinates().sum(axis=1) % 2
        v0 = np.where(parity == 0, float(xi), -float(xi))
        v_omega = _stream(seed).uniform(0.0, float(w), size=box.size)
        return cls(box=box, v0=v0, v_omega=v_omega, xi=float(xi), w=float(w), seed=int(seed))

    def with_dirac(self, site_index: int, amplitude: float, clip: bool = True) -> "PotentialField":
        """Add a dirac of the given amplitude to the random part at one site.

        With clip=True the perturbed value is clipped back into [0, w], the
        support of the disorder distribution, so the perturbed field remains
        an admissible realisation.
        """
        v = self.v_omega.copy()
        v[site_index] += float(amplitude)
        if clip:
            v[site_index] = min(max(v[site_index], 0.0), self.w)
        return PotentialField(self.box, self.v0, v, self.xi, self.w, self.seed)

    def with_disorder_only_inside(self, inside: np.ndarray) -> "PotentialField":
        """Zero the random part outside the given boolean site mask."""
        v = np.where(np.asarray(inside, bool), self.v_omega, 0.0)
        return PotentialField(self.box, self.v0, v, self.xi, self.w, self.seed)


def _shell_count(d: int, r: int) -> int:
    # Number of lattice vectors of Z^d at l1 distance exactly r.
    if r == 0:
        return 1
    return sum(
        2**k * math.comb(d, k) * math.comb(r - 1, k - 1) for k in range(1, min(d, r) + 1)
    )


@dataclass(frozen=True)
class InteractionKernel:
    """Radial two-body kernel W(r), r the l1 lattice distance.

    The l1 norm counts every lattice vector: W(0) + sum_{r>=1} n_d(r) W(r)
    with n_d(r) the size of the l1 sphere of radius r in Z^d.  decay holds
    optional analytic decay constants (C, nu) when the kernel is given in
    exponential form.
    """

    values: tuple[float, ...]
    d: int = 1
    decay: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @property
    def r_max(self) -> int:
        return len(self.values) - 1

    @property
    def l1_norm(self) -> float:
        return float(
            sum(_shell_count(self.d, r) * abs(v) for r, v in enumerate(self.values))
        )

    def __call__(self, r: int) -> float:
        r = int(r)
        return self.values[r] if 0 <= r <= self.r_max else 0.0


def interaction_kernel_nnn(q: float, d: int = 1) -> InteractionKernel:
    """Next-to-nearest-neighbour kernel: q on site, q/2 at distance 1, q/4 at 2 and 3."""
    if q < 0:
        raise ValueError(f"interaction strength must be >= 0, got {q}")
    q = float(q)
    return InteractionKernel(values=(q, q / 2, q / 4, q / 4), d=d)


@dataclass(frozen=True)
class HamiltonianMatrix:
    """Dense real symmetric operator on l2 of a lattice box."""

    matrix: np.ndarray
    mean_field: bool = False
    box: LatticeBox | None = None

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def build_hamiltonian(box: LatticeBox, potential: PotentialField) -> HamiltonianMatrix:
    """Hopping 1 between adjacent sites, the potential on the diagonal."""
    if potential.box.shape != box.shape:
        raise ValueError(
            f"potential sampled on box {potential.box.shape}, expected {box.shape}"
        )
    h = np.where(box.l1_distances() == 1, 1.0, 0.0)
    np.fill_diagonal(h, potential.values)
    return HamiltonianMatrix(matrix=h, mean_field=False, box=box)


def kernel_matrix(kernel: InteractionKernel, box: LatticeBox) -> np.ndarray:
    """Pairwise kernel values W(|x-y|_1) on the box, (size, size)."""
    table = np.concatenate([np.asarray(kernel.values, float), [0.0]])
    dist = np.minimum(box.l1_distances(), kernel.r_max + 1)
    return table[dist]


def mean_field_matrix(gamma: np.ndarray, wmat: np.ndarray) -> np.ndarray:
    """A(gamma) given the precomputed pairwise kernel matrix."""
    rho = np.diag(gamma).copy()
    return np.diag(wmat @ rho) - wmat * gamma


def effective_interaction(gamma, kernel: InteractionKernel, box: LatticeBox) -> HamiltonianMatrix:
    """Mean-field operator of a density matrix: Hartree diagonal minus exchange.

    A(x, y) = delta_{x=y} sum_n W(n-y) gamma(n, n) - W(x-y) gamma(x, y).
    The on-site kernel value cancels between the two terms, so the result
    does not depend on W(0) when gamma is a density matrix.
    """
    g = as_matrix(gamma)
    if g.shape != (box.size, box.size):
        raise ValueError(f"density matrix shape {g.shape} does not match box size {box.size}")
    a = mean_field_matrix(g, kernel_matrix(kernel, box))
    return HamiltonianMatrix(matrix=a, mean_field=True, box=box)


def hf_energy_raw(gamma: np.ndarray, h: np.ndarray, wmat: np.ndarray) -> float:
    rho = np.diag(gamma)
    direct = float(rho @ wmat @ rho)
    exchange = float(np.sum(wmat * gamma * gamma))
    return float(np.sum(h * gamma)) + 0.5 * direct - 0.5 * exchange


def hf_energy(gamma, h_linear: HamiltonianMatrix, kernel: InteractionKernel) -> float:
    """Mean-field energy Tr(H gamma) + 1/2 sum W(x-y)[rho(x)rho(y) - gamma(x,y)^2]."""
    g = as_matrix(gamma)
    h = as_matrix(h_linear)
    if g.shape != h.shape:
        raise ValueError(f"shape mismatch: gamma {g.shape} vs hamiltonian {h.shape}")
    box = getattr(h_linear, "box", None)
    if box is None:
        raise ValueError("hamiltonian carries no lattice box; build it with build_hamiltonian")
    return hf_energy_raw(g, h, kernel_matrix(kernel, box))
