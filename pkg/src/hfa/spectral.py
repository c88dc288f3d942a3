"""Symmetric eigenproblems, spectral projectors, gaps and resolvent decay."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import EigenvalueAtMu, NoGap, ResolventSingular
from .model import HamiltonianMatrix, as_matrix

__all__ = [
    "GAP_TOLERANCE",
    "DensityMatrix",
    "GapReport",
    "DecayFit",
    "operator_norm",
    "eig_symmetric",
    "spectral_projector",
    "find_gap",
    "combes_thomas_probe",
]

GAP_TOLERANCE = 1e-8
SYMMETRY_TOLERANCE = 1e-10


def operator_norm(a) -> float:
    """Spectral norm (largest singular value)."""
    m = a.matrix if hasattr(a, "matrix") else np.asarray(a)
    if m.size == 0:
        return 0.0
    return float(np.linalg.norm(m, 2))


@dataclass(eq=False)
class DensityMatrix:
    """Real symmetric one-particle density matrix, 0 <= gamma <= 1."""

    matrix: np.ndarray
    projector: bool = False

    @cached_property
    def trace(self) -> float:
        return float(np.trace(self.matrix))

    def projector_defect(self) -> float:
        return operator_norm(self.matrix @ self.matrix - self.matrix)

    def validate(self, tol_sym: float = SYMMETRY_TOLERANCE, tol_proj: float = 1e-8) -> None:
        g = self.matrix
        if operator_norm(g - g.T) > tol_sym:
            raise ValueError("density matrix is not symmetric")
        ev = np.linalg.eigvalsh(g)
        if ev[0] < -1e-9 or ev[-1] > 1 + 1e-9:
            raise ValueError(f"density matrix eigenvalues outside [0, 1]: [{ev[0]}, {ev[-1]}]")
        if self.projector and self.projector_defect() > tol_proj:
            raise ValueError("density matrix flagged as projector but gamma^2 != gamma")


@dataclass(frozen=True)
class GapReport:
    """An interior spectral gap (a, b) with its midpoint chemical potential."""

    a: float
    b: float
    gap: float
    mu: float
    band_index: int  # number of eigenvalues at or below a

    def __post_init__(self):
        if not self.a < self.mu < self.b:
            raise ValueError(f"inconsistent gap report: a={self.a}, mu={self.mu}, b={self.b}")


@dataclass(frozen=True)
class DecayFit:
    """Least-squares exponential fit |entry| ~ amplitude * exp(-rate * distance)."""

    amplitude: float
    rate: float
    r_squared: float
    n_points: int


def eig_symmetric(m) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix."""
    a = as_matrix(m)
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > SYMMETRY_TOLERANCE * scale:
        raise ValueError("matrix is not symmetric")
    return np.linalg.eigh(a)


def spectral_projector(m, mu: float, gap_tolerance: float = GAP_TOLERANCE) -> DensityMatrix:
    """Orthogonal projector onto the spectral subspace below mu.

    Raises EigenvalueAtMu when mu is within gap_tolerance of an eigenvalue,
    which signals a closed gap or a resonant chemical potential.
    """
    evals, vecs = eig_symmetric(m)
    if float(np.min(np.abs(evals - mu))) <= gap_tolerance:
        raise EigenvalueAtMu(
            f"mu={mu} within {gap_tolerance} of the spectrum; gap closed or mu resonant"
        )
    k = int(np.searchsorted(evals, mu))
    occ = vecs[:, :k]
    g = occ @ occ.T
    return DensityMatrix(matrix=(g + g.T) / 2.0, projector=True)


def find_gap(eigenvalues, hint_mu: float | None = None, threshold: float = 1e-6) -> GapReport:
    """Largest interior gap of a sorted spectrum, or the gap containing hint_mu."""
    ev = np.sort(np.asarray(eigenvalues, dtype=float))
    if ev.size < 2:
        raise NoGap("need at least 2 eigenvalues to have an interior gap")
    diffs = np.diff(ev)
    if hint_mu is not None:
        inside = np.nonzero((ev[:-1] < hint_mu) & (hint_mu < ev[1:]))[0]
        if inside.size == 0:
            raise NoGap(f"hint mu={hint_mu} is not strictly inside any spectral interval")
        i = int(inside[0])
    else:
        i = int(np.argmax(diffs))
    a, b = float(ev[i]), float(ev[i + 1])
    if b - a < threshold:
        raise NoGap(f"largest interior gap {b - a} below threshold {threshold}")
    return GapReport(a=a, b=b, gap=b - a, mu=(a + b) / 2.0, band_index=i + 1)


def _fit_log_decay(distances: np.ndarray, magnitudes: np.ndarray, min_distance: int) -> DecayFit:
    mask = (distances >= min_distance) & (magnitudes > 1e-300)
    x = distances[mask].astype(float)
    y = np.log(magnitudes[mask])
    if x.size < 2 or np.ptp(x) == 0:
        return DecayFit(amplitude=0.0, rate=float("inf"), r_squared=float("nan"), n_points=int(x.size))
    design = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(
        amplitude=float(np.exp(coef[1])),
        rate=float(-coef[0]),
        r_squared=r2,
        n_points=int(x.size),
    )


def combes_thomas_probe(
    m,
    lam: complex,
    x: int,
    ys,
    min_distance: int = 5,
    singular_tolerance: float = 1e-8,
) -> DecayFit:
    """Fit the off-diagonal decay of the resolvent (M - lam)^-1 from site x.

    Computes |(delta_x, (M - lam)^-1 delta_y)| for every y in ys and fits
    log-magnitude against the lattice distance |x - y| by ordinary least
    squares, skipping the near field below min_distance.
    """
    a = as_matrix(m)
    n = a.shape[0]
    evals = np.linalg.eigvalsh(a)
    if float(np.min(np.abs(evals - lam))) < singular_tolerance:
        raise ResolventSingular(f"lambda={lam} within {singular_tolerance} of the spectrum")
    rhs = np.zeros(n, dtype=complex)
    rhs[x] = 1.0
    # (M - lam) is complex symmetric, so the solve gives row x of the inverse.
    col = np.linalg.solve(a - lam * np.eye(n), rhs)
    ys = np.asarray(list(ys), dtype=int)
    box = getattr(m, "box", None)
    if box is not None:
        coords = box.coordinates()
        dist = np.abs(coords[ys] - coords[x]).sum(axis=1)
    else:
        dist = np.abs(ys - x)
    return _fit_log_decay(dist, np.abs(col[ys]), min_distance)
