"""Box diagnostics: restrictions, border couplings, localised operators.

These are the numerical counterparts of the box machinery used to propagate
resolvent-decay estimates across scales: restriction of an operator to an
l-infinity ball, the border operator coupling the ball to its exterior, the
geometric resolvent identity tying the two resolvents together, and the
localised mean-field operator obtained by solving the self-consistent
problem with the disorder zeroed outside a twice-larger ball.  Classifiers
for resonant and good boxes operate on the localised operator with the
coupling-perturbation ball folded into the resonance radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse

from .errors import HfaError, ResolventSingular, ResonantBox
from .model import (
    InteractionKernel,
    LatticeBox,
    PotentialField,
    as_matrix,
    build_hamiltonian,
    derived_seed,
)
from .scf import ScfConfig, ScfResult, solve
from .spectral import operator_norm

__all__ = [
    "Box",
    "restrict",
    "border_operator",
    "decompose",
    "geometric_resolvent_residual",
    "HattedHamiltonian",
    "hatted_hamiltonian",
    "resonance_threshold",
    "ResonanceVerdict",
    "is_resonant",
    "GoodBoxReport",
    "good_box_check",
    "good_box_probability",
    "GoodBoxEstimate",
    "calibrate_truncation_decay",
    "DecayCalibration",
]


@dataclass(frozen=True)
class Box:
    """l-infinity ball of the given radius around a center site, clipped to the domain."""

    domain: LatticeBox
    center: tuple[int, ...]
    radius: int

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))
        if len(self.center) != self.domain.dimension:
            raise ValueError("center dimensionality does not match the domain")
        if any(c < 0 or c >= s for c, s in zip(self.center, self.domain.shape)):
            raise ValueError(f"center {self.center} outside domain {self.domain.shape}")
        if self.radius < 0:
            raise ValueError(f"radius must be >= 0, got {self.radius}")

    def inside_mask(self) -> np.ndarray:
        coords = self.domain.coordinates()
        center = np.asarray(self.center)
        return np.max(np.abs(coords - center), axis=1) <= self.radius

    def member_indices(self) -> np.ndarray:
        return np.nonzero(self.inside_mask())[0]

    @property
    def size(self) -> int:
        return int(self.inside_mask().sum())

    def fits_in_domain(self) -> bool:
        """True when the ball is not clipped by the domain boundary."""
        return all(
            c - self.radius >= 0 and c + self.radius < s
            for c, s in zip(self.center, self.domain.shape)
        )


def restrict(k, box: Box) -> np.ndarray:
    """Submatrix of K over the box sites, indexed over the box only."""
    idx = box.member_indices()
    if idx.size == 0:
        raise ValueError("empty box")
    return as_matrix(k)[np.ix_(idx, idx)]


def border_operator(k, box: Box) -> sparse.csr_matrix:
    """Entries of K coupling the box to its exterior, zero elsewhere (ambient indexing)."""
    m = as_matrix(k)
    inside = box.inside_mask()
    straddle = inside[:, None] ^ inside[None, :]
    return sparse.csr_matrix(np.where(straddle, m, 0.0))


def decompose(k, box: Box) -> tuple[np.ndarray, sparse.csr_matrix, np.ndarray]:
    """Split K = K^in + Gamma + K^out entrywise (all ambient-indexed)."""
    m = as_matrix(k)
    inside = box.inside_mask()
    in_block = inside[:, None] & inside[None, :]
    out_block = ~inside[:, None] & ~inside[None, :]
    gamma = border_operator(k, box)
    return np.where(in_block, m, 0.0), gamma, np.where(out_block, m, 0.0)


def geometric_resolvent_residual(k, box: Box, lam: complex, x: int, y: int) -> float:
    """Defect of the geometric resolvent identity at entry (x, y), x in the box, y outside.

    The identity (a Schur-complement rearrangement) states

        (K - lam)^-1(x, y) = - sum_{u in B, v not in B}
                               (K^B - lam)^-1(x, u) Gamma(u, v) (K - lam)^-1(v, y)

    so the returned magnitude is zero in exact arithmetic.
    """
    m = as_matrix(k)
    n = m.shape[0]
    inside = box.inside_mask()
    if not inside[x]:
        raise ValueError(f"probe x={x} is not inside the box")
    if inside[y]:
        raise ValueError(f"probe y={y} is not outside the box")
    for spectrum_of in (m, restrict(k, box)):
        if float(np.min(np.abs(np.linalg.eigvalsh(spectrum_of) - lam))) < 1e-10:
            raise ResolventSingular(f"lambda={lam} too close to a spectrum")
    idx_in = box.member_indices()
    idx_out = np.nonzero(~inside)[0]
    col = np.linalg.solve(m - lam * np.eye(n), np.eye(n, dtype=complex)[:, y])
    sub = m[np.ix_(idx_in, idx_in)]
    x_local = int(np.searchsorted(idx_in, x))
    row = np.linalg.solve(
        sub - lam * np.eye(idx_in.size), np.eye(idx_in.size, dtype=complex)[:, x_local]
    )
    gamma_io = border_operator(k, box)[np.ix_(idx_in, idx_out)].toarray()
    return float(abs(col[x] + row @ gamma_io @ col[idx_out]))


@dataclass(frozen=True)
class HattedHamiltonian:
    """Mean-field operator with exterior disorder zeroed, restricted to a box."""

    box: Box
    matrix: np.ndarray  # restriction to the box, indexed over box members
    result: ScfResult  # the ambient solve with the localised potential

    @property
    def radius(self) -> int:
        return self.box.radius

    def spectrum(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)


def hatted_hamiltonian(
    center,
    radius: int,
    potential: PotentialField,
    kernel: InteractionKernel,
    config: ScfConfig = ScfConfig(),
) -> HattedHamiltonian:
    """Solve with the disorder replaced by 0 outside the twice-larger box.

    Zero lies in the support of the disorder distribution, so the localised
    potential is an admissible realisation; the result over the inner box is
    then independent of the true disorder outside the 2x ball.
    """
    domain = potential.box
    inner = Box(domain, tuple(center), int(radius))
    outer = Box(domain, tuple(center), 2 * int(radius))
    if not outer.fits_in_domain():
        raise ValueError(
            f"box of radius {2 * radius} around {tuple(center)} is clipped by the domain"
        )
    localised = potential.with_disorder_only_inside(outer.inside_mask())
    result = solve(build_hamiltonian(domain, localised), kernel, config)
    return HattedHamiltonian(box=inner, matrix=restrict(result.h_min, inner), result=result)


def resonance_threshold(radius: int, big_d: float, nu: float) -> float:
    """Resonance radius exp(-sqrt(L)) widened by the truncation ball 2 D exp(-nu L)."""
    return math.exp(-math.sqrt(radius)) + 2.0 * big_d * math.exp(-nu * radius)


@dataclass(frozen=True)
class ResonanceVerdict:
    resonant: bool
    distance: float  # d(lambda, spectrum of the localised operator)
    threshold: float
    margin: float  # distance - threshold; negative means resonant


def is_resonant(lam: float, hatted: HattedHamiltonian, big_d: float, nu: float) -> ResonanceVerdict:
    """Classify lam as resonant for the box when it is threshold-close to the spectrum."""
    distance = float(np.min(np.abs(hatted.spectrum() - lam)))
    threshold = resonance_threshold(hatted.radius, big_d, nu)
    return ResonanceVerdict(
        resonant=distance <= threshold,
        distance=distance,
        threshold=threshold,
        margin=distance - threshold,
    )


@dataclass(frozen=True)
class GoodBoxReport:
    good: bool
    n_probes: int
    worst_margin: float  # min over probes of bound - coupling sum
    margins: tuple[float, ...]


def good_box_check(
    lam: float,
    hatted: HattedHamiltonian,
    zeta_box: float,
    big_d: float,
    nu: float,
) -> GoodBoxReport:
    """Resolvent-decay check through the border of the box.

    For every probe x within sqrt(L) of the center and every exterior site y
    within interaction range of the box, requires

        sum_v |(H_hat - lam)^-1(x, v)| |Gamma(v, y)| <= exp(-zeta_box |y - x|).

    Raises ResonantBox when lam is resonant for the box (the resolvent bound
    would be meaningless there).
    """
    verdict = is_resonant(lam, hatted, big_d, nu)
    if verdict.resonant:
        raise ResonantBox(
            f"lambda={lam} resonant (distance {verdict.distance:.3e} "
            f"<= threshold {verdict.threshold:.3e})"
        )
    box = hatted.box
    domain = box.domain
    ambient = hatted.result.h_min
    idx_in = box.member_indices()
    coords = domain.coordinates()
    center = np.asarray(box.center)
    chebyshev = np.max(np.abs(coords - center), axis=1)
    reach = _interaction_range(hatted)
    probe_x = idx_in[
        np.max(np.abs(coords[idx_in] - center), axis=1) <= int(math.isqrt(box.radius))
    ]
    probe_y = np.nonzero((chebyshev > box.radius) & (chebyshev <= box.radius + reach))[0]
    resolvent = np.linalg.inv(hatted.matrix - lam * np.eye(idx_in.size))
    gamma = border_operator(ambient, box)
    local = np.searchsorted(idx_in, probe_x)
    margins = []
    for y in probe_y:
        coupling = np.abs(gamma.getcol(int(y)).toarray().ravel()[idx_in])
        if not np.any(coupling):
            continue
        sums = np.abs(resolvent) @ coupling
        dist = np.abs(coords[probe_x] - coords[y]).sum(axis=1)
        bound = np.exp(-zeta_box * dist)
        margins.extend(bound - sums[local])
    margins = np.asarray(margins, dtype=float)
    worst = float(margins.min()) if margins.size else float("inf")
    return GoodBoxReport(
        good=bool(margins.size == 0 or worst >= 0),
        n_probes=int(margins.size),
        worst_margin=worst,
        margins=tuple(float(v) for v in margins),
    )


def _interaction_range(hatted: HattedHamiltonian) -> int:
    # Hopping has range 1; the exchange term extends it to the kernel range.
    ambient = as_matrix(hatted.result.h_min)
    domain = hatted.box.domain
    dist = domain.l1_distances()
    nonzero = np.abs(ambient) > 1e-14
    np.fill_diagonal(nonzero, False)
    return int(dist[nonzero].max()) if nonzero.any() else 1


@dataclass(frozen=True)
class GoodBoxEstimate:
    estimate: float
    stderr: float
    n_samples: int
    n_failed: int  # solver failures, excluded from the frequency


def good_box_probability(
    lam: float,
    radius: int,
    zeta_box: float,
    n_samples: int,
    seed: int,
    xi: float,
    w: float,
    kernel: InteractionKernel,
    big_d: float,
    nu: float,
    config: ScfConfig | None = None,
) -> GoodBoxEstimate:
    """Monte Carlo frequency that two boxes 2L apart are both good (d=1).

    Draws fresh disorder per sample on a domain wide enough to hold the two
    2L-localisation balls disjointly, and reports the binomial standard
    error of the frequency.
    """
    if n_samples < 2:
        raise ValueError("need at least 2 samples for a frequency estimate")
    length = 8 * radius + 2
    domain = LatticeBox((length,))
    centers = ((2 * radius,), (6 * radius + 1,))
    if config is None:
        config = ScfConfig(mu_policy="aufbau", n_occupied=length // 2, algorithm="oda")
    hits, failed = [], 0
    for i in range(n_samples):
        pot = PotentialField.sample(domain, xi, w, derived_seed(seed, i))
        try:
            verdicts = []
            for center in centers:
                hatted = hatted_hamiltonian(center, radius, pot, kernel, config)
                try:
                    verdicts.append(good_box_check(lam, hatted, zeta_box, big_d, nu).good)
                except ResonantBox:
                    verdicts.append(False)
            hits.append(all(verdicts))
        except HfaError:
            failed += 1
    n_ok = len(hits)
    p = float(np.mean(hits)) if n_ok else float("nan")
    stderr = math.sqrt(p * (1 - p) / n_ok) if n_ok else float("nan")
    return GoodBoxEstimate(estimate=p, stderr=stderr, n_samples=n_ok, n_failed=failed)


@dataclass(frozen=True)
class DecayCalibration:
    """Fit of the truncation error |(H_min)|_B - H_hat| ~ D exp(-nu L)."""

    big_d: float
    nu: float
    r_squared: float
    radii: tuple[int, ...]
    errors: tuple[float, ...]


def calibrate_truncation_decay(
    full_result: ScfResult,
    potential: PotentialField,
    kernel: InteractionKernel,
    center,
    radii,
    config: ScfConfig = ScfConfig(),
) -> DecayCalibration:
    """Measure truncation errors over several radii and fit the decay constants."""
    errors = []
    for radius in radii:
        box = Box(potential.box, tuple(center), int(radius))
        hatted = hatted_hamiltonian(center, radius, potential, kernel, config)
        errors.append(operator_norm(restrict(full_result.h_min, box) - hatted.matrix))
    radii = tuple(int(r) for r in radii)
    x = np.asarray(radii, dtype=float)
    y = np.log(np.maximum(errors, 1e-300))
    design = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - design @ coef) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return DecayCalibration(
        big_d=float(np.exp(coef[1])),
        nu=float(-coef[0]),
        r_squared=r2,
        radii=radii,
        errors=tuple(float(e) for e in errors),
    )
