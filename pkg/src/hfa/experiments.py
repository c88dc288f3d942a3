"""Seeded, ensemble-averaged experiment recipes emitting tabular results.

Every experiment is a deterministic function of its spec and base seed:
member seeds are derived by index, disorder comes from counter-based
streams, and aggregation is order-independent, so re-running a recipe
reproduces the table bit for bit.  Tables carry their full provenance in
metadata (spec echo, derived run id, column definitions).
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .errors import HfaError, MaxIterExceeded
from .model import (
    InteractionKernel,
    LatticeBox,
    PotentialField,
    build_hamiltonian,
    derived_seed,
    interaction_kernel_nnn,
)
from .multiscale import (
    calibrate_truncation_decay,
    good_box_check,
    hatted_hamiltonian,
    is_resonant,
)
from .scf import ScfConfig, ScfResult, solve_fixed_point, solve_oda, verify_solution
from .spectral import operator_norm

__all__ = [
    "ExperimentSpec",
    "ResultTable",
    "format_real",
    "thread_count",
    "solve_model",
    "convergence_experiment",
    "locality_experiment",
    "wegner_experiment",
    "localisation_experiment",
    "gap_closing_experiment",
    "periodic_sweep",
    "multiscale_probe",
    "verify_experiment",
    "eigenvector_position_stats",
    "GAP_SPACING_FACTOR",
]

#: a Fermi gap counts as surviving when it exceeds this multiple of the
#: median level spacing of the same spectrum.
GAP_SPACING_FACTOR = 10.0


@dataclass(frozen=True)
class ExperimentSpec:
    """Model and run parameters shared by all experiment recipes.

    mu is 'mid-gap' (track the linear model's gap by occupation count),
    'aufbau' (occupation from the filling rule) or a number (fixed chemical
    potential).  algorithm 'auto' runs the fixed-point solver and falls back
    to optimal damping when the iteration budget is exhausted.
    """

    xi: float = 1.0
    w: float = 1.0
    q: float = 2.0
    L: int = 500
    d: int = 1
    filling: str = "half"  # 'half' | 'quarter'
    mu: str | float = "mid-gap"
    samples: int = 100
    seed: int = 0
    algorithm: str = "auto"  # 'fixed_point' | 'oda' | 'auto'
    tol: float = 1e-10
    max_iter: int = 500

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError(f"ensemble size must be >= 1, got {self.samples}")
        for name in ("xi", "w", "q"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.filling not in ("half", "quarter"):
            raise ValueError(f"unknown filling rule {self.filling!r}")
        if self.algorithm not in ("fixed_point", "oda", "auto"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")

    def box(self) -> LatticeBox:
        return LatticeBox((int(self.L),) * int(self.d))

    def kernel(self) -> InteractionKernel:
        return interaction_kernel_nnn(self.q, d=self.d)

    def n_occupied(self) -> int:
        size = self.box().size
        return size // 4 if self.filling == "quarter" else size // 2

    def potential(self, member: int = 0) -> PotentialField:
        return PotentialField.sample(self.box(), self.xi, self.w, derived_seed(self.seed, member))

    def scf_config(self, algorithm: str | None = None) -> ScfConfig:
        algo = algorithm or ("fixed_point" if self.algorithm == "auto" else self.algorithm)
        if isinstance(self.mu, str):
            if self.mu == "mid-gap":
                policy = dict(mu_policy="mid_gap_linear")
            elif self.mu == "aufbau":
                policy = dict(mu_policy="aufbau", n_occupied=self.n_occupied())
            else:
                raise ValueError(f"unknown mu rule {self.mu!r}")
        else:
            policy = dict(mu_policy="fixed", mu=float(self.mu))
        return ScfConfig(tol=self.tol, max_iter=self.max_iter, algorithm=algo, **policy)


def solve_model(spec: ExperimentSpec, member: int = 0, potential: PotentialField | None = None) -> ScfResult:
    """Solve the mean-field problem for one disorder realisation of the spec."""
    pot = potential if potential is not None else spec.potential(member)
    h = build_hamiltonian(pot.box, pot)
    kernel = spec.kernel()
    if spec.algorithm == "oda":
        return solve_oda(h, kernel, spec.scf_config("oda"))
    if spec.algorithm == "fixed_point":
        return solve_fixed_point(h, kernel, spec.scf_config("fixed_point"))
    try:
        return solve_fixed_point(h, kernel, spec.scf_config("fixed_point"))
    except MaxIterExceeded:
        return solve_oda(h, kernel, spec.scf_config("oda"))


@dataclass(frozen=True)
class ResultTable:
    """Rectangular table of reals with a column schema and run provenance."""

    columns: tuple[str, ...]
    rows: np.ndarray  # (n_rows, n_columns) float64
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float).reshape(-1, len(self.columns))
        object.__setattr__(self, "rows", rows)

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.columns.index(name)]


def format_real(x: float) -> str:
    """17 significant digits: lossless round-trip for 64-bit floats."""
    return format(float(x), ".17g")


def thread_count() -> int:
    env = os.environ.get("HFA_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def ensemble_map(fn, n: int) -> list:
    """Evaluate fn(0..n-1), possibly in parallel; results stay index-ordered."""
    workers = min(thread_count(), n)
    if workers <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))


def _spec_echo(spec: ExperimentSpec) -> dict[str, str]:
    return {
        "xi": format_real(spec.xi),
        "w": format_real(spec.w),
        "q": format_real(spec.q),
        "L": str(spec.L),
        "d": str(spec.d),
        "filling": spec.filling,
        "mu": spec.mu if isinstance(spec.mu, str) else format_real(spec.mu),
        "samples": str(spec.samples),
        "seed": str(spec.seed),
        "algorithm": spec.algorithm,
        "tol": format_real(spec.tol),
        "max_iter": str(spec.max_iter),
    }


def _make_table(
    experiment: str,
    spec: ExperimentSpec,
    columns: tuple[str, ...],
    rows,
    column_docs: dict[str, str],
    extra: dict[str, str] | None = None,
) -> ResultTable:
    meta: dict[str, str] = {"artifact": f"hfa {__version__}", "experiment": experiment}
    meta.update(_spec_echo(spec))
    if extra:
        meta.update(extra)
    meta["columns"] = ",".join(columns)
    for name in columns:
        meta[f"col.{name}"] = column_docs.get(name, "")
    table = ResultTable(columns=columns, rows=rows, metadata=meta)
    digest = hashlib.sha256()
    for key, value in meta.items():
        digest.update(f"{key}={value}\n".encode())
    for row in table.rows:
        digest.update((",".join(format_real(v) for v in row) + "\n").encode())
    meta["run-id"] = digest.hexdigest()[:12]
    return table


def eigenvector_position_stats(vectors: np.ndarray, coords: np.ndarray):
    """Position standard deviation and inverse participation ratio per column.

    Each eigenvector psi defines the site distribution p(x) = |psi(x)|^2; the
    standard deviation is sqrt(sum_x p(x) |x - <x>|^2) with the mean taken per
    coordinate axis, and the IPR is sum_x p(x)^2.
    """
    p = vectors**2
    ipr = (p**2).sum(axis=0)
    variance = np.zeros(p.shape[1])
    for axis in range(coords.shape[1]):
        xa = coords[:, axis].astype(float)
        mean = xa @ p
        variance += (xa**2) @ p - mean**2
    return np.sqrt(np.clip(variance, 0.0, None)), ipr


def _fit_exponential(dist: np.ndarray, values: np.ndarray, min_distance: float, floor: float):
    """OLS fit log|values| ~ log(C) - rate * dist; returns (C, rate, r2, n)."""
    mask = (dist >= min_distance) & (np.abs(values) > floor)
    x = dist[mask].astype(float)
    y = np.log(np.abs(values[mask]))
    if x.size < 2 or np.ptp(x) == 0:
        return 0.0, float("inf"), float("nan"), int(x.size)
    design = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - design @ coef) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(np.exp(coef[1])), float(-coef[0]), r2, int(x.size)


def _loglinear_fit(residuals) -> tuple[float, float]:
    """Slope and R^2 of log(residual) against the iteration index."""
    r = np.asarray(residuals, dtype=float)
    keep = r > 0
    y = np.log(r[keep])
    x = np.arange(1.0, r.size + 1)[keep]
    if y.size < 2:
        return float("nan"), float("nan")
    design = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - design @ coef) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), r2


def convergence_experiment(spec: ExperimentSpec) -> ResultTable:
    """One solver run with its full trace: iteration, residual, energy."""
    result = solve_model(spec)
    trace = result.trace
    rows = [
        (i + 1, trace.residuals[i], trace.energies[i]) for i in range(len(trace))
    ]
    slope, r2 = _loglinear_fit(trace.residuals)
    return _make_table(
        "converge",
        spec,
        ("iteration", "residual", "energy"),
        rows,
        {
            "iteration": "map application count, starting at 1",
            "residual": "operator norm of the density-matrix update",
            "energy": "mean-field energy after the update",
        },
        extra={
            "converged": str(result.converged).lower(),
            "iterations": str(result.iterations),
            "mu-final": format_real(result.mu),
            "trace-final": format_real(result.gamma_min.trace),
            "log-residual-slope": format_real(slope),
            "log-residual-r2": format_real(r2),
        },
    )


def locality_experiment(
    spec: ExperimentSpec, site: int, amplitude: float, clip: bool = True
) -> ResultTable:
    """Density response to a dirac added to the potential at one site.

    Solves with and without the perturbation (same disorder realisation) and
    emits the per-site difference of the density diagonal, with an
    exponential fit of its decay away from the perturbed site.
    """
    pot = spec.potential()
    perturbed = pot.with_dirac(site, amplitude, clip=clip)
    base = solve_model(spec, potential=pot)
    shifted = solve_model(spec, potential=perturbed)
    delta = np.diag(shifted.gamma_min.matrix) - np.diag(base.gamma_min.matrix)
    coords = spec.box().coordinates()
    dist = np.abs(coords - coords[site]).sum(axis=1)
    amp, rate, r2, n_fit = _fit_exponential(dist, delta, min_distance=5.0, floor=1e-14)
    rows = np.column_stack([np.arange(spec.box().size, dtype=float), delta, dist.astype(float)])
    return _make_table(
        "locality",
        spec,
        ("x", "delta_density", "distance"),
        rows,
        {
            "x": "flat site index",
            "delta_density": "gamma'(x,x) - gamma(x,x)",
            "distance": "l1 distance from the perturbed site",
        },
        extra={
            "site": str(site),
            "amplitude": format_real(amplitude),
            "effective-amplitude": format_real(
                float(perturbed.v_omega[site] - pot.v_omega[site])
            ),
            "clipped": str(clip).lower(),
            "fit-amplitude": format_real(amp),
            "fit-rate": format_real(rate),
            "fit-r2": format_real(r2),
            "fit-points": str(n_fit),
            "sum-delta": format_real(float(delta.sum())),
            "max-abs-delta": format_real(float(np.max(np.abs(delta)))),
        },
    )


def _aic_against(xs: np.ndarray, ys: np.ndarray) -> float:
    design = np.vstack([xs, np.ones_like(xs)]).T
    coef, *_ = np.linalg.lstsq(design, ys, rcond=None)
    rss = float(np.sum((ys - design @ coef) ** 2))
    n = ys.size
    return float(n * np.log(max(rss, 1e-300) / n) + 2 * 2)


def wegner_experiment(spec: ExperimentSpec, lambda0: float, epsilons) -> ResultTable:
    """Ensemble-mean eigenvalue count of the mean-field operator in [lambda0, lambda0+eps].

    Solver failures skip the member and are counted in the metadata.  The
    metadata also reports AIC values for a linear and a square-root model of
    the mean count against eps.
    """
    epsilons = np.asarray(sorted(float(e) for e in epsilons))

    def member(i: int):
        try:
            result = solve_model(spec, member=i)
        except HfaError:
            return None
        evals = np.linalg.eigvalsh(result.h_min.matrix)
        return np.array(
            [np.count_nonzero((evals >= lambda0) & (evals <= lambda0 + e)) for e in epsilons],
            dtype=float,
        )

    outcomes = ensemble_map(member, spec.samples)
    counts = np.array([c for c in outcomes if c is not None])
    n_failed = sum(1 for c in outcomes if c is None)
    if counts.size == 0:
        raise MaxIterExceeded(f"all {spec.samples} ensemble members failed to converge")
    means = counts.mean(axis=0)
    stderr = counts.std(axis=0, ddof=1) / np.sqrt(counts.shape[0]) if counts.shape[0] > 1 else 0 * means
    rows = np.column_stack([epsilons, means, stderr])
    aic_linear = _aic_against(epsilons, means)
    aic_sqrt = _aic_against(np.sqrt(epsilons), means)
    return _make_table(
        "wegner",
        spec,
        ("epsilon", "mean_count", "stderr"),
        rows,
        {
            "epsilon": "interval width above lambda0",
            "mean_count": "ensemble mean of the eigenvalue count in [lambda0, lambda0+epsilon]",
            "stderr": "standard error of the mean over seeds",
        },
        extra={
            "lambda0": format_real(lambda0),
            "n-converged": str(counts.shape[0]),
            "n-failed": str(n_failed),
            "aic-linear": format_real(aic_linear),
            "aic-sqrt": format_real(aic_sqrt),
        },
    )


STDDEV_FORMULA = (
    "stddev = sqrt(sum_x |psi(x)|^2 |x - mean|^2), mean = sum_x |psi(x)|^2 x, "
    "per coordinate axis; ipr = sum_x |psi(x)|^4"
)


def localisation_experiment(spec: ExperimentSpec) -> ResultTable:
    """Position spread and IPR of every eigenvector of the mean-field operator."""
    result = solve_model(spec)
    evals, vecs = np.linalg.eigh(result.h_min.matrix)
    stddev, ipr = eigenvector_position_stats(vecs, spec.box().coordinates())
    size = spec.box().size
    rows = np.column_stack([evals, stddev, ipr])
    return _make_table(
        "localisation",
        spec,
        ("eigenvalue", "stddev", "ipr"),
        rows,
        {
            "eigenvalue": "eigenvalue of the mean-field operator, ascending",
            "stddev": "position standard deviation of the eigenvector",
            "ipr": "inverse participation ratio",
        },
        extra={
            "stddev-formula": STDDEV_FORMULA,
            "mu-final": format_real(result.mu),
            "median-stddev": format_real(float(np.median(stddev))),
            "uniform-stddev": format_real(float(np.sqrt((size * size - 1) / 12.0))),
        },
    )


#: the three strong-coupling scenarios: (xi, w, q, filling)
GAP_CLOSING_SCENARIOS = (
    (2.0, 3.0, 2.0, "half"),
    (2.0, 3.0, 7.0, "half"),
    (0.0, 4.0, 4.0, "quarter"),
)


def gap_closing_experiment(spec: ExperimentSpec, scenarios=GAP_CLOSING_SCENARIOS) -> ResultTable:
    """Optimal-damping runs at strong coupling, with localisation stats per scenario.

    Each scenario solves with the occupation fixed by its filling rule and
    reports, in the metadata: whether a spectral gap survives at the Fermi
    level (gap exceeding GAP_SPACING_FACTOR times the median level spacing),
    the Fermi level, whether the energy trace is non-increasing, the final
    fixed-point residual, and the delocalisation bump statistic (mean
    eigenvector stddev over the 21 levels centred at the Fermi index divided
    by the median stddev of the whole spectrum).
    """
    coords = spec.box().coordinates()
    rows = []
    extra: dict[str, str] = {"gap-rule": f"gap > {GAP_SPACING_FACTOR} * median level spacing"}
    for index, (xi, w, q, filling) in enumerate(scenarios):
        sub = replace(spec, xi=xi, w=w, q=q, filling=filling, mu="aufbau", algorithm="oda")
        tag = f"s{index}"
        extra[f"{tag}.params"] = f"xi={format_real(xi)} w={format_real(w)} q={format_real(q)} filling={filling}"
        try:
            result = solve_model(sub)
        except HfaError as exc:
            extra[f"{tag}.error"] = str(exc)
            continue
        evals, vecs = np.linalg.eigh(result.h_min.matrix)
        stddev, ipr = eigenvector_position_stats(vecs, coords)
        n_occ = sub.n_occupied()
        fermi_gap = float(evals[n_occ] - evals[n_occ - 1])
        spacing = float(np.median(np.diff(evals)))
        window = stddev[max(0, n_occ - 10) : n_occ + 11]
        bump = float(np.mean(window) / np.median(stddev))
        energies = np.asarray(result.trace.energies)
        monotone = bool(np.all(np.diff(energies) <= 1e-9 * np.maximum(1.0, np.abs(energies[:-1]))))
        report = verify_solution(result, build_hamiltonian(sub.box(), sub.potential()), sub.kernel(), n_rotations=0)
        for k in range(evals.size):
            rows.append((index, evals[k], stddev[k], ipr[k]))
        extra.update(
            {
                f"{tag}.converged": str(result.converged).lower(),
                f"{tag}.iterations": str(result.iterations),
                f"{tag}.mu": format_real(result.mu),
                f"{tag}.fermi-gap": format_real(fermi_gap),
                f"{tag}.median-spacing": format_real(spacing),
                f"{tag}.gap-flag": "gap" if fermi_gap > GAP_SPACING_FACTOR * spacing else "no-gap",
                f"{tag}.energy-monotone": str(monotone).lower(),
                f"{tag}.fixed-point-residual": format_real(report.fixed_point_residual),
                f"{tag}.deloc-bump": format_real(bump),
            }
        )
    return _make_table(
        "gap-closing",
        spec,
        ("scenario", "eigenvalue", "stddev", "ipr"),
        rows,
        {
            "scenario": "scenario index into the parameter list in the metadata",
            "eigenvalue": "eigenvalue of the mean-field operator",
            "stddev": "position standard deviation of the eigenvector",
            "ipr": "inverse participation ratio",
        },
        extra=extra,
    )


def periodic_sweep(spec: ExperimentSpec, xi_values) -> ResultTable:
    """Ensemble-mean eigenvector spread of the linear model against xi (q must be 0)."""
    if spec.q != 0:
        raise ValueError("the periodic sweep probes the linear model; set q = 0")
    coords = spec.box().coordinates()
    box = spec.box()
    xi_values = [float(v) for v in xi_values]

    def member_mean(xi: float, i: int) -> float:
        pot = PotentialField.sample(box, xi, spec.w, derived_seed(spec.seed, i))
        _, vecs = np.linalg.eigh(build_hamiltonian(box, pot).matrix)
        stddev, _ = eigenvector_position_stats(vecs, coords)
        return float(np.mean(stddev))

    rows = []
    for xi in xi_values:
        means = ensemble_map(lambda i: member_mean(xi, i), spec.samples)
        means = np.asarray(means)
        err = float(means.std(ddof=1) / np.sqrt(means.size)) if means.size > 1 else 0.0
        rows.append((xi, float(means.mean()), err))
    return _make_table(
        "sweep-periodic",
        spec,
        ("xi", "mean_stddev", "stderr"),
        rows,
        {
            "xi": "staggered potential amplitude",
            "mean_stddev": "ensemble mean of the per-run average eigenvector stddev",
            "stderr": "standard error over the ensemble",
        },
        extra={"stddev-formula": STDDEV_FORMULA},
    )


def multiscale_probe(
    spec: ExperimentSpec,
    radii=(5, 10, 15, 20),
    lambda0: float | None = None,
    zeta_box: float = 0.1,
) -> ResultTable:
    """Truncation-decay calibration plus box classifier verdicts per radius.

    Solves the full model once, then for every radius L builds the localised
    operator (disorder zeroed outside the 2L ball around the domain center),
    records the truncation error, and runs the resonance and decay
    classifiers at lambda0 (the final Fermi level when not given) using the
    decay constants fitted from the truncation errors.
    """
    pot = spec.potential()
    full = solve_model(spec, potential=pot)
    center = tuple(s // 2 for s in spec.box().shape)
    kernel = spec.kernel()
    config = spec.scf_config("oda" if spec.algorithm == "oda" else "fixed_point")
    calibration = calibrate_truncation_decay(full, pot, kernel, center, radii, config)
    lam = float(full.mu) if lambda0 is None else float(lambda0)
    rows = []
    for radius, error in zip(calibration.radii, calibration.errors):
        hatted = hatted_hamiltonian(center, radius, pot, kernel, config)
        verdict = is_resonant(lam, hatted, calibration.big_d, calibration.nu)
        if verdict.resonant:
            good = 0.0
        else:
            good = float(
                good_box_check(lam, hatted, zeta_box, calibration.big_d, calibration.nu).good
            )
        rows.append((radius, error, verdict.margin, float(verdict.resonant), good))
    return _make_table(
        "multiscale-probe",
        spec,
        ("radius", "truncation_error", "resonance_margin", "resonant", "good_box"),
        rows,
        {
            "radius": "box radius L (side 2L+1)",
            "truncation_error": "operator norm of (H_min)|box minus the localised operator",
            "resonance_margin": "distance of lambda to the local spectrum minus the resonance radius",
            "resonant": "1 when lambda is resonant for the box",
            "good_box": "1 when the border resolvent-decay check passes",
        },
        extra={
            "lambda0": format_real(lam),
            "zeta-box": format_real(zeta_box),
            "fitted-D": format_real(calibration.big_d),
            "fitted-nu": format_real(calibration.nu),
            "fit-r2": format_real(calibration.r_squared),
        },
    )


def verify_experiment(spec: ExperimentSpec) -> ResultTable:
    """Solve once and report the solution-quality metrics as a single row."""
    result = solve_model(spec)
    pot = spec.potential()
    report = verify_solution(result, build_hamiltonian(pot.box, pot), spec.kernel())
    columns = (
        "projector_defect",
        "commutator_norm",
        "commutator_relative",
        "fixed_point_residual",
        "trace",
        "trace_deviation",
        "mu",
        "gap",
        "min_rotation_delta",
        "energy",
    )
    row = (
        report.projector_defect,
        report.commutator_norm,
        report.commutator_relative,
        report.fixed_point_residual,
        report.trace,
        report.trace_deviation,
        report.mu,
        report.gap.gap if report.gap is not None else float("nan"),
        report.min_rotation_delta,
        result.energy,
    )
    return _make_table(
        "verify",
        spec,
        columns,
        [row],
        {name: "" for name in columns},
        extra={"converged": str(result.converged).lower()},
    )
