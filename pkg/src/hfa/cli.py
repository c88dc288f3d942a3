"""Command line: config parsing, experiment dispatch, CSV/JSON emission.

Output files start with '#'-prefixed metadata lines (full config echo, seed,
package version, column definitions, timestamp) followed by a header row and
the data rows, comma-separated with '.' decimals and LF endings; reals carry
17 significant digits so they round-trip losslessly.  Exit codes: 0 success,
1 solver failure (partial results are still written), 2 configuration error.
"""

from __future__ import annotations

import argparse
import difflib
import json
import sys
from dataclasses import dataclass, fields
from datetime import datetime, timezone

from . import __version__
from .errors import ConfigError, HfaError
from .experiments import (
    ExperimentSpec,
    ResultTable,
    convergence_experiment,
    format_real,
    gap_closing_experiment,
    localisation_experiment,
    locality_experiment,
    multiscale_probe,
    periodic_sweep,
    verify_experiment,
    wegner_experiment,
)

EXPERIMENTS = (
    "converge",
    "locality",
    "wegner",
    "localisation",
    "gap-closing",
    "sweep-periodic",
    "multiscale-probe",
    "verify",
)

DEFAULT_EPSILONS = (0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1)
DEFAULT_XI_VALUES = (0.0, 1.0, 2.0, 3.0, 4.0)
DEFAULT_BOX_RADII = (5, 10, 15, 20)


@dataclass
class RunConfig:
    """Validated, fully-defaulted run description (file keys = flag names)."""

    experiment: str
    xi: float = 1.0
    w: float = 1.0
    q: float = 2.0
    L: int = 500
    d: int = 1
    filling: str = "half"
    mu: str = "mid-gap"  # 'mid-gap' | 'aufbau' | a float literal
    seed: int = 0
    samples: int = 100
    tol: float = 1e-10
    max_iter: int = 500
    algorithm: str = "auto"
    output: str = "-"
    format: str = "csv"
    site: int = -1  # -1 means the middle site
    amplitude: float = 1.0
    lambda0: float = 2.0
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS
    xi_values: tuple[float, ...] = DEFAULT_XI_VALUES
    box_radii: tuple[int, ...] = DEFAULT_BOX_RADII
    zeta_box: float = 0.1

    def spec(self) -> ExperimentSpec:
        mu: str | float = self.mu
        if mu not in ("mid-gap", "aufbau"):
            mu = float(mu)
        return ExperimentSpec(
            xi=self.xi,
            w=self.w,
            q=self.q,
            L=self.L,
            d=self.d,
            filling=self.filling,
            mu=mu,
            samples=self.samples,
            seed=self.seed,
            algorithm=self.algorithm,
            tol=self.tol,
            max_iter=self.max_iter,
        )

    def to_file_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


_FIELD_PARSERS = {
    "experiment": str,
    "xi": float,
    "w": float,
    "q": float,
    "L": int,
    "d": int,
    "filling": str,
    "mu": str,
    "seed": int,
    "samples": int,
    "tol": float,
    "max_iter": int,
    "algorithm": str,
    "output": str,
    "format": str,
    "site": int,
    "amplitude": float,
    "lambda0": float,
    "epsilons": lambda s: tuple(float(v) for v in str(s).split(",") if v.strip()),
    "xi_values": lambda s: tuple(float(v) for v in str(s).split(",") if v.strip()),
    "box_radii": lambda s: tuple(int(v) for v in str(s).split(",") if v.strip()),
    "zeta_box": float,
}


def _read_config_file(path: str) -> dict[str, str]:
    try:
        text = open(path, encoding="utf-8").read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        for sep in ("=", ":"):
            if sep in line:
                key, _, value = line.partition(sep)
                entries[key.strip()] = value.strip()
                break
        else:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
    return entries


def _reject_unknown_key(key: str) -> None:
    if key == "zeta":
        raise ConfigError(
            "unknown config key 'zeta': use 'w' for the disorder width "
            "(and 'zeta_box' for the box decay rate)"
        )
    close = difflib.get_close_matches(key, _FIELD_PARSERS.keys(), n=1)
    hint = f"; did you mean {close[0]!r}?" if close else ""
    raise ConfigError(f"unknown config key {key!r}{hint}")


def _coerce(key: str, value) -> object:
    try:
        return _FIELD_PARSERS[key](value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value for {key!r}: {value!r} ({exc})") from exc


def parse_config(argv=None) -> RunConfig:
    """Merge defaults, config file and flag overrides; flags win over the file."""
    parser = _build_parser()
    ns = parser.parse_args(argv)
    merged: dict[str, object] = {}
    if ns.config:
        for key, value in _read_config_file(ns.config).items():
            if key not in _FIELD_PARSERS:
                _reject_unknown_key(key)
            merged[key] = _coerce(key, value)
    for key in _FIELD_PARSERS:
        flag_value = getattr(ns, key, None)
        if flag_value is not None:
            merged[key] = _coerce(key, flag_value)
    if "experiment" not in merged:
        raise ConfigError("missing required key 'experiment'")
    config = RunConfig(**merged)
    _validate(config)
    return config


def _validate(config: RunConfig) -> None:
    if config.experiment not in EXPERIMENTS:
        raise ConfigError(
            f"unknown experiment {config.experiment!r}; choose from {', '.join(EXPERIMENTS)}"
        )
    if config.format not in ("csv", "json"):
        raise ConfigError(f"unknown format {config.format!r}; use csv or json")
    if config.algorithm not in ("fixed_point", "oda", "auto"):
        raise ConfigError(f"unknown algorithm {config.algorithm!r}")
    if config.filling not in ("half", "quarter"):
        raise ConfigError(f"unknown filling {config.filling!r}; use half or quarter")
    if config.mu not in ("mid-gap", "aufbau"):
        try:
            float(config.mu)
        except ValueError:
            raise ConfigError(
                f"invalid mu {config.mu!r}: use 'mid-gap', 'aufbau' or a number"
            ) from None
    if config.samples < 1:
        raise ConfigError(f"samples must be >= 1, got {config.samples}")
    if config.L < 2:
        raise ConfigError(f"L must be >= 2, got {config.L}")
    if config.d < 1:
        raise ConfigError(f"d must be >= 1, got {config.d}")
    if config.tol <= 0:
        raise ConfigError(f"tol must be positive, got {config.tol}")
    if config.max_iter < 1:
        raise ConfigError(f"max_iter must be >= 1, got {config.max_iter}")
    if not config.epsilons:
        raise ConfigError("epsilons must not be empty")
    if not config.xi_values:
        raise ConfigError("xi_values must not be empty")
    if not config.box_radii:
        raise ConfigError("box_radii must not be empty")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hfa",
        description="mean-field solver and experiment runner for disordered lattice fermions",
    )
    parser.add_argument("--config", help="config file with flat 'key = value' lines")
    parser.add_argument("--experiment", choices=EXPERIMENTS)
    parser.add_argument("--xi", type=float, help="staggered potential amplitude")
    parser.add_argument("--w", type=float, help="disorder width (uniform on [0, w])")
    parser.add_argument("--q", type=float, help="interaction strength")
    parser.add_argument("--L", type=int, help="box side length")
    parser.add_argument("--d", type=int, help="lattice dimension")
    parser.add_argument("--filling", choices=("half", "quarter"))
    parser.add_argument("--mu", help="'mid-gap', 'aufbau' or a number")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--samples", type=int, help="ensemble size")
    parser.add_argument("--tol", type=float)
    parser.add_argument("--max-iter", dest="max_iter", type=int)
    parser.add_argument("--algorithm", choices=("fixed_point", "oda", "auto"))
    parser.add_argument("--output", help="output path, or - for stdout")
    parser.add_argument("--format", choices=("csv", "json"))
    parser.add_argument("--site", type=int, help="perturbation site (locality)")
    parser.add_argument("--amplitude", type=float, help="perturbation amplitude (locality)")
    parser.add_argument("--lambda0", type=float, help="window base energy (wegner, multiscale-probe)")
    parser.add_argument("--epsilons", help="comma-separated window widths (wegner)")
    parser.add_argument("--xi-values", dest="xi_values", help="comma-separated xi grid (sweep-periodic)")
    parser.add_argument("--box-radii", dest="box_radii", help="comma-separated radii (multiscale-probe)")
    parser.add_argument("--zeta-box", dest="zeta_box", type=float, help="decay rate for the good-box check")
    return parser


def write_csv(table: ResultTable, stream) -> None:
    for key, value in table.metadata.items():
        stream.write(f"# {key} = {value}\n")
    stream.write(f"# timestamp = {datetime.now(timezone.utc).isoformat()}\n")
    stream.write(",".join(table.columns) + "\n")
    for row in table.rows:
        stream.write(",".join(format_real(v) for v in row) + "\n")


def write_json(table: ResultTable, stream) -> None:
    payload = {
        "metadata": dict(table.metadata, timestamp=datetime.now(timezone.utc).isoformat()),
        "columns": list(table.columns),
        "rows": [[float(v) for v in row] for row in table.rows],
    }
    json.dump(payload, stream, indent=1)
    stream.write("\n")


def _dispatch(config: RunConfig) -> ResultTable:
    spec = config.spec()
    name = config.experiment
    if name == "converge":
        return convergence_experiment(spec)
    if name == "locality":
        site = config.site if config.site >= 0 else spec.box().size // 2
        return locality_experiment(spec, site=site, amplitude=config.amplitude)
    if name == "wegner":
        return wegner_experiment(spec, lambda0=config.lambda0, epsilons=config.epsilons)
    if name == "localisation":
        return localisation_experiment(spec)
    if name == "gap-closing":
        return gap_closing_experiment(spec)
    if name == "sweep-periodic":
        return periodic_sweep(spec, xi_values=config.xi_values)
    if name == "multiscale-probe":
        return multiscale_probe(spec, radii=config.box_radii, zeta_box=config.zeta_box)
    if name == "verify":
        return verify_experiment(spec)
    raise ConfigError(f"unknown experiment {name!r}")


def _failure_table(config: RunConfig, exc: HfaError) -> ResultTable:
    partial = getattr(exc, "result", None)
    metadata = {
        "artifact": f"hfa {__version__}",
        "experiment": config.experiment,
        "error": f"{type(exc).__name__}: {exc}",
    }
    if partial is not None:
        trace = partial.trace
        rows = [(i + 1, trace.residuals[i], trace.energies[i]) for i in range(len(trace))]
        return ResultTable(("iteration", "residual", "energy"), rows, metadata)
    return ResultTable(("iteration", "residual", "energy"), [], metadata)


def _emit(table: ResultTable, config: RunConfig) -> None:
    writer = write_json if config.format == "json" else write_csv
    if config.output in ("-", ""):
        writer(table, sys.stdout)
    else:
        with open(config.output, "w", encoding="utf-8", newline="\n") as fh:
            writer(table, fh)


def run(config: RunConfig) -> int:
    """Execute the configured experiment and write its table; exit-code contract."""
    try:
        table = _dispatch(config)
    except HfaError as exc:
        _emit(_failure_table(config, exc), config)
        print(f"hfa: solver failure: {exc}", file=sys.stderr)
        return 1
    _emit(table, config)
    return 0


def main(argv=None) -> int:
    try:
        config = parse_config(argv)
    except ConfigError as exc:
        print(f"hfa: config error: {exc}", file=sys.stderr)
        return 2
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
