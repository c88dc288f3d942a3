"""Figure recipes: which columns each figure consumes and how it is drawn.

A recipe names a figure id, one or more input CSV paths and an output base
path; the figure id fixes the column schema, the drawing style and the
default axis scales.  Recipes are loaded from small JSON files:

    {"figure": "fig1_convergence", "input": "converge.csv", "output": "fig1"}

Optional keys: "title", "x_scale", "y_scale" (override the defaults) and
"scenario" (row filter for the gap-closing figures).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field


class RecipeError(ValueError):
    """Bad recipe or schema mismatch; the message names the offending part."""


@dataclass(frozen=True)
class FigureSchema:
    x: str
    y: str
    required: tuple[str, ...]
    kind: str  # 'line' | 'scatter' | 'errorbar'
    x_scale: str = "linear"
    y_scale: str = "linear"
    yerr: str | None = None
    absolute: bool = False  # plot |y| (log-scale figures of signed data)
    scenario: int | None = None  # row filter on a 'scenario' column


FIGURES: dict[str, FigureSchema] = {
    "fig1_convergence": FigureSchema(
        x="iteration",
        y="residual",
        required=("iteration", "residual"),
        kind="line",
        y_scale="log",
    ),
    "fig2_locality": FigureSchema(
        x="x",
        y="delta_density",
        required=("x", "delta_density"),
        kind="line",
        y_scale="log",
        absolute=True,
    ),
    "fig3_wegner": FigureSchema(
        x="epsilon",
        y="mean_count",
        required=("epsilon", "mean_count", "stderr"),
        kind="errorbar",
        yerr="stderr",
    ),
    "fig4_localisation": FigureSchema(
        x="eigenvalue",
        y="stddev",
        required=("eigenvalue", "stddev"),
        kind="scatter",
    ),
    "fig5_gap_closing": FigureSchema(
        x="eigenvalue",
        y="stddev",
        required=("scenario", "eigenvalue", "stddev"),
        kind="scatter",
        scenario=0,
    ),
    "fig6_gap_closing": FigureSchema(
        x="eigenvalue",
        y="stddev",
        required=("scenario", "eigenvalue", "stddev"),
        kind="scatter",
        scenario=1,
    ),
    "fig7_gap_closing": FigureSchema(
        x="eigenvalue",
        y="stddev",
        required=("scenario", "eigenvalue", "stddev"),
        kind="scatter",
        scenario=2,
    ),
    "fig8_periodic_sweep": FigureSchema(
        x="xi",
        y="mean_stddev",
        required=("xi", "mean_stddev", "stderr"),
        kind="errorbar",
        yerr="stderr",
    ),
}


@dataclass(frozen=True)
class FigureRecipe:
    figure: str
    inputs: tuple[str, ...]
    output: str  # base path; .png and .svg are appended
    title: str | None = None
    x_scale: str | None = None
    y_scale: str | None = None
    scenario: int | None = None

    def schema(self) -> FigureSchema:
        return FIGURES[self.figure]

    @classmethod
    def from_dict(cls, data: dict) -> "FigureRecipe":
        unknown = set(data) - {"figure", "input", "output", "title", "x_scale", "y_scale", "scenario"}
        if unknown:
            raise RecipeError(f"unknown recipe keys: {', '.join(sorted(unknown))}")
        for key in ("figure", "input", "output"):
            if key not in data:
                raise RecipeError(f"recipe misses required key {key!r}")
        figure = data["figure"]
        if figure not in FIGURES:
            raise RecipeError(
                f"unknown figure id {figure!r}; choose from {', '.join(sorted(FIGURES))}"
            )
        raw = data["input"]
        inputs = tuple(raw) if isinstance(raw, (list, tuple)) else (str(raw),)
        if not inputs:
            raise RecipeError("recipe needs at least one input CSV")
        for scale_key in ("x_scale", "y_scale"):
            if data.get(scale_key) not in (None, "linear", "log"):
                raise RecipeError(f"{scale_key} must be 'linear' or 'log'")
        return cls(
            figure=figure,
            inputs=inputs,
            output=str(data["output"]),
            title=data.get("title"),
            x_scale=data.get("x_scale"),
            y_scale=data.get("y_scale"),
            scenario=data.get("scenario"),
        )

    @classmethod
    def load(cls, path: str) -> "FigureRecipe":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise RecipeError(f"cannot read recipe {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise RecipeError(f"recipe {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise RecipeError(f"recipe {path} must hold a JSON object")
        return cls.from_dict(data)
