"""CSV-to-image rendering; no physics is recomputed here.

Styling defaults: one series per input CSV (matplotlib default colour
cycle), circle markers of size 3 for lines, 6-point dots for scatters,
capped error bars, grid off, tight layout.  SVG output embeds text as text
(not paths) and uses a fixed hash salt and no date metadata so that
identical inputs render byte-identical files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .recipes import FigureRecipe, RecipeError

matplotlib.rcParams["svg.fonttype"] = "none"
matplotlib.rcParams["svg.hashsalt"] = "hfa-plot"


def load_table(path: str) -> tuple[list[str], np.ndarray, dict[str, str]]:
    """Read a '#'-metadata CSV written by the solver CLI."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise RecipeError(f"cannot read CSV {path}: {exc}") from exc
    metadata: dict[str, str] = {}
    header: list[str] | None = None
    rows: list[list[float]] = []
    for line in lines:
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line.lstrip("#").strip()
            key, _, value = body.partition("=")
            if key.strip():
                metadata[key.strip()] = value.strip()
            continue
        if header is None:
            header = [cell.strip() for cell in line.split(",")]
            continue
        rows.append([float(cell) for cell in line.split(",")])
    if header is None:
        raise RecipeError(f"{path}: no header row found")
    return header, np.asarray(rows, dtype=float).reshape(-1, len(header)), metadata


@dataclass(frozen=True)
class RenderResult:
    png: str
    svg: str
    xlabel: str
    ylabel: str
    x_scale: str
    y_scale: str
    n_series: int
    n_points: int


def _series(recipe: FigureRecipe, path: str):
    schema = recipe.schema()
    header, rows, _ = load_table(path)
    for column in schema.required:
        if column not in header:
            raise RecipeError(f"{path}: missing column {column!r} required by {recipe.figure}")
    if rows.shape[0] == 0:
        raise RecipeError(f"{path}: no data rows")
    scenario = recipe.scenario if recipe.scenario is not None else schema.scenario
    if scenario is not None:
        rows = rows[rows[:, header.index("scenario")] == scenario]
        if rows.shape[0] == 0:
            raise RecipeError(f"{path}: no rows for scenario {scenario}")
    x = rows[:, header.index(schema.x)]
    y = rows[:, header.index(schema.y)]
    yerr = rows[:, header.index(schema.yerr)] if schema.yerr else None
    if schema.absolute:
        y = np.abs(y)
    return x, y, yerr


def render(recipe: FigureRecipe) -> RenderResult:
    """Draw the recipe's figure and write PNG and SVG next to the output base."""
    schema = recipe.schema()
    x_scale = recipe.x_scale or schema.x_scale
    y_scale = recipe.y_scale or schema.y_scale
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    try:
        n_points = 0
        for path in recipe.inputs:
            x, y, yerr = _series(recipe, path)
            n_points += x.size
            label = os.path.splitext(os.path.basename(path))[0]
            if schema.kind == "line":
                keep = (y > 0) if y_scale == "log" else np.full(y.size, True)
                ax.plot(x[keep], y[keep], marker="o", markersize=3, linewidth=1.0, label=label)
            elif schema.kind == "scatter":
                ax.plot(x, y, linestyle="none", marker=".", markersize=6, label=label)
            elif schema.kind == "errorbar":
                ax.errorbar(x, y, yerr=yerr, marker="o", markersize=4, capsize=3, label=label)
        ax.set_xscale(x_scale)
        ax.set_yscale(y_scale)
        ax.set_xlabel(schema.x)
        ax.set_ylabel(schema.y)
        if recipe.title:
            ax.set_title(recipe.title)
        if len(recipe.inputs) > 1:
            ax.legend()
        fig.tight_layout()
        png, svg = recipe.output + ".png", recipe.output + ".svg"
        fig.savefig(png, metadata={"Software": "hfa-plot"})
        fig.savefig(svg, metadata={"Date": None})
    finally:
        plt.close(fig)
    return RenderResult(
        png=png,
        svg=svg,
        xlabel=schema.x,
        ylabel=schema.y,
        x_scale=x_scale,
        y_scale=y_scale,
        n_series=len(recipe.inputs),
        n_points=n_points,
    )
