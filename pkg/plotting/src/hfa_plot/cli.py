"""hfa-plot <recipe.json>: render one figure recipe to PNG and SVG."""

from __future__ import annotations

import argparse
import sys

from .recipes import FigureRecipe, RecipeError
from .render import render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hfa-plot", description="render a figure recipe from solver CSV output"
    )
    parser.add_argument("recipe", help="JSON recipe file")
    ns = parser.parse_args(argv)
    try:
        result = render(FigureRecipe.load(ns.recipe))
    except RecipeError as exc:
        print(f"hfa-plot: {exc}", file=sys.stderr)
        return 2
    print(result.png)
    print(result.svg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
