"""Render publication figures from solver CSV tables (pure CSV -> image)."""

__version__ = "0.1.0"

from .recipes import FIGURES, FigureRecipe, RecipeError
from .render import RenderResult, load_table, render
