"""Render publication-style figures from origamirc data files."""

from .io import SchemaError
from .render import FIGURE_KINDS, FigureJob, render

__version__ = "0.1.0"

__all__ = ["FIGURE_KINDS", "FigureJob", "SchemaError", "render"]
