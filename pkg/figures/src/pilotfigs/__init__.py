"""Figure regeneration for pilotbox run outputs.

Each figure type reads documented CSV schemas produced by the pilotbox CLI
and writes a deterministic PNG. The renderers never mutate their inputs;
rerunning with identical inputs and library versions reproduces identical
images.
"""

__version__ = "0.1.0"

from .render import FIGURE_IDS, FigureJob, render
from .schemas import SchemaError
