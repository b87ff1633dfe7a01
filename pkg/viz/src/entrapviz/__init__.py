"""entrapviz: turn entrapsim trace.csv / summary.json files into figures.

Consumes only the published CSV/JSON contract; no linkage to the
simulator's internals.
"""

from .figures import FIGURE_KINDS, FigureSpec, MissingColumn, final_fraction_of_peak, load_trace, plot

__version__ = "0.1.0"
