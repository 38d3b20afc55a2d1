"""Battery state-of-health and remaining-useful-life toolkit.

Pipeline: battery-cycle CSV -> labelled, scaled feature matrix -> dense
network (or a linear / tree / forest baseline) -> metrics, grid search and
per-cycle capacity predictions.
"""

__version__ = "0.1.0"
