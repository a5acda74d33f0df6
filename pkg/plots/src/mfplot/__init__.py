"""Figure generation from mean-field Langevin experiment reports.

A standalone batch tool: it reads the CSV traces and JSON summaries the
experiment CLI emits and renders decay, scaling and fixed-point figures.
No number on a figure is recomputed; every annotation traces to a CSV or
JSON field.
"""

__version__ = "0.1.0"
