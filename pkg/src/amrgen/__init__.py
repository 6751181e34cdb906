"""AMR-to-text structural encoding at desk scale: PENMAN graphs, the three
input representations, sequential/tree/graph encoders and their stackings,
an attentional decoder with a minimal reverse-mode autodiff engine, and the
evaluation harness."""

__version__ = "0.1.0"
