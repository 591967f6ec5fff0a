"""EV charging-session profiling toolkit.

Pipeline stages: ingest charging sessions, smooth the current signal,
split each session into its CV-phase tail and CC-phase delta series,
extract a fixed statistical feature catalog, and run classification
experiments (one-vs-all balancing sweeps, multi-class scaling,
distribution-shaped sub-sampling) with from-scratch classifiers.
"""

__version__ = "0.1.0"
