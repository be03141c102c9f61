"""Digital-twin side of the validation loop.

Modules:
- traces: time series types shared by every stage
- metrics: validation metrics comparing measured data with replicated predictions
- replication: replicated twin simulations and their per-sample summary
- validator: threshold calibration, verdicts and experiment delimiting
- estimation: Nelder-Mead parameter estimation that evolves the twin
"""
