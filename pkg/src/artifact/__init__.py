"""Numerical toolkit for non-linear dependence in financial time series.

Submodules
----------
ingest
    Panel loading, Rogers-Satchell volatility, market-volatility removal.
depmeasure
    Empirical copulas, dependence coefficients, tail dependence.
elliptical
    Closed-form predictions for Gaussian, Student and log-normal ensembles.
gof_uni
    Classical and variance-weighted Kolmogorov-Smirnov laws.
gof_dep
    Goodness-of-fit laws for dependent samples.
selfcopula
    Log-normal volatility self-copula model.
recurrence
    Recurrence intervals, waiting times, sequences and records.
qarch
    Quadratic ARCH simulation, moments and calibration.
factor
    Non-Gaussian multi-factor model and Markowitz harness.
"""

__version__ = "0.1.0"
