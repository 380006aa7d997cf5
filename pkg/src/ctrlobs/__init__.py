"""ctrlobs: verification and synthesis workbench for controllability,
observability and stabilization of parabolic and hyperbolic PDEs.

Submodules
----------
polyjet        exact polynomial calculus (the test-function algebra)
identities     pointwise weighted identity verification
pde            finite-difference forward/adjoint solvers
control        Kalman tests, HUM control synthesis, control geometry
observability  discrete observability and spectral-inequality constants
stabilization  damped-wave energy decay experiments
config         experiment configuration records and INI parsing
report         run reports, JSON/CSV emission
cli            experiment runner subcommands
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
