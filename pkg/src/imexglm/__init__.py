"""IMEX general linear methods for additive ODEs, singular perturbation problems
and index-1 DAEs."""
from .tableau import (GlmTableau, ImexGlmPair, Mode, TableauError, load_method, load_tableau,
                      parse_tableau, serialize_tableau, shipped_methods, stability_matrix,
                      stability_matrix_at_infinity, validate_class_of_interest)
from .problems import AdditiveProblem, ComponentProblem, builtin
from .stepper import ExternalState, NewtonConfig, integrate, step
from .starting import start
from .dae import dae_step
from .analysis import (epsilon_sweep, run_convergence_study, simulate_error_recurrence,
                       stiffness_sweep)

__version__ = "0.1.0"
