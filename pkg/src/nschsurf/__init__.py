"""Structure-preserving simulator for two-phase incompressible flow with a
soluble surfactant: a Navier-Stokes / double Cahn-Hilliard system on a 2D
MAC grid with no-slip walls.

Modules
-------
models        singular potentials, mobilities, entropies, coupling energy
regularize    degenerate-mobility regularization family (eps continuation)
grid          cell-centered scalars and staggered MAC velocities
operators     discrete gradients/divergences, Poisson solves, projections
stepper       the energy-stable semi-implicit time step and its audit
diagnostics   energy breakdown, entropy, mass laws, run ledger
continuation  vanishing-regularization runs and their entropy reports
config        plain-text configuration parsing and validation
scenarios     initial-state builders (uniform, spinodal, droplet, file)
io            binary field snapshots and run manifests
runner        end-to-end run orchestration
cli           the nsch-sim command line entry point
"""

__version__ = "0.1.0"

from .models import (
    ModelSpec, LogPotential, MobilityModel, EntropyModel, CouplingModel,
    Sigma1Model, HypothesisError, SingularArgumentError,
)
from .grid import Grid2D, ScalarField, StaggeredVelocity
from .stepper import (
    SimState, SolverConfig, StepFailure, StepError, step, chemical_potential,
)
from .diagnostics import total_energy, energy_audit, StepReport, mass_laws
from .regularize import build_regularization, regularized_spec
from .continuation import (
    ContinuationPlan, run_continuation, continuation_report,
    weak_flux_residuals,
)
from .config import RunConfig, ConfigError, load_config, dump_config
from .scenarios import make_scenario
from .runner import run
