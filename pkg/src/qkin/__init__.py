"""qkin: numerical toolkit for quantum kinetic equations.

Dispersion relations and free-propagator diagnostics, momentum-space grids,
quasifree-state utilities, the linear (random potential) and Uehling-Uhlenbeck
collision operators, transport solvers with diffusion-limit extraction, and a
desk-scale Anderson-model validator of the kinetic limit.
"""

__version__ = "0.1.0"

from .dispersion import (
    CONTINUUM_QUADRATIC,
    LATTICE_NN,
    PHONON_ACOUSTIC,
    PHONON_OPTICAL,
    DispersionModel,
    group_velocity,
    omega,
    propagator_decay,
)
from .grids import (
    Distribution,
    MomentumGrid,
    ShellWeights,
    WignerField,
    auto_smearing_width,
    energy_shell,
    integrate,
    moments,
    symmetrize,
)
from .quasifree import (
    CorrelationMatrix,
    quasifree_moment,
    ryser_permanent,
    thermal_distribution,
)

__all__ = [
    "CONTINUUM_QUADRATIC",
    "LATTICE_NN",
    "PHONON_ACOUSTIC",
    "PHONON_OPTICAL",
    "DispersionModel",
    "group_velocity",
    "omega",
    "propagator_decay",
    "Distribution",
    "MomentumGrid",
    "ShellWeights",
    "WignerField",
    "auto_smearing_width",
    "energy_shell",
    "integrate",
    "moments",
    "symmetrize",
    "CorrelationMatrix",
    "quasifree_moment",
    "ryser_permanent",
    "thermal_distribution",
]
