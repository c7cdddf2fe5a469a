"""Decoherence and relaxation modelling for Er3+ spins in CaWO4.

Submodules
----------
crystal      host lattice and 183W bath configurations
hamiltonian  electron-nuclear and nuclear-nuclear couplings
cce          cluster-correlation expansion of the Hahn echo
eseem        echo envelope modulation from nearby nuclei
analytic     closed-form linewidth, resonator and coupling models
relaxsim     Purcell-limited inversion recovery over a coupling distribution
fitkit       least-squares kernels shared by the modules above
cli          command-line entry point
"""

from . import analytic, cce, crystal, eseem, fitkit, hamiltonian, relaxsim
from .cce import CceSettings, CoherenceCurve, StructureError, simulate
from .crystal import BathConfiguration, BathSpec, LatticeSpec, build_bath
from .fitkit import AveragingModel, DecayFit, FitError, fit_exponential, fit_stretched
from .hamiltonian import FieldConfig, GTensor, NuclearSpecies

__version__ = "0.1.0"

__all__ = [
    "analytic", "cce", "crystal", "eseem", "fitkit", "hamiltonian", "relaxsim",
    "AveragingModel", "BathConfiguration", "BathSpec", "CceSettings", "CoherenceCurve",
    "DecayFit", "FieldConfig", "FitError", "GTensor", "LatticeSpec", "NuclearSpecies",
    "StructureError", "build_bath", "fit_exponential", "fit_stretched", "simulate",
]
