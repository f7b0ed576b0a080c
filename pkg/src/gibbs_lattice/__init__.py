"""
Constrained Gibbs free energies of discrete gradient lattice models.

Modules
-------
lattice        regions, profiles, discretisation and interpolation
potentials     bond potential families and their hypothesis checks
hamiltonian    bond tables, energies and the zig-zag decomposition
sampler        constraint sets and the Metropolis engine
free_energy    quadrature and thermodynamic-integration estimators
homogenize     affine cell problems and the 1-D oracles
sbv_energy     jump detection and surface free-energy probes
verify         finite-ε inequality battery
cli            batch front-end
"""

__version__ = "0.1.0"

from .lattice import (AffineProfile, Box, DiscretizedField, Domain, LatticeRegion, Profile, discretize,
                      discrete_sobolev_seminorm, gradient, half_lattice_directions, interpolate,
                      reachable_sites)
from .potentials import DecayWeights, HypothesisReport, SBVPotential, SobolevPotential, validate
from .hamiltonian import HamiltonianSpec, energy, energy_delta, interior_vs_full_gap, zigzag_constant
from .sampler import ChainConfig, ConstraintSpec, inside_constraint, sample
from .free_energy import (FreeEnergyEstimate, FreeEnergyProblem, TIError, estimate_free_energy,
                          exact_free_energy, limit_scan, reference_free_energy_G, ti_free_energy)
from .homogenize import CellProblem, convolution_oracle_1d, f_hom_estimate, legendre_oracle_1d
from .sbv_energy import JumpDatum, discrete_sbv_norm, split_energy, surface_density_probe
from .verify import (CheckResult, check_free_energy_inequalities, check_measure_property, check_tightness,
                     check_zigzag, default_battery)
