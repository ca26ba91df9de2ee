"""Coupled Darcy flow / miscible transport on adaptive quadtree meshes.

Enriched bilinear elements (continuous vertices plus one constant per cell),
interior-penalty pressure solves with conservative flux recovery, upwinded
transport with entropy-viscosity stabilization, and residual-driven mesh
adaptation.
"""

from .mesh import (AdaptBounds, AdaptReport, MeshError, QuadMesh,
                   build_uniform)
from .egspace import (AssemblyContext, EGDofMap, QuadratureRule, build_dofmap,
                      dof_count, eval_grad, eval_point, face_jump_avg,
                      gauss_cell, gauss_face, interpolate)
from .linalg import (BlockILU, BlockPartition, GmresResult, SolverError,
                     block_diag_precondition, gmres, scatter_csr)
from .physics import (DispersionParams, PermeabilityField, ViscosityModel,
                      dispersion_tensor, draw_centers, mix_viscosity,
                      mobility, peclet, random_permeability,
                      single_vortex_velocity)
from .flow import (FaceFlux, FlowBC, FlowParams, assemble_pressure,
                   bdf_apply, bdf_coefficients, flux_from_velocity,
                   local_conservation_residual, reconstruct_flux,
                   solve_reduced, weights)
from .transport import (SourceField, TransportBC, TransportParams,
                        assemble_transport, solve_transport, source_split,
                        upwind_value)
from .stabilization import (EntropyConfig, IndicatorField, ViscosityField,
                            entropy_eval, extrapolate_star, indicator,
                            viscosity)
from .amr import FieldState, MarkingPolicy, Marks, adapt_and_transfer, mark
from .driver import (ConfigError, RunResult, ScenarioConfig, SCENARIOS,
                     finger_diagnostics, load_config_file, make_config, run,
                     tip_profile, write_csv, write_vtk)

__version__ = "0.1.0"
