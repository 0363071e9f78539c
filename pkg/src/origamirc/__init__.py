"""Miura-ori bar-and-hinge dynamics used as a physical reservoir computer."""

from .backend import backend_name
from .errors import (ConfigError, DesignError, GeometryError, OrigamiError,
                     SimulationDiverged, TrainingError)
from .mesh import (ImperfectionSpec, Material, MiuraDesign, OrigamiMesh,
                   build_miura, dihedral_angle, dihedral_gradient,
                   mesh_from_json, mesh_to_json, perturb_vertices)
from .dynamics import (ActuationCommand, ReservoirTrace, SimConfig, SimState,
                       bend_forces, corner_pins, damping_forces,
                       mechanical_energy, rest_state, simulate, step,
                       stretch_forces, actuation_forces)
from .reservoir import (ReadoutWeights, RoleAssignment, TrainSpec,
                        assign_roles, closed_loop, failure_test, mse,
                        mse_per_channel, teacher_force, train_readout)
from .sweep import (EmulationProtocol, PatternProtocol, aligned_mse,
                    feedback_search, fraction_study, geometry_landscape,
                    perturbation_sweep, run_emulation, run_modulation,
                    run_pattern)
from .locomotion import (CrawlerDesign, build_crawler, crawler_config,
                         run_crawl, train_gait)

__version__ = "0.1.0"
