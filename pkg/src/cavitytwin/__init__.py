"""Desk-scale digital twin of a single-atom cavity QED transit experiment.

The package splits into the physics core (params, steady, obse, tables),
the stochastic trajectory layer (transit), the measurement chain
(heterodyne), the analysis chain (dsp) and the CLI orchestration
(cli, manifest, plots).
"""

__version__ = "0.1.0"

from .params import (PhysicalParams, cooperativity, drive_amplitude,
                     empty_cavity_field, mode_coupling, params_hash,
                     saturation_photon_number)
from .steady import (HilbertConfig, Liouvillian, SteadyExpectations,
                     default_n_fock, expectations, propagate,
                     qrt_correlation_integral, steady_state,
                     validate_density_operator)
from .obse import (ObseParams, obse_field, obse_intensity_roots, obse_params,
                   semiclassical_field)
from .tables import (DiffusionCoefficients, SteadyTables, build_tables,
                     diffusion, load_tables, mean_force, save_tables,
                     tables_to_csv)
from .transit import (AtomState, AtomTrajectory, TransitConfig, derive_seed,
                      run_ensemble, run_transit, step, trajectory_to_ndjson)
from .heterodyne import (DriftModel, QuadratureTrace, calibrate_photon_number,
                         imbalance_efficiency, lo_excess_noise_fit, load_trace,
                         save_trace, synthesize)
from .dsp import (DetectionConfig, DiscriminationReport, PhasorSet,
                  SensitivityReport, TheoryCurves, TransitEvent,
                  detect_transits, discriminate, estimate_lo_phase,
                  phasor_points, rotate_quadratures, sensitivity_report,
                  theory_curves)
