"""Joint communication, vehicle positioning, and environment sensing
simulator for pixelated cellular vehicular networks."""

from .scene import (RoiGeometry, GroundTruth, build_geometry, sample_scene,
                    save_scene, load_scene, QPSK, SPEED_OF_LIGHT,
                    ConfigurationError, DomainError)
from .channel import (ChannelSet, DopplerSpec, los_gain, build_vehicle_channel,
                      build_sensing_channel, build_channels, apply_doppler,
                      save_channel_cache, load_channel_cache)
from .measure import (MeasurementBatch, EffectiveSystem, synthesize,
                      symbol_system, scatter_system, stack_real, prune_columns)
from .gamp import (SymbolPrior, ScatterPrior, GampState, SolverDivergence,
                   denoise_symbol, denoise_scatter, gamp_solve, em_refine)
from .ao import (Estimate, ThresholdSchedule, AoOptions, run_ao, run_baseline,
                 power_ratio, error_decomposition, hard_decide)
from .harness import (ExperimentConfig, desk_config, full_config,
                      load_config, save_config, compute_metrics, run_sweep,
                      run_trial)

__version__ = "0.1.0"
