"""Maximum sampling interval certificates from noisy trajectory data."""
from .core import (Controller, DataRecord, InputError, LinearPlant, SamplingSchedule, BENCHMARK_GAIN,
                   build_data_matrices, build_lifted_matrices, load_matrix, load_plant, benchmark_plant)
from .harness import MsiReport, Verdict, load_config, make_engine, reproduce, run_msi, search_msi
from .multipliers import MultiplierClass
from .sim import NoiseSpec, falsify_msi, generate_data, simulate_closed_loop

__version__ = "0.1.0"

__all__ = [
    "Controller", "DataRecord", "InputError", "LinearPlant", "SamplingSchedule", "BENCHMARK_GAIN",
    "build_data_matrices", "build_lifted_matrices", "load_matrix", "load_plant", "benchmark_plant",
    "MsiReport", "Verdict", "load_config", "make_engine", "reproduce", "run_msi", "search_msi",
    "MultiplierClass", "NoiseSpec", "falsify_msi", "generate_data", "simulate_closed_loop",
]
