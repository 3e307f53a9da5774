"""Blockchain-linked authorization for constrained IoT devices, simulated."""
from .harness import run, sweep, verify_dispute
from .scenario import (ScenarioConfig, ScenarioReport, run_model1, run_model2, run_model3,
                       run_model4, run_scenario)
from .tokens import BundleOptions, build_bundle, measure_reduction, parse_bundle

__all__ = [
    "BundleOptions", "ScenarioConfig", "ScenarioReport", "build_bundle", "measure_reduction",
    "parse_bundle", "run", "run_model1", "run_model2", "run_model3", "run_model4",
    "run_scenario", "sweep", "verify_dispute",
]
