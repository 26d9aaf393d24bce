"""
Core Module

This package contains the stateful orchestration classes of the simulator:
- SettingsManager: Loads, validates and saves experiment documents
- ClientController: Manages the client population and client-side round work
- FederationEngine: Runs the reputation-based and baseline training rounds
- ExperimentRunner: Runs repetitions, sweeps and reports, writes output files
"""

from .settings_manager import ExperimentConfig, SettingsManager
from .client_controller import ClientController
from .flare_engine import FederationEngine, RoundLog
from .experiment_runner import ExperimentRunner

__all__ = ['ExperimentConfig', 'SettingsManager', 'ClientController', 'FederationEngine', 'RoundLog',
           'ExperimentRunner']
