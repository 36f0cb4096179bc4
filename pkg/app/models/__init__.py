"""
Domain models for StimLab
"""
from .analysis import PeriodSet, SpatialRmsMap, TrialMetrics
from .axon import Axon, AxonPool, DiameterDistribution, SpikeTrainSet
from .emg import ArtifactGroundTruth, EmgGridRecord, MuapTemplate, RecordLabel, SpatialPolicy
from .manifest import RunManifest, TrialEntry
from .muscle import CalibrationResult, Condition, ForceTrace, MotorUnit, TrialRecord
from .removal import HfRemovalParams, LfRemovalParams, RemovalReport
from .stats import AnalysisPlan, RepeatedMeasures, TestResult
from .stimulation import ChargeBalance, HfParams, LfParams, StimParams, StimProtocol, StimTrain

__all__ = [
    'PeriodSet', 'SpatialRmsMap', 'TrialMetrics',
    'Axon', 'AxonPool', 'DiameterDistribution', 'SpikeTrainSet',
    'ArtifactGroundTruth', 'EmgGridRecord', 'MuapTemplate', 'RecordLabel', 'SpatialPolicy',
    'RunManifest', 'TrialEntry',
    'CalibrationResult', 'Condition', 'ForceTrace', 'MotorUnit', 'TrialRecord',
    'HfRemovalParams', 'LfRemovalParams', 'RemovalReport',
    'AnalysisPlan', 'RepeatedMeasures', 'TestResult',
    'ChargeBalance', 'HfParams', 'LfParams', 'StimParams', 'StimProtocol', 'StimTrain',
]
