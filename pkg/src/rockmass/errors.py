"""Exception hierarchy.

Every error carries an ``exit_code`` used by the CLI: 2 for configuration
problems, 3 for bad input data, 4 for runtime failures.
"""

from __future__ import annotations


class RockmassError(Exception):
    exit_code = 4


class ConfigError(RockmassError, ValueError):
    exit_code = 2


class DataError(RockmassError, ValueError):
    exit_code = 3


class RuntimeFailure(RockmassError, RuntimeError):
    exit_code = 4


# dataset
class MissingColumn(DataError):
    def __init__(self, name: str):
        super().__init__(f"missing required column {name!r}")
        self.name = name


class BadValue(DataError):
    def __init__(self, row: int, column: str, detail: str = ""):
        msg = f"bad value at row {row}, column {column!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.row = row
        self.column = column


class OrphanHole(DataError):
    def __init__(self, round_id: str):
        super().__init__(f"drillhole references unknown round {round_id!r}")
        self.round_id = round_id


# qsystem
class NonPositiveComponent(DataError):
    pass


class OutOfRange(DataError):
    pass


class UnknownScheme(ConfigError):
    pass


class UnsortedInput(DataError):
    pass


# features
class EmptySection(DataError):
    def __init__(self, section_index: int, round_id: str | None = None):
        where = f" of round {round_id!r}" if round_id is not None else ""
        super().__init__(f"no readings in section {section_index}{where}")
        self.section_index = section_index
        self.round_id = round_id


class EmptyInput(DataError):
    pass


class UnknownKind(ConfigError):
    pass


class WindowTooLarge(ConfigError):
    pass


# preprocess
class TooFewSamples(DataError):
    def __init__(self, label, count: int, needed: int = 2):
        super().__init__(f"class {label!r} has {count} samples, need at least {needed}")
        self.label = label
        self.count = count


class BadContamination(ConfigError):
    pass


class NotFitted(RuntimeFailure):
    pass


# models
class BadHyperparameter(ConfigError):
    pass


class DegenerateTraining(DataError):
    pass


class FeatureContractMismatch(DataError):
    pass


class HeterogeneousRoster(ConfigError):
    pass


class EmptyEnsemble(ConfigError):
    pass


class VersionMismatch(DataError):
    pass


class CorruptDocument(DataError):
    pass


# evaluation
class ClassTooSmall(DataError):
    pass


class EmptyMatrix(DataError):
    pass


class UnknownLabel(DataError):
    pass


class SingleClassTruth(DataError):
    pass


class DegenerateVariance(DataError):
    pass


class DegeneratePredictions(DataError):
    pass


class EmptySubset(DataError):
    pass


# tuning / synth
class EvaluatorFailure(RuntimeFailure):
    pass


class BadSpec(ConfigError):
    pass


class NotSynthetic(DataError):
    pass


class DegenerateFeatureWarning(UserWarning):
    pass


class ConstantColumnWarning(UserWarning):
    pass
