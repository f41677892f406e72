"""Error hierarchy. Every error carries a stable ``code`` used on the CLI error line."""


class CffeError(Exception):
    code = "CffeError"

    def __init__(self, message="", **context):
        super().__init__(message)
        self.message = message
        self.context = context

    def __str__(self):
        return self.message


# --- panel data ---
class MalformedCsv(CffeError):
    code = "MalformedCsv"

    def __init__(self, message, row=None, column=None):
        super().__init__(message, row=row, column=column)
        self.row = row
        self.column = column


class DuplicateKey(CffeError):
    code = "DuplicateKey"

    def __init__(self, country, year):
        super().__init__(f"duplicate (country, year) = ({country}, {year})", country=country, year=year)
        self.country = country
        self.year = year


class SchemaMismatch(CffeError):
    code = "SchemaMismatch"


class AdoptionOutOfRange(CffeError):
    code = "AdoptionOutOfRange"


class EmptyGroup(CffeError):
    code = "EmptyGroup"


class YearOutOfRange(CffeError):
    code = "YearOutOfRange"


class IoFailure(CffeError):
    code = "IoFailure"


# --- generator ---
class InvalidSpec(CffeError):
    code = "InvalidSpec"


class NoObservationsAtK(CffeError):
    code = "NoObservationsAtK"


# --- forest ---
class InsufficientData(CffeError):
    code = "InsufficientData"


class DimensionMismatch(CffeError):
    code = "DimensionMismatch"


class NoSplits(CffeError):
    code = "NoSplits"


class TooFewTrees(CffeError):
    code = "TooFewTrees"


# --- classic estimators ---
class RankDeficient(CffeError):
    code = "RankDeficient"

    def __init__(self, message, columns=()):
        super().__init__(message, columns=list(columns))
        self.columns = list(columns)


class TooFewClusters(CffeError):
    code = "TooFewClusters"


class NoNeverTreated(CffeError):
    code = "NoNeverTreated"


class NoPrePeriod(CffeError):
    code = "NoPrePeriod"


class NonConvergence(CffeError):
    code = "NonConvergence"


class WindowTooSparse(CffeError):
    code = "WindowTooSparse"


# --- inference ---
class SingleCluster(CffeError):
    code = "SingleCluster"


class TooFewValidReplicates(CffeError):
    code = "TooFewValidReplicates"


class FakeDateTooLate(CffeError):
    code = "FakeDateTooLate"


class AssignedCountryIsTreated(CffeError):
    code = "AssignedCountryIsTreated"


class TooFewTreated(CffeError):
    code = "TooFewTreated"


class NoPrePeriods(CffeError):
    code = "NoPrePeriods"


# --- aggregation ---
class EmptyHorizon(CffeError):
    code = "EmptyHorizon"


class GapInSupport(CffeError):
    code = "GapInSupport"


# --- dsge ---
class InvalidCalibration(CffeError):
    code = "InvalidCalibration"


class SingularSystem(CffeError):
    code = "SingularSystem"

    def __init__(self, message, pivot=None):
        super().__init__(message, pivot=pivot)
        self.pivot = pivot


class HorizonTooShort(CffeError):
    code = "HorizonTooShort"


class WindowExceedsHorizon(CffeError):
    code = "WindowExceedsHorizon"
