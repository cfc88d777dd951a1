"""Exception hierarchy. Each category maps to a CLI exit code."""


class AdvDialogError(Exception):
    exit_code = 1


class ConfigError(AdvDialogError):
    exit_code = 2


class DataError(AdvDialogError):
    exit_code = 3


class NumericError(AdvDialogError):
    exit_code = 4


class DimensionError(NumericError, ValueError):
    pass


class OntologyError(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class CorpusError(DataError):
    """Malformed corpus record. ``kind`` names the failure category."""

    def __init__(self, message, kind="schema", line=None, dialog_id=None, turn=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if dialog_id is not None:
            where.append(f"dialog {dialog_id!r}")
        if turn is not None:
            where.append(f"turn {turn}")
        prefix = f"[{kind}] " + (", ".join(where) + ": " if where else "")
        super().__init__(prefix + message)
        self.kind = kind
        self.line = line
        self.dialog_id = dialog_id
        self.turn = turn


class CheckpointError(DataError):
    pass


class FingerprintError(CheckpointError):
    pass


class IntegrityError(CheckpointError):
    pass


EXIT_CODES = {
    "ok": 0,
    "unexpected": 1,
    "config": ConfigError.exit_code,
    "data": DataError.exit_code,
    "numeric": NumericError.exit_code,
}
