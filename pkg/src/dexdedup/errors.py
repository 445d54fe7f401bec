"""Exception hierarchy shared by every stage of the toolchain."""

from __future__ import annotations


class DexDedupError(Exception):
    """Base class; the CLI maps any subclass to a nonzero exit status."""


class MalformedDex(DexDedupError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (offset 0x{offset:x})"
        super().__init__(message)
        self.offset = offset


class MethodParseError(DexDedupError):
    pass


class BadApk(DexDedupError):
    pass


class NoDexEntries(DexDedupError):
    pass


class UnknownMnemonic(DexDedupError):
    def __init__(self, mnemonic: str, line: int | None = None):
        where = f" at line {line}" if line is not None else ""
        super().__init__(f"unknown mnemonic {mnemonic!r}{where}")
        self.mnemonic = mnemonic
        self.line = line


class MalformedSmali(DexDedupError):
    pass


class EmptyApp(DexDedupError):
    pass


class EmptyFingerprint(DexDedupError):
    pass


class DuplicateAppId(DexDedupError):
    pass


class EmptyCorpus(DexDedupError):
    pass


class MismatchedClusterSet(DexDedupError):
    pass


class NoManifest(DexDedupError):
    pass


class MalformedManifest(DexDedupError):
    pass


class WidthMismatch(DexDedupError):
    pass


class CsvParseError(DexDedupError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DegenerateLabels(DexDedupError):
    pass


class DegenerateLabelsWarning(UserWarning):
    pass


class TooFewSamples(DexDedupError):
    pass


class NoDuplicates(DexDedupError):
    pass


class MissingArtifact(DexDedupError):
    pass


class ConfigError(DexDedupError):
    pass


class StageError(DexDedupError):
    """Wraps a failure with the pipeline stage and input that caused it."""

    def __init__(self, stage: str, source: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed on {source}: {cause}")
        self.stage = stage
        self.source = source
        self.cause = cause
