"""Exception taxonomy for the alignment engine.

Everything raised on purpose derives from KgalignError so the CLI can map
failures onto its exit-code contract: ConfigError and InputError subclasses
mean the user gave us something invalid (exit 1), anything else that escapes
is a runtime failure (exit 2).
"""

from __future__ import annotations


class KgalignError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(KgalignError):
    """Invalid configuration value, schema violation, or unusable option combination."""


class InputError(KgalignError):
    """Invalid user-supplied data (datasets, splits, artifacts)."""


# ---------------------------------------------------------------------------
# KG store


class MissingFileError(InputError):
    """A required dataset file does not exist."""


class MalformedLineError(InputError):
    """A dataset line violates the format contract.

    Carries the path and 1-based line number so the message pinpoints the
    offending line; parsing aborts on the first occurrence.
    """

    def __init__(self, path: str, line_no: int, reason: str) -> None:
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{path}:{line_no}: {reason}")


class DuplicateEntityIdError(InputError):
    """An entity identifier appears more than once where uniqueness is required."""


class UnknownEntityError(InputError):
    """A reference points at an entity id absent from the graph."""


class NotOneToOneError(InputError):
    """Seed alignments map some entity to more than one counterpart."""


class RatioSumError(ConfigError):
    """Split ratios do not sum to 1 within tolerance."""


class EmptySeedsError(InputError):
    """A split was requested over an empty seed alignment set."""


class EmbedderFailureError(KgalignError):
    """The injected name embedder failed while computing a hard split."""


# ---------------------------------------------------------------------------
# Verbalizer


class UnknownEntityTypeError(ConfigError):
    """Prompt construction got an entity type outside the configured list."""


class EmptyGenerationError(KgalignError):
    """The generation service returned empty text for a prompt."""


# ---------------------------------------------------------------------------
# Features / embedder


class EmptyTextError(InputError):
    """Feature extraction got an empty string."""


class DimensionMismatchError(KgalignError):
    """Vector dimensions disagree where they must match."""


class NonFiniteLossError(KgalignError):
    """Training produced a NaN or infinite loss."""


class EmptyTrainingSetError(InputError):
    """Training was requested with no training pairs."""


# ---------------------------------------------------------------------------
# Retrieval


class EmptyInputError(InputError):
    """An index build or query got no vectors."""


class EmptyPoolError(KgalignError):
    """Negative mining found an empty candidate pool after gold removal."""


# ---------------------------------------------------------------------------
# Reranker


class NonFiniteScoreError(KgalignError):
    """A pair scorer produced a NaN or infinite score."""


class MissingTextError(InputError):
    """Reranking needs a verbalized text that is not available for some entity."""


# ---------------------------------------------------------------------------
# Alignment decisions


class EmptyCandidateSetError(InputError):
    """A decision strategy got an empty collection of candidate sets."""


class NonFiniteMatrixError(InputError):
    """A similarity matrix contains NaN or infinite entries."""


# ---------------------------------------------------------------------------
# Evaluation


class EmptyGoldError(InputError):
    """Evaluation was requested against an empty gold standard."""


class KeyMismatchError(InputError):
    """Two reports or artifact sets cover different keys and cannot be compared."""


# ---------------------------------------------------------------------------
# Pipeline


class OutputDirLockedError(KgalignError):
    """Another run holds the output directory's lock file."""


class PipelineStageError(KgalignError):
    """A pipeline stage failed; carries the stage name, chains the cause."""

    def __init__(self, stage: str, cause: BaseException) -> None:
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {cause}")


# ---------------------------------------------------------------------------
# Services


class ServiceUnreachableError(KgalignError):
    """An external HTTP service could not be reached after retries."""


class ServiceErrorStatusError(KgalignError):
    """An external HTTP service answered with a non-success status."""

    def __init__(self, status: int, detail: str = "") -> None:
        self.status = status
        msg = f"service returned status {status}"
        if detail:
            msg = f"{msg}: {detail}"
        super().__init__(msg)
