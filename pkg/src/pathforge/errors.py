"""Exception hierarchy.

Two roots matter to callers: :class:`ValidationError` (bad input, exit code 1
from the CLI) and :class:`ServiceError` (an external model call failed, exit
code 2).
"""

from __future__ import annotations


class PathforgeError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PathforgeError, ValueError):
    """Input violates a documented contract."""


class ServiceError(PathforgeError, RuntimeError):
    """An external service (LLM, judge) could not produce a usable reply."""


# graph
class MalformedFile(ValidationError):
    pass


class DanglingEdge(ValidationError):
    pass


class DuplicateNodeId(ValidationError):
    pass


class ConflictingKinds(ValidationError):
    pass


class EmptyGraph(ValidationError):
    pass


# vectors
class DimensionMismatch(ValidationError):
    pass


class ZeroVector(ValidationError):
    pass


# extraction / paths
class MalformedJson(ValidationError):
    pass


class UnknownSchemaKind(ValidationError):
    pass


class NoStarts(ValidationError):
    pass


class NoEnds(ValidationError):
    pass


# synthesis
class NoPaths(ValidationError):
    pass


class UnparseableResponse(ValidationError):
    pass


class GenerationFailed(ServiceError):
    pass


class JudgeFailed(ServiceError):
    pass


class JudgeOutOfRange(ServiceError):
    pass


# corpus
class EmptyChain(ValidationError):
    pass


class IoFailure(PathforgeError, OSError):
    pass


class MalformedRecord(ValidationError):
    pass


# rewards / grpo
class NotWellFormed(ValidationError):
    pass


class GroupTooSmall(ValidationError):
    pass


class NonFinite(ValidationError):
    pass


class BadConfig(ValidationError):
    pass


# metrics
class EmptyReference(ValidationError):
    pass


# transport
class TransportError(ServiceError):
    pass


class RequestTimeout(ServiceError):
    pass


class MalformedReply(ServiceError):
    pass


class UnknownCommand(ValidationError):
    pass
