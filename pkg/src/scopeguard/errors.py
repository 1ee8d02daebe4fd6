"""Exception hierarchy. Each module raises its own subclass of ScopeGuardError."""

from __future__ import annotations

from typing import Optional


class ScopeGuardError(Exception):
    pass


# domain
class InvalidIdentifier(ScopeGuardError, ValueError):
    pass


class LabelInvariantError(ScopeGuardError, ValueError):
    pass


# gateway
class GatewayError(ScopeGuardError):
    pass


class GatewayUnavailable(GatewayError):
    pass


class EmptyCompletion(GatewayError):
    pass


class CassetteMiss(GatewayError):
    pass


# matchers
class MatcherError(ScopeGuardError):
    pass


class IdealDescriptionParseError(MatcherError):
    def __init__(self, raw: str):
        super().__init__("completion has no <tool_assistant> block")
        self.raw = raw


class DimensionMismatch(MatcherError, ValueError):
    pass


class ZeroVector(MatcherError, ValueError):
    pass


class ToolNotRegistered(MatcherError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class UnsupportedTaskArity(MatcherError):
    pass


class MatcherIndecision(MatcherError):
    pass


class CalibrationUnderdetermined(MatcherError):
    pass


# pipeline
class PipelineError(ScopeGuardError):
    pass


class ManifestParseError(PipelineError):
    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        where = f"{path or '<manifest>'}:{line}" if line is not None else (path or "<manifest>")
        super().__init__(f"{where}: {message}")
        self.line = line
        self.path = path


class InsufficientTools(PipelineError):
    pass


class TaskGenerationIncomplete(PipelineError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"expected {expected} tasks, parsed {got} (short by {expected - got})")
        self.expected = expected
        self.got = got
        self.shortfall = expected - got


class NullSamplingImpossible(PipelineError):
    pass


class CorpusSchemaError(PipelineError):
    pass


class SplitImpossible(PipelineError):
    pass


# evaluation
class UnsupportedFormat(ScopeGuardError, ValueError):
    pass


# protocol
class UnsupportedChallengeMethod(ScopeGuardError, ValueError):
    pass


class OAuthError(ScopeGuardError):
    """An error that maps onto an OAuth error code in an HTTP response."""

    status_code = 400

    def __init__(self, error: str, detail: str = "", status_code: Optional[int] = None):
        super().__init__(detail or error)
        self.error = error
        self.detail = detail
        if status_code is not None:
            self.status_code = status_code


class InvalidGrant(OAuthError):
    def __init__(self, detail: str = ""):
        super().__init__("invalid_grant", detail)


class InvalidToken(OAuthError):
    status_code = 401

    def __init__(self, detail: str = ""):
        super().__init__("invalid_token", detail)


class EmptyPrompt(ScopeGuardError, ValueError):
    pass


class UnknownRequest(OAuthError):
    status_code = 404

    def __init__(self, detail: str = ""):
        super().__init__("unknown_request", detail)


class UpstreamError(OAuthError):
    status_code = 502

    def __init__(self, status_code: int, detail: str = ""):
        super().__init__("upstream_error", detail, status_code)
