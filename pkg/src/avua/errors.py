"""Exception hierarchy shared across the package."""


class AvuaError(Exception):
    """Base class for all package errors."""


class ConfigError(AvuaError):
    """Invalid or missing configuration (CLI exit code 2)."""


# gateway
class NoScriptMatch(AvuaError):
    pass


class TransportError(AvuaError):
    pass


class DigestMiss(AvuaError):
    pass


class EmptyText(AvuaError, ValueError):
    pass


class IoFailure(AvuaError):
    pass


# policy / planner / reflection
class PolicyParseFailure(AvuaError):
    pass


class StepParseFailure(AvuaError):
    pass


class EvalParseFailure(AvuaError):
    pass


class JudgeParseFailure(AvuaError):
    pass


class EpisodeAbort(AvuaError):
    """Every trial of an episode ended without a parseable final answer."""


# sampler / toolbox
class InvalidRange(AvuaError, ValueError):
    pass


class DuplicateTool(AvuaError):
    pass


class UnknownTool(AvuaError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class AdapterFailure(AvuaError):
    pass


class ToolFatal(AvuaError):
    """Raised by an adapter when the trial cannot continue at all."""


# memory
class DimensionMismatch(AvuaError, ValueError):
    pass


# traces
class TraceCorrupt(AvuaError):
    pass
