"""Exception hierarchy shared across the toolkit."""


class StyleprefError(Exception):
    """Base class for all toolkit errors."""


class ParseError(StyleprefError):
    """A file or request body could not be parsed."""


class ValidationError(StyleprefError):
    """Parsed data violates a type invariant."""


class ConfigError(StyleprefError):
    """A configuration value is out of its legal range."""


class DomainError(StyleprefError):
    """An operation's precondition on its input data is not met."""
