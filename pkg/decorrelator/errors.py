"""Exception hierarchy shared by every pipeline stage.

Input problems subclass ValueError so callers that already catch ValueError
around user input keep working.
"""


class DecorrelatorError(Exception):
    """Base class for all errors raised by the toolchain."""


class LcfiSyntaxError(DecorrelatorError, ValueError):
    """Source text does not match the L_cfi grammar."""

    def __init__(self, message: str, line: int = 0, column: int = 0, filename: str = "<input>"):
        super().__init__(message)
        self.message = message
        self.line = line
        self.column = column
        self.filename = filename

    def __str__(self) -> str:
        return f"{self.filename}:{self.line}:{self.column}: {self.message}"


class ProgramError(DecorrelatorError, ValueError):
    """A parsed program violates one or more well-formedness rules."""

    def __init__(self, diagnostics: list):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(d.format() for d in self.diagnostics))


class ConfigError(DecorrelatorError, ValueError):
    pass


class LayoutError(DecorrelatorError, ValueError):
    pass


class CompileError(DecorrelatorError):
    pass


class IdSpaceExhausted(CompileError):
    """Every member of a congruence class below id_bound is already issued."""


class KeyMaterialError(DecorrelatorError, ValueError):
    pass


class ForeignIdError(DecorrelatorError, ValueError):
    """An obfuscated ID resolves outside the data section."""


class EvaluationError(DecorrelatorError):
    pass


class FuelExhausted(EvaluationError):
    pass


class TrustedMaterialUnavailable(DecorrelatorError):
    """Key file missing, unreadable, or its signature does not verify."""


class ListingSyntaxError(LcfiSyntaxError):
    """An obfuscated listing does not match the listing grammar."""
