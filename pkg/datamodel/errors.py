from typing import Optional


class ContractError(ValueError):
    """Raised when an input violates a shape, dimension or label contract."""
    pass


class ManifestParseError(ValueError):
    """Raised when a manifest or query-list line does not match the schema.

    `line_no` is 1-based and counts the schema header as line 1.
    """

    def __init__(self, message: str, line_no: Optional[int] = None, path: Optional[str] = None):
        self.line_no = line_no
        self.path = path
        location = f"{path or '<manifest>'}:{line_no}" if line_no is not None else (path or "<manifest>")
        super().__init__(f"{location}: {message}")


class IntegrityError(ValueError):
    """Raised when a train/test manifest pair shares vehicle identities."""

    def __init__(self, message: str, shared_identities=None):
        self.shared_identities = sorted(shared_identities or [])
        super().__init__(message)
