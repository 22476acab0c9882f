"""Adapter failure modes, all mapped to a nonzero exit by the CLI."""


class AdapterError(Exception):
    """Base for everything this package raises deliberately."""


class StageSchemaError(AdapterError):
    """A stage file does not conform to the row schema."""
