"""Shared error taxonomy.

Every domain error carries a stable machine-readable ``code`` so the CLI
can emit structured errors and map them to exit status 1.
"""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for all domain errors raised by this package."""

    code = "PIPELINE_ERROR"

    def to_json_dict(self) -> dict:
        return {"error": self.code, "message": str(self)}


class IOFailure(PipelineError):
    code = "IO_FAILURE"


class FormatError(PipelineError):
    code = "FORMAT_ERROR"
