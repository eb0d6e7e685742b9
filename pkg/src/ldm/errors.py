"""Exception types shared across the LDM service.

Every error carries a stable machine-readable ``code`` and the HTTP status the
API layer reports it with.
"""

from __future__ import annotations


class LdmError(Exception):
    code = "ldm_error"
    http_status = 400

    def __init__(self, message: str = "") -> None:
        super().__init__(message or self.code)
        self.message = message or self.code


class ValidationError(LdmError, ValueError):
    code = "validation_error"
    http_status = 422


class DegeneratePolygon(ValidationError):
    code = "degenerate_polygon"


class FutureTimestamp(ValidationError):
    code = "future_timestamp"


class NoPosition(ValidationError):
    code = "no_position"


class DetectorFailure(LdmError):
    code = "detector_failure"
    http_status = 422


class InvalidToken(LdmError):
    code = "invalid_token"
    http_status = 401


class DuplicateDevice(LdmError):
    code = "duplicate_device"
    http_status = 409


class StaleUpdate(LdmError):
    code = "stale_update"
    http_status = 409


class NotFound(LdmError, KeyError):
    code = "not_found"
    http_status = 404

    def __str__(self) -> str:
        return self.message


class UnknownDevice(NotFound):
    code = "unknown_device"


class UnknownObject(NotFound):
    code = "unknown_object"


class UnknownRun(NotFound):
    code = "unknown_run"


class FrameMismatch(LdmError):
    code = "frame_mismatch"
    http_status = 400


class MalformedLog(LdmError):
    code = "malformed_log"
    http_status = 400
