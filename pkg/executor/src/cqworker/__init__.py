"""Isolated CadQuery program executor with a line-JSON wire protocol."""

__version__ = "0.1.0"

PROTO_VERSION = 1
DEFAULT_TIMEOUT = 30.0
MAX_TIMEOUT = 300.0
DEFAULT_TOLERANCE = 0.1  # linear deflection, model units; pinned for reproducible CD
STDERR_EXCERPT_LIMIT = 400
