"""Config-level TLS posture extraction and quantum-readiness auditing.

The pipeline runs ingest -> parse -> normalize -> classify -> evaluate,
with every normalized value traceable to the directive that produced it.
"""

__version__ = "0.1.0"

SCHEMA_VERSION = "1"
