"""Externally auditable data structures.

A verifiable log, a sparse Merkle map and their log-backed combination,
published as a data-devoid history of signed checkpoints that an external
auditor can check without ever seeing the stored entries.
"""

__version__ = "0.1.0"
