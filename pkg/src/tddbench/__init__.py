"""Test-driven code generation harness.

Staged generation (prompt only, then prompt plus public tests, then a
remediation loop), sandboxed verification against test suites, and
category/improvement reporting under public and private test criteria.
"""

__version__ = "0.1.0"
