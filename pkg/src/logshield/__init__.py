"""Deterministic simulator of deadline-bounded, permission-switch log
protection: two-domain memory views, timer-driven buffer protection, a
record-and-replay storage driver, an attested daemon with an authenticated
admin channel, and an attack harness with analytic oracles."""

__version__ = "0.1.0"
