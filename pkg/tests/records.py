"""Measured values from the acceptance runs, echoed in the pytest terminal summary."""

MEASURED: dict = {}


def record(key: str, value) -> None:
    MEASURED[key] = value
