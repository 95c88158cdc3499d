"""Authenticated monitoring API over the telemetry store."""
