"""Telemetry ingestion: payload validation, durable store, MQTT subscriber."""
