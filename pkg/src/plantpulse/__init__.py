"""plantpulse: a desk-scale, fully software plant telemetry stack.

Simulated industrial and embedded meters publish over MQTT to a
purpose-built broker; an ingest service validates and stores telemetry in
an append-only time-series store; an authenticated HTTP API serves tables,
ranges, and a live event stream.
"""

__version__ = "0.1.0"
