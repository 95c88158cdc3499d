"""Simulated plant devices: waveform meter, environment sensor, meter bridge."""
