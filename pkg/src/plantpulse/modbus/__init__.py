"""Modbus RTU subset: frame codec, polling client, emulated register bank."""
