"""Simulator of stealthily undervolted Raspberry Pi cloud instances."""

__version__ = "0.1.0"
