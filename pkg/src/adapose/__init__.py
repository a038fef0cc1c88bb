"""Mapping-consistency domain adaptation for WiFi-CSI pose regression."""

__version__ = "0.1.0"
