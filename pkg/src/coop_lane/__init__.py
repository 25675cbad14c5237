"""Cooperative lane changes on a two-lane road with minimal disruption of the fast lane."""

__version__ = "0.1.0"
