"""Numerics, signal model, solver engine and configuration for the symbiotic-radio designs."""
