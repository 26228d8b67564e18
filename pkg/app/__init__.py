"""Minimum-power beamforming and RIS phase design for information-decoupled symbiotic radio."""
