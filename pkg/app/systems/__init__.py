"""Design systems: the information-decoupled system and its baselines.

Every module here exposes a ``System`` class; see ``app.core.system_interface``.
"""
