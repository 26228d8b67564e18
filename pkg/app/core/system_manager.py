"""System discovery and dispatch."""
from __future__ import annotations

import importlib
import logging
import pkgutil
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from app.core.system_interface import DesignSystem, SystemKind

log = logging.getLogger(__name__)


class SystemManager:
    """Discover, load, and look up design systems by name."""

    def __init__(
        self,
        systems_package: str = "app.systems",
        systems_path: Optional[Path] = None,
        enabled_systems: Optional[Sequence[str]] = None,
    ) -> None:
        self.systems_package = systems_package
        self.systems_path = systems_path or Path(__file__).resolve().parent.parent / "systems"
        self.enabled_systems = list(enabled_systems) if enabled_systems else None
        self.systems: Dict[str, DesignSystem] = {}

    # ------------------------------------------------------------------
    # Discovery & loading
    # ------------------------------------------------------------------
    def discover_available_systems(self) -> List[str]:
        """Return all module names available in app.systems."""
        names: List[str] = []
        if not self.systems_path.exists():
            return names
        for module_info in pkgutil.iter_modules([str(self.systems_path)]):
            if module_info.name.startswith("_"):
                continue
            names.append(module_info.name)
        return sorted(names)

    def load_systems(self) -> "SystemManager":
        for module_name in self.discover_available_systems():
            instance = self._load_single_system(module_name)
            if instance is not None:
                self.systems[instance.name] = instance

        if self.enabled_systems is not None:
            wanted = [SystemKind.parse(name).value for name in self.enabled_systems]
            missing = [name for name in wanted if name not in self.systems]
            if missing:
                raise ValueError(f"systems not available: {missing}")
            self.systems = {name: self.systems[name] for name in wanted}
        log.info("Loaded systems: %s", ", ".join(self.systems) or "(none)")
        return self

    def _load_single_system(self, module_name: str) -> Optional[DesignSystem]:
        try:
            imported = importlib.import_module(f"{self.systems_package}.{module_name}")
        except Exception as exc:
            log.error("Failed to import system %s: %s", module_name, exc)
            return None

        system_cls = getattr(imported, "System", None)
        if system_cls is None:
            log.warning("%s has no System class. Skipping.", module_name)
            return None

        instance = system_cls()
        if not isinstance(instance, DesignSystem):
            log.warning("%s.System does not implement the DesignSystem protocol. Skipping.", module_name)
            return None
        log.debug("Loaded system '%s' from %s", instance.name, module_name)
        return instance

    # ------------------------------------------------------------------
    # Lookup
    # ------------------------------------------------------------------
    def get(self, name: str) -> DesignSystem:
        if not self.systems:
            self.load_systems()
        key = SystemKind.parse(name).value
        try:
            return self.systems[key]
        except KeyError:
            raise KeyError(f"system '{name}' is not loaded") from None

    def names(self) -> List[str]:
        return list(self.systems)
