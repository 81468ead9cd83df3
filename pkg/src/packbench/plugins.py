"""Discover third-party policies registered via the packbench.policies entry-point group."""

from __future__ import annotations

import logging
from collections.abc import Callable
from importlib.metadata import entry_points
from typing import TYPE_CHECKING


if TYPE_CHECKING:
    from packbench.heuristics import Policy


logger = logging.getLogger(__name__)

PLUGIN_GROUP = "packbench.policies"

PolicyFactory = Callable[[int | None], "Policy"]


def policy_plugins() -> dict[str, PolicyFactory]:
    """Load every policy factory registered for the packbench.policies group.

    Each entry point must load to a callable taking a seed and returning a
    policy. Broken plugins (import failures, non-callable values) log a
    warning and are skipped, so one malformed plugin never breaks the bench.

    Returns:
        Factories keyed by entry-point name.
    """
    factories: dict[str, PolicyFactory] = {}
    for entry in entry_points(group=PLUGIN_GROUP):
        if entry.name in factories:
            logger.warning("Policy plugin %r is registered twice, keeping the first", entry.name)
            continue

        try:
            factory = entry.load()
        except Exception:
            logger.warning("Failed to load policy plugin %r", entry.name, exc_info=True)
            continue

        if not callable(factory):
            logger.warning(
                "Policy plugin %r resolved to %s, expected a callable",
                entry.name,
                type(factory).__name__,
            )
            continue

        factories[entry.name] = factory
    return factories
