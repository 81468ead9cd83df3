"""Command modules mounted by packbench.main."""
