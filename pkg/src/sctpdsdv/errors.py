class ConfigError(ValueError):
    """Invalid scenario or component configuration."""


class TopologyError(RuntimeError):
    """A frame or update referenced a node that is not where it should be."""
