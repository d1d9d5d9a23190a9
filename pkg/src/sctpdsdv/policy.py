"""Binds the environment subsystem to the routing and transport layers."""

import enum

from .errors import ConfigError


class PolicyMode(enum.Enum):
    TRADITIONAL = "traditional"
    PERSISTENT = "persistent"

    def __str__(self):
        return self.value

    @classmethod
    def parse(cls, text):
        text = str(text).strip().lower()
        aliases = {"extended": cls.PERSISTENT, "extended_persistent": cls.PERSISTENT,
                   "rto-mm": cls.TRADITIONAL}
        try:
            return cls(text)
        except ValueError:
            if text in aliases:
                return aliases[text]
            raise ConfigError(f"unknown policy {text!r}") from None


def bind(mode, env, nodes):
    """Wire channel notifications into every node for the persistent policy.

    All routing callbacks are registered ahead of all transport callbacks, so
    at a Good report routes are refreshed before transport resumes.  Under the
    traditional policy nothing subscribes and no layer ever sees the channel.
    """
    if env.bound_mode is not None:
        raise ConfigError(f"environment already bound to {env.bound_mode}")
    env.bound_mode = mode
    if mode is not PolicyMode.PERSISTENT:
        return
    for node in nodes:
        node.router.persistent = True
        env.subscribe(node.router.on_channel)
    for node in nodes:
        if node.assoc is not None:
            node.assoc.persistent = True
            env.subscribe(node.assoc.on_channel)
