"""SCTP over DSDV on a randomly cut channel: traditional vs extended persistent timeouts."""
