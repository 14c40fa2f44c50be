__all__ = [
    "tool",
    "cli",
    "config",
    "data",
    "missingness",
    "integrity",
    "completion",
    "fusion",
    "losses",
    "model",
    "training",
    "evaluation",
    "event_store",
    "events",
    "provenance",
    "prng",
    "schema",
    "exceptions",
]
__version__ = "0.1.0"
