from .logs import humanize_milliseconds, setup_logs, time_it
from .rng import PRNG_IDENTITY, PortableRandom

__all__ = [
    "humanize_milliseconds",
    "setup_logs",
    "time_it",
    "PRNG_IDENTITY",
    "PortableRandom",
]
