import os
from typing import List, TypeVar

T = TypeVar("T")

_UNITS = (
    ("d", 86_400e9),
    ("h", 3_600e9),
    ("m", 60e9),
    ("s", 1e9),
    ("ms", 1e6),
    ("us", 1e3),
    ("ns", 1.0),
)


def format_ns_interval(v_ns: float, max_terms: int = 2) -> str:
    """Render a duration in ns with its ``max_terms`` largest units, ``1s512ms``."""
    parts: List[str] = []
    for unit, size in _UNITS:
        whole, v_ns = divmod(v_ns, size)
        if whole:
            parts.append(f"{int(whole)}{unit}")
            if len(parts) == max_terms:
                break
    return "".join(parts) or "0ns"


_TRUE_STRINGS = {"1", "true", "yes", "on"}


def value_from_env(env_var: str, default: T) -> T:
    """Read ``env_var`` cast to the type of ``default``.

    Booleans are parsed from the usual spellings ("1", "true", "yes", "on")
    since ``bool("False")`` is truthy.
    """
    if env_var not in os.environ:
        return default
    raw = os.environ[env_var]
    if isinstance(default, bool):
        return raw.strip().lower() in _TRUE_STRINGS  # type: ignore[return-value]
    return type(default)(raw)  # type: ignore[call-arg]
