"""Traversal kernels: compiled Cython core with a pure-Python fallback.

The compiled module is preferred when it imported cleanly; set
``TKGFUSE_PURE=1`` to force the fallback. Both implementations share the
same RNG and accumulation order, so results are bit-identical either way.
"""

from __future__ import annotations

import os

from ._pure import SplitMix64, mix_seed

if os.environ.get("TKGFUSE_PURE", "") == "1":
    from . import _pure as impl

    BACKEND = "pure"
else:
    try:
        from . import _core as impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        from . import _pure as impl

        BACKEND = "pure"

ground_rule = impl.ground_rule
sample_walks = impl.sample_walks
sample_bodies = impl.sample_bodies


def available_backends() -> dict[str, object]:
    """Importable kernel implementations, keyed by name."""
    from . import _pure

    backends: dict[str, object] = {"pure": _pure}
    try:
        from . import _core  # type: ignore[attr-defined]

        backends["compiled"] = _core
    except ImportError:
        pass
    return backends


__all__ = [
    "BACKEND",
    "SplitMix64",
    "available_backends",
    "ground_rule",
    "mix_seed",
    "sample_bodies",
    "sample_walks",
]
