"""Attention kernel backend selection.

The compiled extension is preferred when importable; ELASTIC_NAS_KERNELS
overrides: "native" (fail hard if missing), "numpy", or "auto" (default).
Both backends expose the same two functions and agree numerically.
"""

from __future__ import annotations

import os

from . import reference

_choice = os.environ.get("ELASTIC_NAS_KERNELS", "auto").lower()
if _choice not in ("auto", "native", "numpy"):
    raise RuntimeError(
        f"ELASTIC_NAS_KERNELS={_choice!r} not recognized; use auto, native, or numpy"
    )

if _choice == "numpy":
    _impl = reference
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]
    except ImportError:
        if _choice == "native":
            raise RuntimeError(
                "ELASTIC_NAS_KERNELS=native but the compiled extension is not available"
            ) from None
        _impl = reference

BACKEND: str = _impl.BACKEND
causal_attention_fwd = _impl.causal_attention_fwd
causal_attention_bwd = _impl.causal_attention_bwd


def get_backend(name: str = "auto"):
    """Return a specific backend module, bypassing the import-time choice."""
    if name == "numpy":
        return reference
    if name == "native":
        from . import _native

        return _native
    if name == "auto":
        return _impl
    raise ValueError(f"unknown backend {name!r}")


__all__ = ["BACKEND", "causal_attention_fwd", "causal_attention_bwd", "get_backend"]
