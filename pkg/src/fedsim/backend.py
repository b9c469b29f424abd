"""Kernel backend selection.

The compiled extension is preferred when importable; otherwise the
pure-numpy fallback is used.  Set ``FEDSIM_PURE_PY=1`` to force the
fallback (useful for benchmarking and cross-checking the two paths).
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels

_impl = None
if os.environ.get("FEDSIM_PURE_PY", "") not in ("", "0"):
    BACKEND = "pure"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "compiled"
    except ImportError:
        BACKEND = "pure"
if _impl is None:
    _impl = _pykernels


def _as_f64(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def _as_i64(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.int64)


def ce_loss(weights, bias, features, labels) -> float:
    return float(
        _impl.ce_loss(_as_f64(weights), _as_f64(bias), _as_f64(features), _as_i64(labels))
    )


def ce_grad(weights, bias, features, labels):
    gw, gb = _impl.ce_grad(
        _as_f64(weights), _as_f64(bias), _as_f64(features), _as_i64(labels)
    )
    return np.asarray(gw), np.asarray(gb)


def fedprox_sgd(weights, bias, features, labels, perms, batch_size, lr, mu):
    w, b = _impl.fedprox_sgd(
        _as_f64(weights),
        _as_f64(bias),
        _as_f64(features),
        _as_i64(labels),
        _as_i64(perms),
        int(batch_size),
        float(lr),
        float(mu),
    )
    return np.asarray(w), np.asarray(b)
