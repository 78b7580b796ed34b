"""Text tensor file format shared by uMPS, purified MPS, state and matrix files.

A file is one UTF-8 JSON document::

    {"format": "ctxsim-tensors", "version": 1,
     "meta": {...},
     "tensors": {"A": {"shape": [5, 3, 5], "real": [...], "imag": [...]}}}

Entries are row-major and printed with ``repr`` so every IEEE-754 double
round-trips exactly; keys are sorted, so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "ctxsim-tensors"
VERSION = 1


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return [_plain(x) for x in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(x) for x in obj]
    return obj


def dumps(tensors: dict[str, np.ndarray], meta: dict | None = None) -> str:
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "meta": _plain(meta or {}),
        "tensors": {},
    }
    for name, t in tensors.items():
        t = np.asarray(t, dtype=complex)
        payload["tensors"][name] = {
            "shape": list(t.shape),
            "real": [float(x) for x in t.real.ravel()],
            "imag": [float(x) for x in t.imag.ravel()],
        }
    return json.dumps(payload, sort_keys=True) + "\n"


def loads(text: str) -> tuple[dict[str, np.ndarray], dict]:
    payload = json.loads(text)
    if payload.get("format") != FORMAT:
        raise ValueError("not a ctxsim tensor file")
    tensors = {}
    for name, t in payload["tensors"].items():
        re = np.asarray(t["real"], dtype=float)
        im = np.asarray(t["imag"], dtype=float)
        tensors[name] = (re + 1j * im).reshape(t["shape"])
    return tensors, payload["meta"]


def write_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_text(dumps(tensors, meta), encoding="utf-8")


def read_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_text(encoding="utf-8"))
