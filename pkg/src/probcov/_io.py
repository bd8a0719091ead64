"""Atomic file-writing helpers.

Every artifact (CSV, JSON, NPZ) is written to a temporary file in the target
directory and renamed into place, so a crash never leaves a partial file.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

__all__ = ["atomic_write_text", "atomic_savez", "atomic_write_json"]


def _replace_into(path, writer):
    path = os.fspath(path)
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=parent, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        writer(fd, tmp)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path, text):
    def writer(fd, tmp):
        with os.fdopen(fd, "w") as fh:
            fh.write(text)

    _replace_into(path, writer)


def atomic_write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def atomic_savez(path, **arrays):
    def writer(fd, tmp):
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **arrays)

    _replace_into(path, writer)
