"""Integrator kernels specialized to one right-hand side and cached on disk.

numba cannot cache a function that receives another compiled function as an
argument, so the generic kernels in ``_dop853`` recompile in every process.
For a right-hand side named ``"package.module:function"`` this module writes a
small source file in which that function is the module-level global ``fun``
and the dispatcher-taking kernels are copied with the argument removed.
numba caches such files normally. The file embeds a digest of the stepper
and of the modules defining right-hand sides, so editing any of them rewrites
the file and invalidates the stale compiled code.
"""

from __future__ import annotations

import hashlib
import importlib.util
import inspect
import logging
import os
import re
import sys
import tempfile
from functools import lru_cache
from pathlib import Path

from . import _dop853

log = logging.getLogger(__name__)

_TAKES_FUN = ("_initial_step", "_rk_step", "_dense_coeffs", "integrate", "endpoint")
_SHARED = ("N_STAGES", "A", "B", "C", "E3", "E5", "D", "A_EXTRA", "C_EXTRA", "N_EXT", "POWER",
           "SAFETY", "MIN_FACTOR", "MAX_FACTOR", "ERR_EXP", "DONE", "EVENT", "UNDERFLOW",
           "MAX_STEPS", "NONFINITE", "_rms", "_error_norm", "dense_eval", "_locate", "_grow")


def kernel_dir() -> Path:
    env = os.environ.get("LOWTHRUST_KERNEL_DIR")
    if env:
        return Path(env)
    base = os.environ.get("XDG_CACHE_HOME") or os.path.join(os.path.expanduser("~"), ".cache")
    return Path(base) / "lowthrust" / "kernels"


# modules whose source is compiled into the kernels (rhs modules import from crtbp)
_DEPENDS = ("numerics/_dop853.py", "crtbp.py", "extremals.py")


@lru_cache(maxsize=1)
def _package_digest() -> str:
    root = Path(__file__).resolve().parents[1]
    h = hashlib.sha256()
    for name in _DEPENDS:
        h.update(name.encode())
        h.update((root / name).read_bytes())
    return h.hexdigest()[:16]


def _strip_fun(src: str) -> str:
    src = re.sub(r"^@njit\(cache=False\).*$", "@njit(cache=True)", src, flags=re.M)
    src = re.sub(r"\(fun, ", "(", src)
    return src


def kernel_source(target: str) -> str:
    module, name = target.split(":")
    body = "\n\n".join(_strip_fun(inspect.getsource(getattr(_dop853, f))) for f in _TAKES_FUN)
    return (f"# generated for {target}; package digest {_package_digest()}\n"
            "import numpy as np\n"
            "from numba import njit\n"
            f"from lowthrust.numerics._dop853 import {', '.join(_SHARED)}\n"
            f"from {module} import {name} as fun\n\n\n" + body)


def _write_if_changed(path: Path, text: str) -> None:
    if path.exists() and path.read_text() == text:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


@lru_cache(maxsize=None)
def specialized(target: str):
    """``(integrate, endpoint)`` for the rhs ``target``; None if the cache dir is unusable."""
    text = kernel_source(target)
    path = kernel_dir() / (target.replace(".", "_").replace(":", "__") + ".py")
    try:
        _write_if_changed(path, text)
    except OSError as exc:
        log.warning("kernel cache unavailable (%s); using generic kernels", exc)
        return None
    mod_name = "_lowthrust_kernel_" + path.stem
    spec = importlib.util.spec_from_file_location(mod_name, path)
    mod = importlib.util.module_from_spec(spec)
    sys.modules[mod_name] = mod
    spec.loader.exec_module(mod)
    return mod.integrate, mod.endpoint
