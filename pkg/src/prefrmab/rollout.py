"""Episode rollout backend, selected at import.

The compiled kernel is used when it was built; setting
``PREFRMAB_PURE_PYTHON=1`` forces the pure-Python path. Both consume the
same pre-drawn uniforms and return identical arrays.
"""

import os

from . import _rollout_py

BACKEND = "python"
rollout_episode = _rollout_py.rollout_episode

if os.environ.get("PREFRMAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _rollout as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        rollout_episode = _compiled.rollout_episode
        BACKEND = "cython"

python_rollout_episode = _rollout_py.rollout_episode


def compiled_rollout_episode():
    """The compiled kernel, or None when the extension is unavailable."""
    try:
        from . import _rollout
    except ImportError:
        return None
    return _rollout.rollout_episode
