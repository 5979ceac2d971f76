"""Select the compiled kernels when built, else the pure-Python ones.

Set ``RFPKV_PURE=1`` to force the fallback.
"""

import os

BACKEND = "python"

if not os.environ.get("RFPKV_PURE"):
    try:
        from rfpkv._kernels import *  # noqa: F401,F403
        from rfpkv._kernels import BACKEND  # noqa: F811
    except ImportError:
        pass

if BACKEND == "python":
    from rfpkv._pykernels import *  # noqa: F401,F403

from rfpkv._pykernels import (  # noqa: E402,F401  constants are shared
    FLAG, HIST_BUCKETS, HIST_GROWTH, HIST_MIN_NS, LEN_MASK, MAX_BODY, OP_GET, OP_PUT,
    ST_ERROR, ST_NOT_FOUND, ST_OK, VLEN_ERROR, VLEN_NOT_FOUND,
)
