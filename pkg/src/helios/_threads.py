"""Pin BLAS to one thread.

The numeric core is sized for a single desktop core; letting OpenBLAS
spin worker threads inside a CPU-quota'd container only adds scheduler
churn (measured ~1.5x slower) and couples results to a pool size. One
BLAS thread is both faster here and removes that variable entirely.
HELIOS_THREADS governs only the package's own coarse-grained workers.
"""

import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

try:  # effective even when numpy was imported first
    import threadpoolctl

    threadpoolctl.threadpool_limits(limits=1, user_api="blas")
except Exception:  # pragma: no cover - fall back to the env vars above
    pass
