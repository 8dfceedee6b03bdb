"""Zero-shot domain adaptation via domain-shift transfer between coupled GANs."""

# The training loops issue many small BLAS calls; multi-threaded BLAS loses
# more to thread wake-ups than it gains, so pin it to one thread up front.
try:
    import threadpoolctl as _threadpoolctl

    _threadpoolctl.threadpool_limits(limits=1, user_api="blas")
except Exception:  # pragma: no cover - absent/old threadpoolctl is fine
    pass

__version__ = "0.1.0"
