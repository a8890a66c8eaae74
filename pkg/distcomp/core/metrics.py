import logging
import time
from functools import wraps
from typing import Any, Callable, Dict

from prometheus_client import Counter, Gauge, Histogram, REGISTRY

from .validation import NoConvergence

logger = logging.getLogger(__name__)

# Solver metrics
SOLVE_COUNT = Counter(
    'distcomp_solves_total',
    'Total number of solver invocations',
    ['solver', 'status']
)

SOLVE_DURATION = Histogram(
    'distcomp_solve_duration_seconds',
    'Solver wall time in seconds',
    ['solver']
)

KKT_SUP_VIOLATION = Gauge(
    'distcomp_kkt_sup_violation',
    'Sup violation of the last KKT certificate produced by a solver',
    ['solver']
)


def record_certificate(solver: str, report: Any) -> None:
    """Publish the sup violation of a KKT report, if the object carries one."""
    sup = getattr(report, "sup_violation", None)
    if sup is not None:
        KKT_SUP_VIOLATION.labels(solver=solver).set(float(sup))


def track_solve(name: str) -> Callable:
    """Decorator to count solver outcomes and observe their duration."""
    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(*args, **kwargs) -> Any:
            start_time = time.perf_counter()
            try:
                result = func(*args, **kwargs)
                SOLVE_COUNT.labels(solver=name, status="success").inc()
                return result
            except NoConvergence:
                SOLVE_COUNT.labels(solver=name, status="no_convergence").inc()
                raise
            except Exception:
                SOLVE_COUNT.labels(solver=name, status="error").inc()
                raise
            finally:
                SOLVE_DURATION.labels(solver=name).observe(time.perf_counter() - start_time)
        return wrapper
    return decorator


def metrics_snapshot() -> Dict[str, float]:
    """Current values of the distcomp solve counters, keyed by sample name and labels."""
    snapshot: Dict[str, float] = {}
    for metric in REGISTRY.collect():
        if not metric.name.startswith("distcomp_solves"):
            continue
        for sample in metric.samples:
            if sample.name.endswith("_total"):
                labels = ",".join(f"{k}={v}" for k, v in sorted(sample.labels.items()))
                snapshot[f"{sample.name}{{{labels}}}"] = sample.value
    return snapshot
