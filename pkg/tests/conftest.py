import os

from hypothesis import settings, HealthCheck

settings.register_profile(
    "ci", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")

# Deterministic single-threaded default; thread-count tests override locally.
os.environ.setdefault("FEDTRADEOFF_THREADS", "1")
