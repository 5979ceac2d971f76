"""Benchmark harness: configuration, discrete-event and real-time runners, reports."""

from rfpkv.bench.config import ConfigError, RunConfig
from rfpkv.bench.report import LatencyHistogram, RunReport, emit, percentile
from rfpkv.bench.sim import run, sweep

__all__ = ["ConfigError", "LatencyHistogram", "RunConfig", "RunReport", "emit", "percentile",
           "run", "sweep"]
