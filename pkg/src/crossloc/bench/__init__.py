"""Benchmark harness: trials, scoring, reports and the command line."""
