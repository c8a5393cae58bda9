"""Benchmark functions, baselines and the experiment harness."""
