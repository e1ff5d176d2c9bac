"""Migrate shell commands to config-module tasks by syscall-trace comparison."""

__version__ = "0.1.0"
