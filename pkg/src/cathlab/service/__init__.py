"""Operational shell: configuration, scene persistence, CLI, and HTTP service."""
