"""Shared store for acceptance results, printed in the terminal summary."""

# criterion number -> (passed, summary line)
RESULTS: dict[int, tuple[bool, str]] = {}
