"""Static analyses, runtime ghost-state oracle, and protocol model checking
for programs structured around an isolated protocol core."""

__version__ = "0.1.0"
