"""Stage host: runs embedded pre-processing/run/post-processing functions
in one process and speaks the framed stdio protocol (PROTOCOL.md)."""

__version__ = "0.1.0"
