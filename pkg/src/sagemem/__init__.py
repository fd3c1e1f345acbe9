"""sagemem: a teacher-compiled knowledge store with a refresh/consolidation lifecycle.

A small local model answers queries out of a two-tier vector store (staging +
canonical). Misses and stale entries are filled by larger "teacher" models that
write dense encyclopedic sections with a time-to-live; an offline sleep cycle
promotes staging sections into the canonical store, merging overlapping
material through the teachers.
"""

__version__ = "0.1.0"
