//! Dataset and manifest I/O (in progress).
