//! Executable reference model (to be filled in).
