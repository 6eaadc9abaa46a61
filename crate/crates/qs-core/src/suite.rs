//! Acceptance checks (to be filled in).
