//! Static sync-coalescing pass (to be filled in).
