//! Posterior post-processing (in progress).
