//! Learning substrate: models, datasets, gradients, and synthetic tasks.
//!
//! Gradients are plain `Vec<f64>` over a model's flattened parameters.
//! Devices compute minibatch gradients of their local loss; before
//! transmission every honest gradient is clipped to the norm bound `G`, which
//! is what makes the analog power control sound.

pub mod data;
pub mod idx;
pub mod model;
pub mod quadratic;

pub use data::{partition_non_iid, split_root, Dataset, SynthImageParams};
pub use model::{Arch, Model};
pub use quadratic::QuadraticTask;

/// Clip `g` in place to `‖g‖ <= bound`; returns true when clipping fired.
pub fn clip_gradient(g: &mut [f64], bound: f64) -> bool {
    assert!(bound > 0.0, "clip bound must be positive");
    let n = crate::util::norm(g);
    if n > bound {
        crate::util::scale(bound / n, g);
        true
    } else {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::norm;

    #[test]
    fn clip_is_exact_and_direction_preserving() {
        let mut g = vec![3.0, 4.0];
        assert!(clip_gradient(&mut g, 2.5));
        assert!((norm(&g) - 2.5).abs() < 1e-12);
        // Direction preserved: components keep the 3:4 ratio.
        assert!((g[0] / g[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn clip_leaves_short_vectors_alone() {
        let mut g = vec![0.3, 0.4];
        assert!(!clip_gradient(&mut g, 2.5));
        assert_eq!(g, vec![0.3, 0.4]);
    }
}
