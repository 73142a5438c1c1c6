//! Cosine screening of cluster aggregates against the root gradient.
//!
//! A cluster survives when the cosine similarity between its aggregate and
//! the server's own root gradient is at least the threshold; the boundary
//! counts as surviving. Survivors are summed into the global step, so a
//! round with no survivors leaves the model untouched.

use crate::aircomp::ClusterAggregate;
use crate::util::cosine;

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    /// Indices of clusters whose aggregate passed.
    pub survivors: Vec<usize>,
    /// Cosine per scheduled cluster; `None` for silent clusters or when the
    /// similarity is undefined (a zero vector on either side).
    pub cosines: Vec<Option<f64>>,
}

/// Screen every aggregate. A zero root gradient makes the test vacuous:
/// there is no direction to compare against, so everything passes. A zero
/// aggregate fails, since it has no direction either and carries no signal
/// worth keeping.
pub fn cosine_filter(
    aggregates: &[Option<ClusterAggregate>],
    root_grad: &[f64],
    rho: f64,
) -> FilterOutcome {
    let root_is_zero = crate::util::norm_sq(root_grad) == 0.0;
    let mut survivors = Vec::new();
    let mut cosines = vec![None; aggregates.len()];
    for (n, agg) in aggregates.iter().enumerate() {
        let Some(agg) = agg else { continue };
        if root_is_zero {
            survivors.push(n);
            continue;
        }
        let c = cosine(&agg.g, root_grad);
        cosines[n] = c;
        if let Some(c) = c {
            if c >= rho {
                survivors.push(n);
            }
        }
    }
    FilterOutcome { survivors, cosines }
}

/// Descend along the sum of surviving aggregates. Returns false when the
/// round is skipped for lack of survivors.
pub fn global_update(
    w: &mut [f64],
    eta: f64,
    aggregates: &[Option<ClusterAggregate>],
    survivors: &[usize],
) -> bool {
    if survivors.is_empty() {
        return false;
    }
    for &n in survivors {
        let agg = aggregates[n].as_ref().expect("survivor must exist");
        crate::util::axpy(-eta, &agg.g, w);
    }
    true
}
