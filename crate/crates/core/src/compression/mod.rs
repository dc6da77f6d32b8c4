//! Private and common state compressions: representation, construction,
//! recursion checks, and exact measurement of their approximation errors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod build;
mod common;
mod file;
mod private;

pub use build::{build_exact_private, build_greedy, random_private, refine_private, MERGE_SLACK};
pub use common::{
    common_discrepancy, measure_common, random_common, CommonCompression, CommonMeasure,
    CommonUpdateKey, LabelClass, Member, Outcome,
};
pub use file::{CommonDocument, Measured, PrivateDocument};
pub use private::{
    measure_private, private_discrepancy, PrivateCompression, PrivateMeasure, UpdateKey,
};

/// Total variation distance `½ Σ |p − q|` over a shared support.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Support(p.len(), q.len()));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Where a supremum was attained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: usize,
    pub fcs: String,
    /// Joint private history (private side) or label-domain prescription (common side).
    pub detail: String,
    /// Joint action (private side) or prescription index (common side).
    pub choice: u64,
    /// The raw supremum before the 4/8/2 scaling.
    pub raw: f64,
}

/// The four error parameters, already scaled so they plug into the bounds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasuredParams {
    pub eps_p: f64,
    pub delta_p: f64,
    pub eps_c: f64,
    pub delta_c: f64,
}

impl MeasuredParams {
    pub fn private(eps_p: f64, delta_p: f64) -> Self {
        MeasuredParams {
            eps_p,
            delta_p,
            ..Default::default()
        }
    }
}

/// One edge whose child label does not factor through the update table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeViolation {
    pub edge: String,
    pub expected: Option<u32>,
    pub found: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecursionReport {
    pub id: String,
    pub edges_checked: usize,
    pub violations: Vec<EdgeViolation>,
}

impl RecursionReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }

    pub(crate) fn into_result(self) -> Result<()> {
        match self.violations.first() {
            None => Ok(()),
            Some(v) => Err(Error::NotRecursive {
                id: self.id.clone(),
                count: self.violations.len(),
                first: v.edge.clone(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!((tv_distance(&[0.7, 0.3], &[0.5, 0.5]).unwrap() - 0.2).abs() < 1e-15);
        assert!(tv_distance(&[1.0], &[0.5, 0.5]).is_err());
    }
}
