use ndarray::{Array1, Array2, ArrayView2};

use super::assignment::min_cost_assignment;
use crate::error::{Error, Result};

fn unit_columns(a: &ArrayView2<f64>) -> Result<Vec<Array1<f64>>> {
    a.columns()
        .into_iter()
        .enumerate()
        .map(|(col, c)| {
            let norm = c.dot(&c).sqrt();
            if norm == 0.0 || !norm.is_finite() {
                Err(Error::ZeroColumn { col })
            } else {
                Ok(c.mapv(|v| v / norm))
            }
        })
        .collect()
}

/// Angle between unit vectors folded into `[0, pi/2]`. The half-chord form
/// stays accurate near zero, where `acos` of the dot product loses half the
/// digits.
fn unsigned_angle(u: &Array1<f64>, w: &Array1<f64>) -> f64 {
    let (mut minus, mut plus) = (0.0, 0.0);
    for (a, b) in u.iter().zip(w) {
        minus += (a - b) * (a - b);
        plus += (a + b) * (a + b);
    }
    let theta = 2.0 * minus.sqrt().atan2(plus.sqrt());
    theta.min(std::f64::consts::PI - theta)
}

/// `angles[[i, j]]` is the angle between column `i` of `estimate` and
/// column `j` of `truth`, ignoring sign.
pub fn angle_matrix(estimate: &ArrayView2<f64>, truth: &ArrayView2<f64>) -> Result<Array2<f64>> {
    if estimate.dim() != truth.dim() {
        return Err(Error::Shape(format!(
            "estimate is {:?}, truth is {:?}",
            estimate.dim(),
            truth.dim()
        )));
    }
    let est = unit_columns(estimate)?;
    let tru = unit_columns(truth)?;
    Ok(Array2::from_shape_fn((est.len(), tru.len()), |(i, j)| unsigned_angle(&est[i], &tru[j])))
}

/// Spectral angular distance: mean angle between matched columns, with
/// the matching chosen to minimize the total angle. Returns the distance
/// and `matching[i]`, the truth column assigned to estimated column `i`.
pub fn sad_with_matching(estimate: &ArrayView2<f64>, truth: &ArrayView2<f64>) -> Result<(f64, Vec<usize>)> {
    let angles = angle_matrix(estimate, truth)?;
    let n = angles.nrows();
    let cost: Vec<Vec<f64>> = angles.rows().into_iter().map(|r| r.to_vec()).collect();
    let matching = min_cost_assignment(&cost);
    let total: f64 = matching.iter().enumerate().map(|(i, &j)| angles[[i, j]]).sum();
    Ok((total / n as f64, matching))
}

/// Spectral angular distance in radians, in `[0, pi/2]`.
pub fn sad(estimate: &ArrayView2<f64>, truth: &ArrayView2<f64>) -> Result<f64> {
    Ok(sad_with_matching(estimate, truth)?.0)
}
