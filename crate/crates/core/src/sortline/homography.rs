//! Pixel to table-plane calibration by normalized direct linear transform.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::SortlineError;

/// Relative size below which a singular value counts as zero.
const RANK_TOL: f64 = 1e-10;
const HORIZON_TOL: f64 = 1e-12;
const DET_TOL: f64 = 1e-12;

/// Row-major 3×3 matrix with `m[2][2] == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    pub m: [[f64; 3]; 3],
}

impl Homography {
    pub const IDENTITY: Homography = Homography {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Scales so the bottom-right entry is 1 and checks invertibility.
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self, SortlineError> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SortlineError::Input("homography has non-finite entries".into()));
        }
        let mat = to_matrix(&m);
        let scale = mat.norm();
        if m[2][2].abs() <= HORIZON_TOL * scale {
            return Err(SortlineError::Degenerate("homography bottom-right entry is zero".into()));
        }
        let mat = mat / m[2][2];
        if mat.determinant().abs() <= DET_TOL * mat.norm().powi(3) {
            return Err(SortlineError::Degenerate("homography is singular".into()));
        }
        Ok(Self { m: from_matrix(&mat) })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        to_matrix(&self.m)
    }

    pub fn apply(&self, p: [f64; 2]) -> Result<[f64; 2], SortlineError> {
        pixel_to_world(self, p)
    }
}

fn to_matrix(m: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[i][j])
}

fn from_matrix(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(i, j)];
        }
    }
    out
}

/// Projective map with perspective divide.
pub fn pixel_to_world(h: &Homography, pixel: [f64; 2]) -> Result<[f64; 2], SortlineError> {
    let v = h.matrix() * Vector3::new(pixel[0], pixel[1], 1.0);
    if v.z.abs() < HORIZON_TOL {
        return Err(SortlineError::Horizon { scale: v.z });
    }
    Ok([v.x / v.z, v.y / v.z])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomographyFit {
    pub homography: Homography,
    /// Root-mean-square world-plane distance, m.
    pub reprojection_rms: f64,
    pub reprojection_max: f64,
}

/// Translates the centroid to the origin and scales the mean distance to √2.
fn normalizer(points: &[[f64; 2]], which: &str) -> Result<Matrix3<f64>, SortlineError> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean_d = points.iter().map(|p| (p[0] - cx).hypot(p[1] - cy)).sum::<f64>() / n;
    if !(mean_d > 0.0 && mean_d.is_finite()) {
        return Err(SortlineError::Degenerate(format!("{which} points coincide")));
    }
    let s = std::f64::consts::SQRT_2 / mean_d;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn transform(t: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    let v = t * Vector3::new(p[0], p[1], 1.0);
    [v.x / v.z, v.y / v.z]
}

/// Least-squares homography from `(pixel, world)` pairs. The null vector of
/// the stacked constraints must be unique; a second vanishing singular
/// value means the points cannot pin down a projective map.
pub fn fit_homography(correspondences: &[([f64; 2], [f64; 2])]) -> Result<HomographyFit, SortlineError> {
    let n = correspondences.len();
    if n < 4 {
        return Err(SortlineError::Input(format!("need at least 4 correspondences, got {n}")));
    }
    if correspondences.iter().any(|(p, w)| !(p[0].is_finite() && p[1].is_finite() && w[0].is_finite() && w[1].is_finite())) {
        return Err(SortlineError::Input("correspondences must be finite".into()));
    }
    let pix: Vec<[f64; 2]> = correspondences.iter().map(|c| c.0).collect();
    let wld: Vec<[f64; 2]> = correspondences.iter().map(|c| c.1).collect();
    let tp = normalizer(&pix, "pixel")?;
    let tw = normalizer(&wld, "world")?;

    // Thin SVD of an 8×9 system drops a right singular vector, so pad to
    // at least nine rows.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (k, (p, w)) in pix.iter().zip(&wld).enumerate() {
        let [u, v] = transform(&tp, *p);
        let [x, y] = transform(&tw, *w);
        let r = 2 * k;
        a.row_mut(r).copy_from_slice(&[-u, -v, -1.0, 0.0, 0.0, 0.0, x * u, x * v, x]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, -u, -v, -1.0, y * u, y * v, y]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let largest = sv[order[0]];
    if !(largest > 0.0) || sv[order[7]] <= RANK_TOL * largest {
        return Err(SortlineError::Degenerate(
            "correspondences leave the homography underdetermined (collinear or repeated points)".into(),
        ));
    }
    let h = v_t.row(order[8]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let tw_inv = tw.try_inverse().expect("normalizer is invertible");
    let full = tw_inv * hn * tp;
    let homography = Homography::new(from_matrix(&full))?;

    let mut sq = 0.0;
    let mut max = 0.0f64;
    for (p, w) in &pix.iter().zip(&wld).collect::<Vec<_>>() {
        let q = pixel_to_world(&homography, **p)?;
        let d = (q[0] - w[0]).hypot(q[1] - w[1]);
        sq += d * d;
        max = max.max(d);
    }
    Ok(HomographyFit {
        homography,
        reprojection_rms: (sq / n as f64).sqrt(),
        reprojection_max: max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> Vec<[f64; 2]> {
        let mut v = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                v.push([100.0 + 200.0 * i as f64, 80.0 + 150.0 * j as f64]);
            }
        }
        v
    }

    fn pairs(h: &Homography, pts: &[[f64; 2]]) -> Vec<([f64; 2], [f64; 2])> {
        pts.iter().map(|&p| (p, pixel_to_world(h, p).unwrap())).collect()
    }

    #[test]
    fn identity_correspondences_give_identity() {
        let fit = fit_homography(&pairs(&Homography::IDENTITY, &grid())).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((fit.homography.m[i][j] - e).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn simple_maps() {
        assert_eq!(pixel_to_world(&Homography::IDENTITY, [3.0, 4.0]).unwrap(), [3.0, 4.0]);
        let s = Homography::new([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(pixel_to_world(&s, [3.0, 4.0]).unwrap(), [6.0, 8.0]);
    }

    #[test]
    fn horizon_is_an_error() {
        let h = Homography::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 1.0]]).unwrap();
        assert!(matches!(pixel_to_world(&h, [-1.0, 5.0]), Err(SortlineError::Horizon { .. })));
    }

    #[test]
    fn collinear_and_too_few_points_fail() {
        let line: Vec<_> = (0..4).map(|k| ([k as f64, 2.0 * k as f64], [k as f64, 0.5 * k as f64])).collect();
        assert!(matches!(fit_homography(&line), Err(SortlineError::Degenerate(_))));
        let three = &pairs(&Homography::IDENTITY, &grid())[..3];
        assert!(matches!(fit_homography(three), Err(SortlineError::Input(_))));
        let mut same = pairs(&Homography::IDENTITY, &grid())[..4].to_vec();
        same[3] = same[0];
        same[2] = same[0];
        assert!(matches!(fit_homography(&same), Err(SortlineError::Degenerate(_))));
    }

    #[test]
    fn three_collinear_of_four_is_degenerate() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 1.0]];
        assert!(matches!(
            fit_homography(&pairs(&Homography::IDENTITY, &pts)),
            Err(SortlineError::Degenerate(_))
        ));
    }

    #[test]
    fn singular_matrix_rejected() {
        assert!(Homography::new([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]]).is_err());
    }

    proptest! {
        #[test]
        fn recovers_random_homography(
            a in -0.5f64..0.5, b in -0.5f64..0.5, c in -0.5f64..0.5, d in -0.5f64..0.5,
            tx in -1.0f64..1.0, ty in -1.0f64..1.0, g in -2e-4f64..2e-4, k in -2e-4f64..2e-4,
        ) {
            let m = [[1e-3 * (1.0 + a), 1e-3 * b, tx], [1e-3 * c, 1e-3 * (1.0 + d), ty], [g, k, 1.0]];
            let h = Homography::new(m);
            prop_assume!(h.is_ok());
            let h = h.unwrap();
            let pts: Vec<[f64; 2]> = grid().into_iter().take(8).collect();
            let data = pairs(&h, &pts);
            let fit = fit_homography(&data).unwrap();
            prop_assert!(fit.reprojection_max < 1e-9);
            for p in [[320.0, 240.0], [15.0, 470.0]] {
                let (x, y) = (pixel_to_world(&h, p).unwrap(), pixel_to_world(&fit.homography, p).unwrap());
                prop_assert!((x[0] - y[0]).abs() < 1e-9 && (x[1] - y[1]).abs() < 1e-9);
            }
        }
    }
}
