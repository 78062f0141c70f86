//! Pixel/world projection through a planar homography.
//!
//! World coordinates live on the ground plane (z = 0), so a 3×3 homography
//! is enough to move between the image and the world.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec2::{Vec2, WorldPoint};

const PROJECTION_EPS: f64 = 1e-12;
const SINGULAR_DET: f64 = 1e-12;
const DLT_RANK_RATIO: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        PixelPoint { u, v }
    }
}

/// Pixel-to-world homography, normalized so that `h[2][2] = 1` whenever that
/// entry is non-zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Homography {
            m: Matrix3::identity(),
        }
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("homography has non-finite entries".into()));
        }
        let det = m.determinant();
        if det.abs() <= SINGULAR_DET {
            return Err(Error::SingularHomography(det));
        }
        let m = if m[(2, 2)] != 0.0 { m / m[(2, 2)] } else { m };
        Ok(Homography { m })
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn inverse(&self) -> Homography {
        // Construction guarantees |det| > 1e-12, so the inverse exists.
        let inv = self.m.try_inverse().expect("homography is invertible");
        let inv = if inv[(2, 2)] != 0.0 { inv / inv[(2, 2)] } else { inv };
        Homography { m: inv }
    }

    /// Applies the homography to an arbitrary plane point, returning the
    /// dehomogenized image.
    pub fn apply(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let p = self.m * Vector3::new(x, y, 1.0);
        if p.z.abs() <= PROJECTION_EPS {
            return Err(Error::DegenerateProjection(p.z));
        }
        Ok((p.x / p.z, p.y / p.z))
    }

    /// Reads nine whitespace-separated numbers in row-major order.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|msg| Error::parse(path, 1, msg))
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let vals = text
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| format!("bad number `{t}`: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if vals.len() != 9 {
            return Err(format!("expected 9 numbers, found {}", vals.len()));
        }
        Homography::from_matrix(Matrix3::from_row_slice(&vals)).map_err(|e| e.to_string())
    }

    /// Row-major text with 17 significant digits, one row per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in 0..3 {
            let row: Vec<String> = (0..3).map(|c| format!("{:.16e}", self.m[(r, c)])).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Maps an image point onto the ground plane.
pub fn project_to_world(h: &Homography, p: PixelPoint) -> Result<WorldPoint> {
    let (x, y) = h.apply(p.u, p.v)?;
    Ok(Vec2::new(x, y))
}

/// Maps a ground-plane point into the image, given the pixel-to-world homography.
pub fn project_to_pixel(h_inv: &Homography, p: WorldPoint) -> Result<PixelPoint> {
    let (u, v) = h_inv.apply(p.x, p.y)?;
    Ok(PixelPoint::new(u, v))
}

/// Hartley normalization: centroid to origin, mean distance sqrt(2).
fn normalizing_transform(pts: &[(f64, f64)]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mean_dist = pts
        .iter()
        .map(|p| (p.0 - cx).hypot(p.1 - cy))
        .sum::<f64>()
        / n;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn apply_raw(m: &Matrix3<f64>, p: (f64, f64)) -> (f64, f64) {
    let q = m * Vector3::new(p.0, p.1, 1.0);
    (q.x / q.z, q.y / q.z)
}

/// Normalized Direct Linear Transform from pixel/world correspondences.
///
/// The result maps pixels to world points and minimizes the algebraic error
/// in normalized coordinates.
pub fn estimate_homography(pixel_pts: &[PixelPoint], world_pts: &[WorldPoint]) -> Result<Homography> {
    if pixel_pts.len() != world_pts.len() {
        return Err(Error::LengthMismatch {
            left: pixel_pts.len(),
            right: world_pts.len(),
        });
    }
    let n = pixel_pts.len();
    if n < 4 {
        return Err(Error::DegenerateConfiguration(format!(
            "need at least 4 correspondences, got {n}"
        )));
    }
    let src: Vec<(f64, f64)> = pixel_pts.iter().map(|p| (p.u, p.v)).collect();
    let dst: Vec<(f64, f64)> = world_pts.iter().map(|p| (p.x, p.y)).collect();
    let t_src = normalizing_transform(&src);
    let t_dst = normalizing_transform(&dst);

    // At least 9 rows so the SVD exposes the full singular spectrum.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for i in 0..n {
        let (sx, sy) = apply_raw(&t_src, src[i]);
        let (dx, dy) = apply_raw(&t_dst, dst[i]);
        let r0 = 2 * i;
        a[(r0, 3)] = -sx;
        a[(r0, 4)] = -sy;
        a[(r0, 5)] = -1.0;
        a[(r0, 6)] = dy * sx;
        a[(r0, 7)] = dy * sy;
        a[(r0, 8)] = dy;
        let r1 = r0 + 1;
        a[(r1, 0)] = sx;
        a[(r1, 1)] = sy;
        a[(r1, 2)] = 1.0;
        a[(r1, 6)] = -dx * sx;
        a[(r1, 7)] = -dx * sy;
        a[(r1, 8)] = -dx;
    }

    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::DegenerateConfiguration("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let largest = svd.singular_values[order[0]];
    // The null vector is the smallest singular direction; the system is
    // well-posed only when the second-smallest singular value is clearly
    // non-zero.
    let second_smallest = svd.singular_values[order[7]];
    if !(largest > 0.0) || second_smallest / largest < DLT_RANK_RATIO {
        return Err(Error::DegenerateConfiguration(format!(
            "DLT system is rank deficient (singular value ratio {:e})",
            second_smallest / largest
        )));
    }
    let null = v_t.row(order[8]);
    let h_norm = Matrix3::from_fn(|r, c| null[3 * r + c]);
    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or_else(|| Error::DegenerateConfiguration("world points coincide".into()))?;
    let h = t_dst_inv * h_norm * t_src;
    Homography::from_matrix(h).map_err(|e| match e {
        Error::SingularHomography(_) => {
            Error::DegenerateConfiguration("estimated homography is singular".into())
        }
        other => other,
    })
}
