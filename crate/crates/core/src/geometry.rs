//! Poincaré-ball operations with curvature `c > 0`: projection, Möbius
//! addition, exponential/logarithmic maps at the origin and geodesic
//! distance.
//!
//! The checked API works on [`BallPoint`]s. The [`kernels`] module holds the
//! unchecked slice-level forward maps together with their vector-Jacobian
//! products, which the hyperbolic scorers chain for backpropagation.

use alloc::vec::Vec;

use crate::error::invalid;
use crate::numerics::{norm, sq_norm};
use crate::Result;

/// Relative margin kept between projected points and the ball boundary.
pub const BALL_MARGIN: f64 = 1e-5;

/// A point strictly inside the Poincaré ball of curvature `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint {
    coords: Vec<f64>,
    curvature: f64,
}

impl BallPoint {
    pub fn new(coords: Vec<f64>, curvature: f64) -> Result<Self> {
        check_curvature(curvature)?;
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("ball point has non-finite coordinates"));
        }
        if libm::sqrt(curvature) * norm(&coords) >= 1.0 {
            return Err(invalid!("point lies on or outside the ball boundary"));
        }
        Ok(Self { coords, curvature })
    }

    pub fn origin(dim: usize, curvature: f64) -> Result<Self> {
        Self::new(alloc::vec![0.0; dim], curvature)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }
}

fn check_curvature(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(invalid!("curvature must be positive and finite, got {c}"))
    }
}

fn same_curvature(x: &BallPoint, y: &BallPoint) -> Result<f64> {
    if x.curvature != y.curvature {
        return Err(invalid!("curvature mismatch: {} vs {}", x.curvature, y.curvature));
    }
    if x.coords.len() != y.coords.len() {
        return Err(invalid!("dimension mismatch: {} vs {}", x.coords.len(), y.coords.len()));
    }
    Ok(x.curvature)
}

/// Pulls `x` inside the ball: points with `sqrt(c)|x| > 1 - 1e-5` are
/// rescaled to norm `(1 - 1e-5) / sqrt(c)`.
pub fn project_to_ball(x: &[f64], c: f64) -> Result<BallPoint> {
    check_curvature(c)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid!("cannot project non-finite vector"));
    }
    Ok(BallPoint {
        coords: kernels::project(x, c),
        curvature: c,
    })
}

/// Möbius addition `x ⊕_c y`, projected back inside the ball.
pub fn mobius_add(x: &BallPoint, y: &BallPoint) -> Result<BallPoint> {
    let c = same_curvature(x, y)?;
    let sum = kernels::mobius_add(&x.coords, &y.coords, c);
    Ok(BallPoint {
        coords: kernels::project(&sum, c),
        curvature: c,
    })
}

pub fn expmap0(v: &[f64], c: f64) -> Result<BallPoint> {
    check_curvature(c)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid!("tangent vector has non-finite entries"));
    }
    let y = kernels::expmap0(v, c);
    Ok(BallPoint {
        coords: kernels::project(&y, c),
        curvature: c,
    })
}

pub fn logmap0(y: &BallPoint) -> Result<Vec<f64>> {
    if libm::sqrt(y.curvature) * norm(&y.coords) >= 1.0 {
        return Err(invalid!("logmap0 requires a point strictly inside the ball"));
    }
    Ok(kernels::logmap0(&y.coords, y.curvature))
}

/// Geodesic distance `(2 / sqrt(c)) artanh(sqrt(c) |(-x) ⊕_c y|)`.
pub fn poincare_distance(x: &BallPoint, y: &BallPoint) -> Result<f64> {
    let c = same_curvature(x, y)?;
    Ok(kernels::distance(&x.coords, &y.coords, c))
}

/// Unchecked forward maps and their vector-Jacobian products.
///
/// Every `*_vjp` function takes the upstream gradient `g` with respect to the
/// output and returns the gradients with respect to each input, curvature
/// last.
pub mod kernels {
    use alloc::vec::Vec;

    use super::BALL_MARGIN;
    use crate::numerics::{axpy, dot, norm, sq_norm};

    const SERIES_CUTOFF: f64 = 1e-2;

    /// `tanh(u) / u`
    fn tanh_ratio(u: f64) -> f64 {
        if u < SERIES_CUTOFF {
            let u2 = u * u;
            1.0 - u2 / 3.0 + 2.0 * u2 * u2 / 15.0
        } else {
            libm::tanh(u) / u
        }
    }

    /// `(d/du)(tanh(u) / u) / u`
    fn tanh_ratio_slope(u: f64) -> f64 {
        if u < SERIES_CUTOFF {
            let u2 = u * u;
            -2.0 / 3.0 + 8.0 * u2 / 15.0 - 34.0 * u2 * u2 / 105.0
        } else {
            let t = libm::tanh(u);
            (u * (1.0 - t * t) - t) / (u * u * u)
        }
    }

    /// `artanh(u) / u`
    pub(crate) fn artanh_ratio(u: f64) -> f64 {
        if u < SERIES_CUTOFF {
            let u2 = u * u;
            1.0 + u2 / 3.0 + u2 * u2 / 5.0
        } else {
            libm::atanh(u) / u
        }
    }

    /// `(d/du)(artanh(u) / u) / u`
    fn artanh_ratio_slope(u: f64) -> f64 {
        if u < SERIES_CUTOFF {
            let u2 = u * u;
            2.0 / 3.0 + 4.0 * u2 / 5.0 + 6.0 * u2 * u2 / 7.0
        } else {
            (u / (1.0 - u * u) - libm::atanh(u)) / (u * u * u)
        }
    }

    fn max_radius(c: f64) -> f64 {
        (1.0 - BALL_MARGIN) / libm::sqrt(c)
    }

    pub fn project(x: &[f64], c: f64) -> Vec<f64> {
        let n = norm(x);
        let r = max_radius(c);
        if n > r {
            x.iter().map(|v| v * r / n).collect()
        } else {
            x.to_vec()
        }
    }

    pub fn project_vjp(x: &[f64], c: f64, g: &[f64]) -> (Vec<f64>, f64) {
        let n = norm(x);
        let r = max_radius(c);
        if n > r {
            let s = r / n;
            let gx_dot = dot(g, x);
            let gx = g
                .iter()
                .zip(x)
                .map(|(gi, xi)| s * (gi - gx_dot * xi / (n * n)))
                .collect();
            // y = x r / n with r ∝ c^{-1/2}
            let gc = -s * gx_dot / (2.0 * c);
            (gx, gc)
        } else {
            (g.to_vec(), 0.0)
        }
    }

    /// Radial map `v -> f(sqrt(c)|v|) v`; shared VJP for exp/log maps.
    fn radial_vjp(v: &[f64], c: f64, g: &[f64], ratio: f64, slope: f64) -> (Vec<f64>, f64) {
        let gv_dot = dot(g, v);
        let mut gv: Vec<f64> = g.iter().map(|gi| ratio * gi).collect();
        axpy(gv_dot * slope * c, v, &mut gv);
        let gc = gv_dot * slope * sq_norm(v) / 2.0;
        (gv, gc)
    }

    pub fn expmap0(v: &[f64], c: f64) -> Vec<f64> {
        let f = tanh_ratio(libm::sqrt(c) * norm(v));
        v.iter().map(|x| f * x).collect()
    }

    pub fn expmap0_vjp(v: &[f64], c: f64, g: &[f64]) -> (Vec<f64>, f64) {
        let u = libm::sqrt(c) * norm(v);
        radial_vjp(v, c, g, tanh_ratio(u), tanh_ratio_slope(u))
    }

    pub fn logmap0(y: &[f64], c: f64) -> Vec<f64> {
        let f = artanh_ratio(libm::sqrt(c) * norm(y));
        y.iter().map(|x| f * x).collect()
    }

    pub fn logmap0_vjp(y: &[f64], c: f64, g: &[f64]) -> (Vec<f64>, f64) {
        let u = libm::sqrt(c) * norm(y);
        radial_vjp(y, c, g, artanh_ratio(u), artanh_ratio_slope(u))
    }

    struct MobiusTerms {
        xy: f64,
        xx: f64,
        yy: f64,
        a: f64,
        b: f64,
        d: f64,
    }

    fn mobius_terms(x: &[f64], y: &[f64], c: f64) -> MobiusTerms {
        let xy = dot(x, y);
        let xx = sq_norm(x);
        let yy = sq_norm(y);
        MobiusTerms {
            xy,
            xx,
            yy,
            a: 1.0 + 2.0 * c * xy + c * yy,
            b: 1.0 - c * xx,
            d: 1.0 + 2.0 * c * xy + c * c * xx * yy,
        }
    }

    pub fn mobius_add(x: &[f64], y: &[f64], c: f64) -> Vec<f64> {
        let t = mobius_terms(x, y, c);
        x.iter().zip(y).map(|(xi, yi)| (t.a * xi + t.b * yi) / t.d).collect()
    }

    pub fn mobius_add_vjp(x: &[f64], y: &[f64], c: f64, g: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let t = mobius_terms(x, y, c);
        let gx_dot = dot(g, x);
        let gy_dot = dot(g, y);
        let s = (t.a * gx_dot + t.b * gy_dot) / t.d;
        let inv_d = 1.0 / t.d;

        let gx = (0..x.len())
            .map(|i| {
                let num = t.a * g[i] + 2.0 * c * gx_dot * y[i] - 2.0 * c * gy_dot * x[i];
                let dd = 2.0 * c * y[i] + 2.0 * c * c * t.yy * x[i];
                inv_d * (num - s * dd)
            })
            .collect();
        let gy = (0..y.len())
            .map(|i| {
                let num = t.b * g[i] + gx_dot * (2.0 * c * x[i] + 2.0 * c * y[i]);
                let dd = 2.0 * c * x[i] + 2.0 * c * c * t.xx * y[i];
                inv_d * (num - s * dd)
            })
            .collect();
        let da = 2.0 * t.xy + t.yy;
        let db = -t.xx;
        let dd = 2.0 * t.xy + 2.0 * c * t.xx * t.yy;
        let gc = inv_d * (da * gx_dot + db * gy_dot - s * dd);
        (gx, gy, gc)
    }

    struct GyroNorm {
        /// `|(-x) ⊕_c y|^2`
        n2: f64,
        diff: f64,
        q: f64,
        /// `1 - c |(-x) ⊕_c y|^2`, from the conformal factors
        gap: f64,
        xy: f64,
        xx: f64,
        yy: f64,
    }

    /// `|(-x) ⊕_c y|^2` in closed form, `|x - y|^2 / q` with
    /// `q = 1 - 2c<x,y> + c^2|x|^2|y|^2 = (1 - c|x|^2)(1 - c|y|^2) + c|x - y|^2`.
    ///
    /// The second form of `q` is a sum of non-negative terms, so nearby points
    /// close to the boundary keep full relative precision.
    fn gyro_sq_norm(x: &[f64], y: &[f64], c: f64) -> GyroNorm {
        let diff: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        let xx = sq_norm(x);
        let yy = sq_norm(y);
        let p = (1.0 - c * xx) * (1.0 - c * yy);
        let q = p + c * diff;
        GyroNorm {
            n2: diff / q,
            diff,
            q,
            gap: p / q,
            xy: dot(x, y),
            xx,
            yy,
        }
    }

    /// `artanh(u) / u` given `gap = 1 - u^2`, which is accurate near the boundary
    /// where `1 - u` itself is not.
    fn artanh_ratio_gap(u: f64, gap: f64) -> f64 {
        if u < 0.5 || gap <= 0.0 {
            artanh_ratio(u)
        } else {
            (libm::log1p(u) - 0.5 * libm::log(gap)) / u
        }
    }

    pub fn distance(x: &[f64], y: &[f64], c: f64) -> f64 {
        let g = gyro_sq_norm(x, y, c);
        let n = libm::sqrt(g.n2);
        2.0 * n * artanh_ratio_gap(libm::sqrt(c) * n, g.gap)
    }

    pub fn sq_distance(x: &[f64], y: &[f64], c: f64) -> f64 {
        let d = distance(x, y, c);
        d * d
    }

    /// VJP of the squared distance for a scalar upstream gradient `g`.
    pub fn sq_distance_vjp(x: &[f64], y: &[f64], c: f64, g: f64) -> (Vec<f64>, Vec<f64>, f64) {
        let GyroNorm {
            n2,
            diff,
            q,
            gap,
            xy,
            xx,
            yy,
        } = gyro_sq_norm(x, y, c);
        let n = libm::sqrt(n2);
        let u = libm::sqrt(c) * n;
        let ratio = artanh_ratio_gap(u, gap);
        let d = 2.0 * n * ratio;
        let gap = if gap > 0.0 { gap } else { 1.0 - u * u };
        // d(d^2)/d(n^2) = 4 ratio / (1 - u^2)
        let k = g * 4.0 * ratio / gap;
        let e_q2 = diff / (q * q);
        let gx = (0..x.len())
            .map(|i| {
                let dn2 = 2.0 * (x[i] - y[i]) / q - e_q2 * (-2.0 * c * y[i] + 2.0 * c * c * yy * x[i]);
                k * dn2
            })
            .collect();
        let gy = (0..y.len())
            .map(|i| {
                let dn2 = -2.0 * (x[i] - y[i]) / q - e_q2 * (-2.0 * c * x[i] + 2.0 * c * c * xx * y[i]);
                k * dn2
            })
            .collect();
        let dn2_dc = -e_q2 * (-2.0 * xy + 2.0 * c * xx * yy);
        let slope = if u < SERIES_CUTOFF {
            artanh_ratio_slope(u)
        } else {
            (u / gap - ratio * u) / (u * u * u)
        };
        let gc = k * dn2_dc + g * 2.0 * d * n * n * n * slope;
        (gx, gy, gc)
    }
}

/// Squared Euclidean norm of the difference, used by tests and oracles.
pub fn euclidean_sq_distance(x: &[f64], y: &[f64]) -> f64 {
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    sq_norm(&diff)
}
