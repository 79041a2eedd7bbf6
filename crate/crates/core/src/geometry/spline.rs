//! Cubic-spline curves with exactly pinned endpoints.
//!
//! A curve is the straight line between its endpoints plus, per output
//! dimension, a combination of 8 cubic B-spline bumps that all vanish (with
//! zero slope) at t = 0 and t = 1. The endpoints therefore hold by
//! construction no matter what the free coefficients are, and a zero
//! coefficient vector gives the straight line.

/// Free coefficients per dimension.
pub const NUM_BASIS: usize = 8;

/// Knot scale: basis k (1-based) is bump(SCALE * t - (k - 1)), supported on
/// [(k-1)/SCALE, (k+3)/SCALE] which stays inside [0, 1] for k = 1..8.
const SCALE: f64 = 11.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SplineCurve {
    pub e0: Vec<f64>,
    pub e1: Vec<f64>,
    /// dim x NUM_BASIS row-major deviation coefficients.
    pub coeffs: Vec<f64>,
}

impl SplineCurve {
    /// The straight line from e0 to e1.
    pub fn straight(e0: Vec<f64>, e1: Vec<f64>) -> Self {
        assert_eq!(e0.len(), e1.len(), "endpoint dimensions must match");
        let dim = e0.len();
        SplineCurve {
            e0,
            e1,
            coeffs: vec![0.0; dim * NUM_BASIS],
        }
    }

    pub fn dim(&self) -> usize {
        self.e0.len()
    }

    /// gamma(t).
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let basis = basis_values(t);
        let dim = self.dim();
        let mut out = Vec::with_capacity(dim);
        for d in 0..dim {
            let mut v = (1.0 - t) * self.e0[d] + t * self.e1[d];
            let row = &self.coeffs[d * NUM_BASIS..(d + 1) * NUM_BASIS];
            for (c, b) in row.iter().zip(&basis) {
                v += c * b;
            }
            out.push(v);
        }
        out
    }

    /// d(gamma)/dt, analytic.
    pub fn velocity(&self, t: f64) -> Vec<f64> {
        let dbasis = basis_derivatives(t);
        let dim = self.dim();
        let mut out = Vec::with_capacity(dim);
        for d in 0..dim {
            let mut v = self.e1[d] - self.e0[d];
            let row = &self.coeffs[d * NUM_BASIS..(d + 1) * NUM_BASIS];
            for (c, b) in row.iter().zip(&dbasis) {
                v += c * b;
            }
            out.push(v);
        }
        out
    }
}

/// Values of the 8 basis bumps at t.
pub fn basis_values(t: f64) -> [f64; NUM_BASIS] {
    let mut out = [0.0; NUM_BASIS];
    for (k, o) in out.iter_mut().enumerate() {
        *o = bump(SCALE * t - k as f64);
    }
    out
}

/// Derivatives (d/dt) of the basis bumps at t.
pub fn basis_derivatives(t: f64) -> [f64; NUM_BASIS] {
    let mut out = [0.0; NUM_BASIS];
    for (k, o) in out.iter_mut().enumerate() {
        *o = SCALE * bump_derivative(SCALE * t - k as f64);
    }
    out
}

/// Cardinal cubic B-spline bump on [0, 4]: C^2, zero value and slope at both
/// support edges, peak 2/3 at u = 2.
fn bump(u: f64) -> f64 {
    if !(0.0..4.0).contains(&u) {
        return 0.0;
    }
    if u < 1.0 {
        u * u * u / 6.0
    } else if u < 2.0 {
        let v = u - 1.0;
        (-3.0 * v * v * v + 3.0 * v * v + 3.0 * v + 1.0) / 6.0
    } else if u < 3.0 {
        let w = u - 2.0;
        (3.0 * w * w * w - 6.0 * w * w + 4.0) / 6.0
    } else {
        let q = 4.0 - u;
        q * q * q / 6.0
    }
}

fn bump_derivative(u: f64) -> f64 {
    if !(0.0..4.0).contains(&u) {
        return 0.0;
    }
    if u < 1.0 {
        u * u / 2.0
    } else if u < 2.0 {
        let v = u - 1.0;
        (-9.0 * v * v + 6.0 * v + 3.0) / 6.0
    } else if u < 3.0 {
        let w = u - 2.0;
        (9.0 * w * w - 12.0 * w) / 6.0
    } else {
        let q = 4.0 - u;
        -q * q / 2.0
    }
}
