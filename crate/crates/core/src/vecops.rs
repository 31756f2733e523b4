//! Small dense-vector helpers over `f64` slices.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn scale(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| c * x).collect()
}

pub fn scale_in_place(a: &mut [f64], c: f64) {
    a.iter_mut().for_each(|x| *x *= c);
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `y += c * x`
pub fn axpy(c: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += c * xi);
}

/// Unit vector in the direction of `a`; `a` must be nonzero.
pub fn unit(a: &[f64]) -> Vec<f64> {
    scale(a, 1.0 / norm(a))
}

/// Cosine of the angle between two nonzero vectors, clamped to [-1, 1].
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    (dot(a, b) / (norm(a) * norm(b))).clamp(-1.0, 1.0)
}

/// Angle between two nonzero vectors in radians.
///
/// Uses `atan2(|a x b|, a.b)` so that nearly parallel vectors keep full
/// relative precision, which `acos` of the cosine does not.
pub fn angle(a: &[f64], b: &[f64]) -> f64 {
    let ab = dot(a, b);
    let cross_sq = (norm_sq(a) * norm_sq(b) - ab * ab).max(0.0);
    // Recompute the orthogonal component explicitly when the cancellation
    // above would lose everything.
    let cross = if cross_sq < 1e-20 * norm_sq(a) * norm_sq(b) {
        let na = norm_sq(a);
        let coef = ab / na;
        let perp: f64 = b
            .iter()
            .zip(a)
            .map(|(bi, ai)| {
                let r = bi - coef * ai;
                r * r
            })
            .sum();
        (perp * na).sqrt()
    } else {
        cross_sq.sqrt()
    };
    cross.atan2(ab)
}

/// Relative distance `|a-b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_dist(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a).max(norm(b));
    if denom == 0.0 {
        0.0
    } else {
        norm(&sub(a, b)) / denom
    }
}

pub fn rel_diff_scalar(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom == 0.0 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

/// Row-major dense matrix used by the objectives.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }
}
