//! Small dense vector helpers and an incremental Householder basis.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scaled(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Orthonormal basis grown one vector at a time by Householder reflections.
///
/// After `r` pushes, `Q = H_1 ... H_r` has the span of the accepted vectors as
/// its first `r` columns and an orthonormal complement as the remaining ones.
#[derive(Debug, Clone)]
pub struct OrthoBasis {
    dim: usize,
    reflectors: Vec<Vec<f64>>,
    betas: Vec<f64>,
    diag: Vec<f64>,
}

impl OrthoBasis {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            reflectors: Vec::new(),
            betas: Vec::new(),
            diag: Vec::new(),
        }
    }

    /// Basis of the span of `vectors`, dropping those within `tol` (relative)
    /// of the span of their predecessors.
    pub fn from_vectors<'a>(dim: usize, vectors: impl IntoIterator<Item = &'a [f64]>, tol: f64) -> Self {
        let mut b = Self::new(dim);
        for v in vectors {
            b.push(v, tol);
        }
        b
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.reflectors.len()
    }

    /// Signed diagonal entries of the triangular factor, one per accepted vector.
    pub fn r_diagonal(&self) -> &[f64] {
        &self.diag
    }

    fn reflect(&self, k: usize, z: &mut [f64]) {
        let v = &self.reflectors[k];
        let s: f64 = (k..self.dim).map(|i| v[i] * z[i]).sum::<f64>() * self.betas[k];
        for i in k..self.dim {
            z[i] -= s * v[i];
        }
    }

    /// Coordinates `Q^T y`: the first `rank` entries lie in the span.
    pub fn coordinates(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.dim);
        let mut z = y.to_vec();
        for k in 0..self.rank() {
            self.reflect(k, &mut z);
        }
        z
    }

    fn expand(&self, mut z: Vec<f64>) -> Vec<f64> {
        for k in (0..self.rank()).rev() {
            self.reflect(k, &mut z);
        }
        z
    }

    pub fn projection_norm(&self, y: &[f64]) -> f64 {
        norm(&self.coordinates(y)[..self.rank()])
    }

    pub fn residual_norm(&self, y: &[f64]) -> f64 {
        norm(&self.coordinates(y)[self.rank()..])
    }

    /// Orthogonal projection of `y` onto the span.
    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        let mut z = self.coordinates(y);
        for zi in z[self.rank()..].iter_mut() {
            *zi = 0.0;
        }
        self.expand(z)
    }

    /// Orthogonal projection of `y` onto the complement of the span.
    pub fn project_complement(&self, y: &[f64]) -> Vec<f64> {
        let mut z = self.coordinates(y);
        for zi in z[..self.rank()].iter_mut() {
            *zi = 0.0;
        }
        self.expand(z)
    }

    /// Column `i` of `Q`; indices below `rank` span the accepted vectors.
    pub fn column(&self, i: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.dim];
        e[i] = 1.0;
        self.expand(e)
    }

    pub fn span_basis(&self) -> Vec<Vec<f64>> {
        (0..self.rank()).map(|i| self.column(i)).collect()
    }

    pub fn complement_basis(&self) -> Vec<Vec<f64>> {
        (self.rank()..self.dim).map(|i| self.column(i)).collect()
    }

    /// Adds `y` if its residual exceeds `tol * |y|`; returns whether it was kept.
    pub fn push(&mut self, y: &[f64], tol: f64) -> bool {
        let k = self.rank();
        if k == self.dim {
            return false;
        }
        let z = self.coordinates(y);
        let tail = norm(&z[k..]);
        let total = norm(y);
        if total == 0.0 || tail <= tol * total {
            return false;
        }
        let alpha = if z[k] >= 0.0 { -tail } else { tail };
        let mut v = vec![0.0; self.dim];
        v[k..].copy_from_slice(&z[k..]);
        v[k] -= alpha;
        let vv: f64 = v[k..].iter().map(|x| x * x).sum();
        self.reflectors.push(v);
        self.betas.push(2.0 / vv);
        self.diag.push(alpha);
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_are_orthonormal() {
        let vs = [vec![1.0, 2.0, 0.5, -1.0], vec![0.0, 1.0, 3.0, 1.0]];
        let b = OrthoBasis::from_vectors(4, vs.iter().map(|v| v.as_slice()), 1e-12);
        assert_eq!(b.rank(), 2);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot(&b.column(i), &b.column(j)) - want).abs() < 1e-12);
            }
        }
        for v in &vs {
            assert!(b.residual_norm(v) < 1e-12);
            let p = b.project(v);
            assert!(norm(&sub(&p, v)) < 1e-12);
        }
    }

    #[test]
    fn dependent_vectors_are_rejected() {
        let mut b = OrthoBasis::new(3);
        assert!(b.push(&[1.0, 1.0, 0.0], 1e-12));
        assert!(!b.push(&[2.0, 2.0, 0.0], 1e-12));
        assert!(!b.push(&[0.0, 0.0, 0.0], 1e-12));
        assert_eq!(b.rank(), 1);
        let c = b.project_complement(&[1.0, 0.0, 0.0]);
        assert!((c[0] - 0.5).abs() < 1e-15 && (c[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn projection_of_unit_axis() {
        let b = OrthoBasis::from_vectors(3, [[1.0, 0.0, 0.0].as_slice()], 0.0);
        assert!((b.projection_norm(&[3.0, 4.0, 0.0]) - 3.0).abs() < 1e-15);
        assert!((b.residual_norm(&[3.0, 4.0, 0.0]) - 4.0).abs() < 1e-15);
    }
}
