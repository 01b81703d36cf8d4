//! Robustly independent sets, the orthonormal extraction `construct_m`, and the
//! extension of a ball-constrained function to all of `R^d`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::instance::{Branch, FirstOrderOracle, FirstOrderResponse, OracleError};
use crate::linalg::{norm, OrthoBasis};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("vector {index} has projection ratio {ratio} > 1 - delta = {bound}")]
    NotRobust { index: usize, ratio: f64, bound: f64 },
    #[error("vector {0} is zero")]
    ZeroVector(usize),
    #[error("delta must lie in (0, 1], got {0}")]
    BadDelta(f64),
    #[error("need 1 <= q <= d vectors of equal length")]
    BadShape,
    #[error("diagonal entry {index} is {value:.3e}, below sqrt(delta) = {bound:.3e}")]
    DiagonalBound { index: usize, value: f64, bound: f64 },
    #[error("singular value {value:.3e} below delta/sqrt(d) = {bound:.3e}")]
    SingularValueBound { value: f64, bound: f64 },
    #[error("lift radius must lie in (0, 1), got {0}")]
    BadRadius(f64),
    #[error("x = 0 on the cone branch")]
    ConeVertex,
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustReport {
    /// `|proj_{S_{i-1}}(y_i)| / |y_i|` for each `i`; 0 for the first vector.
    pub ratios: Vec<f64>,
    pub robust: bool,
}

/// Order-dependent projection ratios against `1 - delta`.
pub fn validate_robust_set(vectors: &[Vec<f64>], delta: f64) -> RobustReport {
    let d = vectors.first().map_or(0, |v| v.len());
    let mut basis = OrthoBasis::new(d);
    let mut ratios = Vec::with_capacity(vectors.len());
    for v in vectors {
        let n = norm(v);
        let r = if n == 0.0 { 1.0 } else { basis.projection_norm(v) / n };
        ratios.push(r);
        basis.push(v, 0.0);
    }
    let robust = ratios.iter().all(|r| *r <= 1.0 - delta);
    RobustReport { ratios, robust }
}

/// Unit vectors `y_1..y_q` whose successive projection ratios stay below `1 - delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustSet {
    vectors: Vec<Vec<f64>>,
    delta: f64,
}

impl RobustSet {
    pub fn new(vectors: Vec<Vec<f64>>, delta: f64) -> Result<Self, GeometryError> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(GeometryError::BadDelta(delta));
        }
        let d = vectors.first().map_or(0, |v| v.len());
        if vectors.is_empty() || vectors.len() > d || vectors.iter().any(|v| v.len() != d) {
            return Err(GeometryError::BadShape);
        }
        let mut unit = Vec::with_capacity(vectors.len());
        for (i, v) in vectors.into_iter().enumerate() {
            let n = norm(&v);
            if n == 0.0 {
                return Err(GeometryError::ZeroVector(i));
            }
            unit.push(v.iter().map(|x| x / n).collect::<Vec<_>>());
        }
        let report = validate_robust_set(&unit, delta);
        if let Some(i) = report.ratios.iter().position(|r| *r > 1.0 - delta) {
            return Err(GeometryError::NotRobust {
                index: i,
                ratio: report.ratios[i],
                bound: 1.0 - delta,
            });
        }
        Ok(Self { vectors: unit, delta })
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedColumns {
    /// `floor(q/2)` orthonormal columns.
    pub columns: Vec<Vec<f64>>,
    /// Singular values of the coefficient matrix behind each column.
    pub singular_values: Vec<f64>,
    /// `|v_i|_1` of the right singular vector behind each column.
    pub coefficient_l1: Vec<f64>,
    /// Fewer than two inputs: nothing to extract.
    pub degenerate: bool,
}

impl ExtractedColumns {
    /// `|M^T a|_inf`
    pub fn max_inner(&self, a: &[f64]) -> f64 {
        self.columns
            .iter()
            .map(|m| crate::linalg::dot(m, a).abs())
            .fold(0.0, f64::max)
    }
}

/// `|Y^T a|_inf` over the vectors of a set.
pub fn max_inner(set: &RobustSet, a: &[f64]) -> f64 {
    set.vectors()
        .iter()
        .map(|y| crate::linalg::dot(y, a).abs())
        .fold(0.0, f64::max)
}

/// Orthonormal `m_i = Y v_i / sigma_i` for the `floor(q/2)` largest singular
/// triples of the triangular factor `C` in `Y = B C`.
///
/// Each column satisfies `|m_i^T a| <= |v_i|_1 |Y^T a|_inf / sigma_i`, which
/// is at most `(d / delta) |Y^T a|_inf`.
pub fn construct_m(set: &RobustSet) -> Result<ExtractedColumns, GeometryError> {
    let q = set.len();
    let d = set.dim();
    if q < 2 {
        return Ok(ExtractedColumns {
            columns: Vec::new(),
            singular_values: Vec::new(),
            coefficient_l1: Vec::new(),
            degenerate: true,
        });
    }
    let mut basis = OrthoBasis::new(d);
    for y in set.vectors() {
        basis.push(y, 0.0);
    }
    if basis.rank() < q {
        return Err(GeometryError::DiagonalBound {
            index: basis.rank(),
            value: 0.0,
            bound: set.delta().sqrt(),
        });
    }
    let coords: Vec<Vec<f64>> = set.vectors().iter().map(|y| basis.coordinates(y)).collect();
    let c = DMatrix::from_fn(q, q, |i, j| if i <= j { coords[j][i] } else { 0.0 });
    for i in 0..q {
        let v = c[(i, i)].abs();
        if v < set.delta().sqrt() {
            return Err(GeometryError::DiagonalBound {
                index: i,
                value: v,
                bound: set.delta().sqrt(),
            });
        }
    }
    let svd = c.svd(true, true);
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));
    let bound = set.delta() / (d as f64).sqrt();
    let b_cols = basis.span_basis();
    let mut out = ExtractedColumns {
        columns: Vec::new(),
        singular_values: Vec::new(),
        coefficient_l1: Vec::new(),
        degenerate: false,
    };
    for &k in order.iter().take(q / 2) {
        let sigma = svd.singular_values[k];
        if sigma < bound {
            return Err(GeometryError::SingularValueBound { value: sigma, bound });
        }
        let mut m = vec![0.0; d];
        for (j, bj) in b_cols.iter().enumerate() {
            crate::linalg::axpy(u[(j, k)], bj, &mut m);
        }
        out.columns.push(m);
        out.singular_values.push(sigma);
        out.coefficient_l1.push((0..q).map(|j| vt[(k, j)].abs()).sum());
    }
    Ok(out)
}

/// `min(1, 1/|x|) x`
pub fn clamp_to_ball(x: &[f64]) -> Vec<f64> {
    let n = norm(x);
    if n <= 1.0 {
        x.to_vec()
    } else {
        x.iter().map(|v| v / n).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedValue {
    pub value: f64,
    pub subgradient: Vec<f64>,
    /// The cone term `h` is active (ties included).
    pub cone_active: bool,
}

/// Extension `g = max(f, h)` inside the ball and `g = h` outside, with
/// `h(x) = f(0) + (L/(1-r)) ((1+r)|x| - 2r)`. `f(0)` is queried once.
pub struct LiftedFunction<O> {
    inner: O,
    r: f64,
    lipschitz: f64,
    f0: f64,
}

impl<O: FirstOrderOracle> LiftedFunction<O> {
    pub fn new(mut inner: O, r: f64, lipschitz: f64) -> Result<Self, GeometryError> {
        if !(r > 0.0 && r < 1.0) {
            return Err(GeometryError::BadRadius(r));
        }
        let f0 = inner.query(&vec![0.0; inner.dim()])?.value;
        Ok(Self { inner, r, lipschitz, f0 })
    }

    /// `L (1 + r) / (1 - r)`
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz * (1.0 + self.r) / (1.0 - self.r)
    }

    pub fn radius(&self) -> f64 {
        self.r
    }

    pub fn cone(&self, x: &[f64]) -> f64 {
        cone_value(self.f0, self.r, self.lipschitz, norm(x))
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn eval(&mut self, x: &[f64]) -> Result<LiftedValue, GeometryError> {
        let n = norm(x);
        let h = cone_value(self.f0, self.r, self.lipschitz, n);
        let f = if n < 1.0 { Some(self.inner.query(x)?) } else { None };
        lift_combine(h, n, x, f, self.lipschitz(), self.r)
    }
}

fn cone_value(f0: f64, r: f64, lipschitz: f64, n: f64) -> f64 {
    f0 + lipschitz / (1.0 - r) * ((1.0 + r) * n - 2.0 * r)
}

fn lift_combine(
    h: f64,
    n: f64,
    x: &[f64],
    f: Option<FirstOrderResponse>,
    slope: f64,
    r: f64,
) -> Result<LiftedValue, GeometryError> {
    match f {
        Some(f) if f.value > h => Ok(LiftedValue {
            value: f.value,
            subgradient: f.subgradient,
            cone_active: false,
        }),
        _ => {
            if n == 0.0 {
                if r > 0.0 {
                    return Err(GeometryError::ConeVertex);
                }
                return Ok(LiftedValue {
                    value: h,
                    subgradient: vec![0.0; x.len()],
                    cone_active: true,
                });
            }
            Ok(LiftedValue {
                value: h,
                subgradient: x.iter().map(|v| slope * v / n).collect(),
                cone_active: true,
            })
        }
    }
}

impl<O: FirstOrderOracle> FirstOrderOracle for LiftedFunction<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn query(&mut self, x: &[f64]) -> Result<FirstOrderResponse, OracleError> {
        if x.len() != self.dim() {
            return Err(OracleError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let v = self.eval(x).map_err(|e| match e {
            GeometryError::Oracle(o) => o,
            other => panic!("lifted evaluation failed: {other}"),
        })?;
        Ok(FirstOrderResponse {
            value: v.value,
            subgradient: v.subgradient,
            branch: Branch::Plain,
            attained_index: usize::from(v.cone_active),
            informative: false,
        })
    }
}

/// Lifted oracle that asks the inner oracle for `f(0)` and `f(clamp(x))` on
/// every query, so no value is carried between queries.
pub struct PairedLiftOracle<O> {
    inner: O,
    r: f64,
    lipschitz: f64,
    inner_queries: u64,
    outer_queries: u64,
}

impl<O: FirstOrderOracle> PairedLiftOracle<O> {
    pub fn new(inner: O, r: f64, lipschitz: f64) -> Result<Self, GeometryError> {
        if !(r > 0.0 && r < 1.0) {
            return Err(GeometryError::BadRadius(r));
        }
        Ok(Self {
            inner,
            r,
            lipschitz,
            inner_queries: 0,
            outer_queries: 0,
        })
    }

    pub fn inner_queries(&self) -> u64 {
        self.inner_queries
    }

    pub fn outer_queries(&self) -> u64 {
        self.outer_queries
    }
}

impl<O: FirstOrderOracle> FirstOrderOracle for PairedLiftOracle<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn query(&mut self, x: &[f64]) -> Result<FirstOrderResponse, OracleError> {
        let d = self.dim();
        if x.len() != d {
            return Err(OracleError::Dimension { expected: d, got: x.len() });
        }
        let f0 = self.inner.query(&vec![0.0; d])?.value;
        let fx = self.inner.query(&clamp_to_ball(x))?;
        self.inner_queries += 2;
        self.outer_queries += 1;
        let n = norm(x);
        let h = cone_value(f0, self.r, self.lipschitz, n);
        let slope = self.lipschitz * (1.0 + self.r) / (1.0 - self.r);
        let v = lift_combine(h, n, x, (n < 1.0).then_some(fx), slope, self.r)
            .expect("r > 0 keeps the origin on the inner branch");
        Ok(FirstOrderResponse {
            value: v.value,
            subgradient: v.subgradient,
            branch: Branch::Plain,
            attained_index: usize::from(v.cone_active),
            informative: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::FnOracle;
    use crate::linalg::dot;

    fn norm_oracle(d: usize) -> FnOracle<impl FnMut(&[f64]) -> (f64, Vec<f64>)> {
        FnOracle::new(d, |x: &[f64]| {
            let n = norm(x);
            let g = if n > 0.0 { x.iter().map(|v| v / n).collect() } else { vec![0.0; x.len()] };
            (n, g)
        })
    }

    #[test]
    fn two_axes_give_one_column() {
        let set = RobustSet::new(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], 1.0).unwrap();
        let m = construct_m(&set).unwrap();
        assert_eq!(m.columns.len(), 1);
        assert!((norm(&m.columns[0]) - 1.0).abs() < 1e-12);
        assert!(m.columns[0][2].abs() < 1e-15);
        for i in 0..3 {
            let mut a = vec![0.0; 3];
            a[i] = 1.0;
            assert!(m.max_inner(&a) <= 3.0 * max_inner(&set, &a) + 1e-12);
        }
    }

    #[test]
    fn orthonormal_input_has_unit_singular_values() {
        let vs: Vec<Vec<f64>> = (0..6).map(|i| (0..8).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let set = RobustSet::new(vs, 1.0).unwrap();
        let m = construct_m(&set).unwrap();
        assert_eq!(m.columns.len(), 3);
        assert!(m.singular_values.iter().all(|s| (s - 1.0).abs() < 1e-12));
        assert!(m.coefficient_l1.iter().all(|l| *l <= 6f64.sqrt() + 1e-12));
    }

    #[test]
    fn single_vector_is_degenerate() {
        let set = RobustSet::new(vec![vec![1.0, 0.0]], 0.5).unwrap();
        let m = construct_m(&set).unwrap();
        assert!(m.degenerate && m.columns.is_empty());
    }

    #[test]
    fn repeated_vector_has_ratio_one() {
        let r = validate_robust_set(&[vec![1.0, 2.0], vec![1.0, 2.0]], 0.1);
        assert_eq!(r.ratios[0], 0.0);
        assert!((r.ratios[1] - 1.0).abs() < 1e-12);
        assert!(!r.robust);
        assert!(matches!(
            RobustSet::new(vec![vec![1.0, 2.0], vec![1.0, 2.0]], 0.1),
            Err(GeometryError::NotRobust { index: 1, .. })
        ));
    }

    #[test]
    fn lift_of_norm_outside_ball() {
        let mut g = LiftedFunction::new(norm_oracle(3), 0.5, 1.0).unwrap();
        let v = g.eval(&[2.0, 0.0, 0.0]).unwrap();
        assert!((v.value - 4.0).abs() < 1e-15);
        assert!(v.cone_active);
        assert_eq!(v.subgradient, vec![3.0, 0.0, 0.0]);
        let inside = g.eval(&[0.3, 0.0, 0.1]).unwrap();
        assert_eq!(inside.value, norm(&[0.3, 0.0, 0.1]));
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_to_ball(&[0.5, 0.5]), vec![0.5, 0.5]);
        assert_eq!(clamp_to_ball(&[2.0, 0.0, 0.0]), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn paired_oracle_counts_two_inner_queries() {
        let mut o = PairedLiftOracle::new(norm_oracle(2), 0.5, 1.0).unwrap();
        let a = o.query(&[0.1, 0.2]).unwrap();
        let b = o.query(&[3.0, 4.0]).unwrap();
        assert_eq!(o.inner_queries(), 4);
        assert_eq!(a.value, norm(&[0.1, 0.2]));
        assert!((b.value - 2.0 * (1.5 * 5.0 - 1.0)).abs() < 1e-12);
        assert!((dot(&b.subgradient, &[0.6, 0.8]) - 3.0).abs() < 1e-12);
    }
}
