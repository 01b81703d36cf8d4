//! Hypercube sign vectors, sign matrices and the concentration estimator.

use crate::linalg::OrthoBasis;
use crate::tape::{RandomTape, TapeError};
use thiserror::Error;

/// Largest dimension accepted by exhaustive concentration enumeration.
pub const EXHAUSTIVE_MAX_DIM: usize = 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaseError {
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error("exhaustive enumeration needs d <= {EXHAUSTIVE_MAX_DIM}, got d = {0}")]
    TooLarge(usize),
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error("malformed sign matrix: {0}")]
    Parse(String),
}

/// `scale * s` for a sign vector `s` in `{-1, +1}^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseVector {
    signs: Vec<i8>,
    scale: f64,
}

/// `sum_i s_i x_i` accumulated in index order.
pub fn signed_sum(signs: &[i8], x: &[f64]) -> f64 {
    debug_assert_eq!(signs.len(), x.len());
    let mut acc = 0.0;
    for (s, xi) in signs.iter().zip(x) {
        if *s > 0 {
            acc += xi;
        } else {
            acc -= xi;
        }
    }
    acc
}

impl BaseVector {
    pub fn from_signs(signs: Vec<i8>, scale: f64) -> Self {
        assert!(signs.iter().all(|s| *s == 1 || *s == -1), "entries must be +-1");
        assert!(scale > 0.0);
        Self { signs, scale }
    }

    pub fn dim(&self) -> usize {
        self.signs.len()
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn norm(&self) -> f64 {
        self.scale * (self.signs.len() as f64).sqrt()
    }

    pub fn entries(&self) -> Vec<f64> {
        self.signs.iter().map(|s| f64::from(*s) * self.scale).collect()
    }

    /// Entries multiplied by `factor`, each computed as `(factor * scale) * s`.
    pub fn entries_times(&self, factor: f64) -> Vec<f64> {
        let c = factor * self.scale;
        self.signs.iter().map(|s| f64::from(*s) * c).collect()
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.scale * signed_sum(&self.signs, x)
    }

    pub fn negated(&self) -> Self {
        Self {
            signs: self.signs.iter().map(|s| -s).collect(),
            scale: self.scale,
        }
    }
}

pub fn sample_base_vector(d: usize, scale: f64, tape: &mut RandomTape) -> Result<BaseVector, BaseError> {
    if d == 0 {
        return Err(BaseError::Invalid("d must be positive".into()));
    }
    if tape.remaining() < d as u64 {
        return Err(TapeError::Underflow {
            requested: d as u64,
            remaining: tape.remaining(),
        }
        .into());
    }
    let mut signs = Vec::with_capacity(d);
    for _ in 0..d {
        signs.push(if tape.read_bit()? { 1 } else { -1 });
    }
    Ok(BaseVector::from_signs(signs, scale))
}

/// `n x d` matrix with `+-1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SignMatrix {
    d: usize,
    rows: Vec<BaseVector>,
}

pub fn sample_sign_matrix(d: usize, n: usize, tape: &mut RandomTape) -> Result<SignMatrix, BaseError> {
    if n == 0 || n > d {
        return Err(BaseError::Invalid(format!("need 1 <= n <= d, got n = {n}, d = {d}")));
    }
    let rows = (0..n)
        .map(|_| sample_base_vector(d, 1.0, tape))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SignMatrix { d, rows })
}

impl SignMatrix {
    pub fn from_rows(d: usize, rows: Vec<BaseVector>) -> Result<Self, BaseError> {
        if rows.iter().any(|r| r.dim() != d || r.scale() != 1.0) {
            return Err(BaseError::Invalid("rows must be unscaled sign vectors of length d".into()));
        }
        Ok(Self { d, rows })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[BaseVector] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &BaseVector {
        &self.rows[i]
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.dot(x)).collect()
    }

    /// Flips entry `(i, j)`; used for fault injection.
    pub fn flip(&mut self, i: usize, j: usize) {
        self.rows[i].signs[j] = -self.rows[i].signs[j];
    }

    /// Orthonormal basis whose span is the row space.
    pub fn row_basis(&self) -> OrthoBasis {
        let rows: Vec<Vec<f64>> = self.rows.iter().map(|r| r.entries()).collect();
        OrthoBasis::from_vectors(self.d, rows.iter().map(|r| r.as_slice()), 1e-10)
    }

    /// Text form: header `d n 1`, then one line of `+`/`-` per row.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} 1\n", self.d, self.n());
        for r in &self.rows {
            out.push_str(&signs_to_line(r.signs()));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, BaseError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| BaseError::Parse("empty input".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(BaseError::Parse(format!("bad header {header:?}")));
        }
        let d: usize = fields[0].parse().map_err(|_| BaseError::Parse("bad d".into()))?;
        let n: usize = fields[1].parse().map_err(|_| BaseError::Parse("bad n".into()))?;
        let scale: f64 = fields[2].parse().map_err(|_| BaseError::Parse("bad scale".into()))?;
        if scale != 1.0 {
            return Err(BaseError::Parse(format!("sign matrix scale must be 1, got {scale}")));
        }
        let rows = (0..n)
            .map(|i| {
                let line = lines
                    .next()
                    .ok_or_else(|| BaseError::Parse(format!("missing row {i}")))?;
                Ok(BaseVector::from_signs(line_to_signs(line.trim(), d)?, 1.0))
            })
            .collect::<Result<Vec<_>, BaseError>>()?;
        if lines.next().is_some() {
            return Err(BaseError::Parse("trailing rows".into()));
        }
        Self::from_rows(d, rows)
    }

    /// Row-major bits, `1` for `+1`, least significant bit first, rows padded to bytes.
    pub fn to_packed(&self) -> Vec<u8> {
        let row_bytes = self.d.div_ceil(8);
        let mut out = vec![0u8; row_bytes * self.n()];
        for (i, r) in self.rows.iter().enumerate() {
            for (j, s) in r.signs().iter().enumerate() {
                if *s > 0 {
                    out[i * row_bytes + j / 8] |= 1 << (j % 8);
                }
            }
        }
        out
    }

    pub fn from_packed(d: usize, n: usize, bytes: &[u8]) -> Result<Self, BaseError> {
        let row_bytes = d.div_ceil(8);
        if bytes.len() != row_bytes * n {
            return Err(BaseError::Parse(format!(
                "expected {} bytes, got {}",
                row_bytes * n,
                bytes.len()
            )));
        }
        let rows = (0..n)
            .map(|i| {
                let signs = (0..d)
                    .map(|j| if bytes[i * row_bytes + j / 8] >> (j % 8) & 1 == 1 { 1 } else { -1 })
                    .collect();
                BaseVector::from_signs(signs, 1.0)
            })
            .collect();
        Self::from_rows(d, rows)
    }
}

pub(crate) fn signs_to_line(signs: &[i8]) -> String {
    signs.iter().map(|s| if *s > 0 { '+' } else { '-' }).collect()
}

pub(crate) fn line_to_signs(line: &str, d: usize) -> Result<Vec<i8>, BaseError> {
    let signs = line
        .chars()
        .map(|c| match c {
            '+' => Ok(1),
            '-' => Ok(-1),
            other => Err(BaseError::Parse(format!("unexpected character {other:?}"))),
        })
        .collect::<Result<Vec<i8>, _>>()?;
    if signs.len() != d {
        return Err(BaseError::Parse(format!("row has {} entries, expected {d}", signs.len())));
    }
    Ok(signs)
}

/// `k` orthonormal columns in `R^d` from QR of tape-driven uniform entries.
pub fn random_orthonormal_columns(d: usize, k: usize, tape: &mut RandomTape) -> Result<Vec<Vec<f64>>, BaseError> {
    if k == 0 || k > d {
        return Err(BaseError::Invalid(format!("need 1 <= k <= d, got k = {k}, d = {d}")));
    }
    let mut basis = OrthoBasis::new(d);
    while basis.rank() < k {
        let v = (0..d).map(|_| tape.read_symmetric()).collect::<Result<Vec<_>, _>>()?;
        basis.push(&v, 1e-6);
    }
    Ok(basis.span_basis())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConcentrationMode {
    Exhaustive,
    MonteCarlo { trials: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationEstimate {
    pub d: usize,
    pub k: usize,
    pub t: f64,
    pub hits: u64,
    pub total: u64,
    pub exhaustive: bool,
}

impl ConcentrationEstimate {
    pub fn probability(&self) -> f64 {
        self.hits as f64 / self.total as f64
    }

    /// `-log2(p) / k`; infinite when no hit was seen.
    pub fn fitted_exponent(&self) -> f64 {
        let p = self.probability();
        if p == 0.0 {
            f64::INFINITY
        } else {
            -p.log2() / self.k as f64
        }
    }
}

/// Counts sign vectors `h` with `max_j |z_j^T h| <= t`, one count per prefix of `columns`.
///
/// `counts[c]` uses the first `c + 1` columns. Enumeration walks the Gray code, so each
/// step changes one coordinate and each projection is updated in O(1).
pub fn exhaustive_prefix_counts(columns: &[Vec<f64>], t: f64) -> Result<Vec<u64>, BaseError> {
    let d = columns.first().map_or(0, |c| c.len());
    if d == 0 {
        return Err(BaseError::Invalid("need at least one nonempty column".into()));
    }
    if d > EXHAUSTIVE_MAX_DIM {
        return Err(BaseError::TooLarge(d));
    }
    let k = columns.len();
    let mut h = vec![-1.0f64; d];
    let mut proj: Vec<f64> = columns.iter().map(|z| -z.iter().sum::<f64>()).collect();
    let mut counts = vec![0u64; k];
    let tally = |proj: &[f64], counts: &mut [u64]| {
        for (c, p) in proj.iter().enumerate() {
            if p.abs() > t {
                break;
            }
            counts[c] += 1;
        }
    };
    tally(&proj, &mut counts);
    for g in 1u64..(1u64 << d) {
        let i = g.trailing_zeros() as usize;
        h[i] = -h[i];
        let step = 2.0 * h[i];
        for (p, z) in proj.iter_mut().zip(columns) {
            *p += step * z[i];
        }
        tally(&proj, &mut counts);
    }
    Ok(counts)
}

fn monte_carlo_prefix_counts(
    columns: &[Vec<f64>],
    t: f64,
    trials: u64,
    tape: &mut RandomTape,
) -> Result<Vec<u64>, BaseError> {
    let d = columns[0].len();
    let mut counts = vec![0u64; columns.len()];
    for _ in 0..trials {
        let h = sample_base_vector(d, 1.0, tape)?;
        for (c, z) in columns.iter().enumerate() {
            if h.dot(z).abs() > t {
                break;
            }
            counts[c] += 1;
        }
    }
    Ok(counts)
}

/// Estimates `P(|Z^T h|_inf <= t)` for each `k` in `ks`, with every `Z_k` the first `k`
/// columns of one sampled orthonormal frame.
pub fn concentration_profile(
    d: usize,
    ks: &[usize],
    t: f64,
    mode: ConcentrationMode,
    tape: &mut RandomTape,
) -> Result<Vec<ConcentrationEstimate>, BaseError> {
    if !(t > 0.0 && t <= 0.5) {
        return Err(BaseError::Invalid(format!("t must lie in (0, 1/2], got {t}")));
    }
    if let ConcentrationMode::Exhaustive = mode {
        if d > EXHAUSTIVE_MAX_DIM {
            return Err(BaseError::TooLarge(d));
        }
    }
    let kmax = ks.iter().copied().max().unwrap_or(0);
    let columns = random_orthonormal_columns(d, kmax, tape)?;
    let (counts, total, exhaustive) = match mode {
        ConcentrationMode::Exhaustive => (exhaustive_prefix_counts(&columns, t)?, 1u64 << d, true),
        ConcentrationMode::MonteCarlo { trials } => {
            if trials == 0 {
                return Err(BaseError::Invalid("trials must be positive".into()));
            }
            (monte_carlo_prefix_counts(&columns, t, trials, tape)?, trials, false)
        }
    };
    Ok(ks
        .iter()
        .map(|&k| ConcentrationEstimate {
            d,
            k,
            t,
            hits: counts[k - 1],
            total,
            exhaustive,
        })
        .collect())
}

pub fn estimate_base_concentration(
    d: usize,
    k: usize,
    t: f64,
    mode: ConcentrationMode,
    tape: &mut RandomTape,
) -> Result<ConcentrationEstimate, BaseError> {
    Ok(concentration_profile(d, &[k], t, mode, tape)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_coordinate_vector() {
        let mut tape = RandomTape::new(0);
        let first = tape.rewound().read_bit().unwrap();
        let v = sample_base_vector(1, 1.0, &mut tape).unwrap();
        assert_eq!(v.signs(), &[if first { 1 } else { -1 }]);
        assert_eq!(v.norm(), 1.0);
        assert_eq!(tape.cursor(), 1);
    }

    #[test]
    fn norm_is_scale_root_d() {
        let v = sample_base_vector(4, 1.0, &mut RandomTape::new(9)).unwrap();
        assert_eq!(v.norm(), 2.0);
        assert_eq!(crate::linalg::norm(&v.entries()), 2.0);
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_base_vector(16, 0.25, &mut RandomTape::new(7)).unwrap();
        let b = sample_base_vector(16, 0.25, &mut RandomTape::new(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn underflow_is_an_error() {
        let mut t = RandomTape::with_len(1, 5);
        assert!(matches!(sample_base_vector(8, 1.0, &mut t), Err(BaseError::Tape(_))));
        assert_eq!(t.cursor(), 0);
    }

    #[test]
    fn text_and_packed_round_trip() {
        let m = sample_sign_matrix(11, 5, &mut RandomTape::new(3)).unwrap();
        assert_eq!(SignMatrix::from_text(&m.to_text()).unwrap(), m);
        assert_eq!(SignMatrix::from_packed(11, 5, &m.to_packed()).unwrap(), m);
        assert_eq!(m.to_packed().len(), 10);
    }

    #[test]
    fn identity_columns_never_concentrate() {
        let cols = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(exhaustive_prefix_counts(&cols, 0.5).unwrap(), vec![0, 0]);
    }

    #[test]
    fn exhaustive_rejects_large_d() {
        let r = estimate_base_concentration(25, 2, 0.5, ConcentrationMode::Exhaustive, &mut RandomTape::new(1));
        assert_eq!(r, Err(BaseError::TooLarge(25)));
    }
}
