//! Reference algorithms with explicit state layouts.

use nalgebra::{DMatrix, SymmetricEigen};

use super::{HarnessError, MemAlgorithm, MemoryState};
use crate::base::SignMatrix;
use crate::linalg::{dot, norm, OrthoBasis};
use crate::tape::RandomTape;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// `s0 / sqrt(t + 1)` at step `t` (from 0).
    InverseSqrt(f64),
}

impl StepSchedule {
    pub fn at(&self, t: u32) -> f64 {
        match *self {
            StepSchedule::Constant(s) => s,
            StepSchedule::InverseSqrt(s0) => s0 / (f64::from(t) + 1.0).sqrt(),
        }
    }

    /// Constant step `1 / sqrt(horizon)`.
    pub fn for_horizon(horizon: usize) -> Self {
        StepSchedule::Constant(1.0 / (horizon.max(1) as f64).sqrt())
    }
}

fn project_to_ball(x: &mut [f64]) {
    let n = norm(x);
    if n > 1.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}

/// Stateless algorithm that queries one fixed point forever.
#[derive(Debug, Clone)]
pub struct FixedQuery {
    point: Vec<f64>,
}

impl FixedQuery {
    pub fn new(point: Vec<f64>) -> Self {
        Self { point }
    }

    pub fn origin(d: usize) -> Self {
        Self::new(vec![0.0; d])
    }
}

impl MemAlgorithm for FixedQuery {
    fn name(&self) -> &str {
        "fixed"
    }

    fn dim(&self) -> usize {
        self.point.len()
    }

    fn initial_state(&self, _tape: &mut RandomTape) -> Result<MemoryState, HarnessError> {
        Ok(MemoryState::empty())
    }

    fn propose(&self, _state: &MemoryState, _tape: &mut RandomTape) -> Result<Option<Vec<f64>>, HarnessError> {
        Ok(Some(self.point.clone()))
    }

    fn absorb(
        &self,
        state: &MemoryState,
        _x: &[f64],
        _value: f64,
        _g: &[f64],
        _tape: &mut RandomTape,
    ) -> Result<MemoryState, HarnessError> {
        Ok(state.clone())
    }
}

/// Projected normalized subgradient descent with a fixed-point iterate.
///
/// Each coordinate is a `bits`-bit two's complement integer `q` standing for
/// `q / (2^(bits-1) - 1)`, followed by a 32-bit step counter.
#[derive(Debug, Clone)]
pub struct SubgradientDescent {
    d: usize,
    schedule: StepSchedule,
    bits: u32,
}

impl SubgradientDescent {
    pub fn new(d: usize, schedule: StepSchedule, bits: u32) -> Result<Self, HarnessError> {
        if !(8..=52).contains(&bits) {
            return Err(HarnessError::Invalid(format!("quantization needs 8 <= b <= 52, got {bits}")));
        }
        Ok(Self { d, schedule, bits })
    }

    pub fn state_bits(&self) -> usize {
        self.d * self.bits as usize + 32
    }

    fn qmax(&self) -> f64 {
        ((1u64 << (self.bits - 1)) - 1) as f64
    }

    fn encode(&self, x: &[f64], counter: u32) -> MemoryState {
        let q = self.qmax();
        let mut ints: Vec<i64> = x.iter().map(|v| (v * q).round().clamp(-q, q) as i64).collect();
        let decoded: Vec<f64> = ints.iter().map(|i| *i as f64 / q).collect();
        if norm(&decoded) > 1.0 {
            ints = x.iter().map(|v| (v * q).trunc().clamp(-q, q) as i64).collect();
        }
        let mut w = MemoryState::writer();
        for i in ints {
            w.push_signed(i, self.bits);
        }
        w.push_u32(counter).finish()
    }

    fn decode(&self, state: &MemoryState) -> Result<(Vec<f64>, u32), HarnessError> {
        let q = self.qmax();
        let mut r = state.reader();
        let x = (0..self.d)
            .map(|_| Ok(r.read_signed(self.bits)? as f64 / q))
            .collect::<Result<Vec<_>, HarnessError>>()?;
        Ok((x, r.read_u32()?))
    }
}

impl MemAlgorithm for SubgradientDescent {
    fn name(&self) -> &str {
        "sd"
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn initial_state(&self, _tape: &mut RandomTape) -> Result<MemoryState, HarnessError> {
        Ok(self.encode(&vec![0.0; self.d], 0))
    }

    fn propose(&self, state: &MemoryState, _tape: &mut RandomTape) -> Result<Option<Vec<f64>>, HarnessError> {
        Ok(Some(self.decode(state)?.0))
    }

    fn absorb(
        &self,
        state: &MemoryState,
        _x: &[f64],
        _value: f64,
        g: &[f64],
        _tape: &mut RandomTape,
    ) -> Result<MemoryState, HarnessError> {
        let (mut x, t) = self.decode(state)?;
        let gn = norm(g);
        if gn > 0.0 {
            let s = self.schedule.at(t) / gn;
            for (xi, gi) in x.iter_mut().zip(g) {
                *xi -= s * gi;
            }
            project_to_ball(&mut x);
        }
        Ok(self.encode(&x, t.wrapping_add(1)))
    }
}

/// Central-cut ellipsoid method over the unit ball, every entry stored as f64.
///
/// State: center (`d` values), upper triangle of the shape matrix
/// (`d(d+1)/2` values), a 32-bit cut counter, a 32-bit repair counter and a
/// done flag. In one dimension the update is interval bisection.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    d: usize,
}

#[derive(Debug, Clone)]
struct EllipsoidState {
    center: Vec<f64>,
    shape: DMatrix<f64>,
    cuts: u32,
    repairs: u32,
    done: bool,
}

impl Ellipsoid {
    pub fn new(d: usize) -> Self {
        Self { d }
    }

    /// `64 (d + d(d+1)/2) + 65`
    pub fn state_bits_for(d: usize) -> usize {
        64 * (d + d * (d + 1) / 2) + 65
    }

    pub fn state_bits(&self) -> usize {
        Self::state_bits_for(self.d)
    }

    /// Number of shape repairs recorded in a state.
    pub fn repairs(&self, state: &MemoryState) -> Result<u32, HarnessError> {
        Ok(self.decode(state)?.repairs)
    }

    fn encode(&self, s: &EllipsoidState) -> MemoryState {
        let mut w = MemoryState::writer();
        for c in &s.center {
            w.push_f64(*c);
        }
        for i in 0..self.d {
            for j in i..self.d {
                w.push_f64(s.shape[(i, j)]);
            }
        }
        w.push_u32(s.cuts).push_u32(s.repairs).push_bool(s.done).finish()
    }

    fn decode(&self, state: &MemoryState) -> Result<EllipsoidState, HarnessError> {
        let d = self.d;
        let mut r = state.reader();
        let center = (0..d).map(|_| r.read_f64()).collect::<Result<Vec<_>, _>>()?;
        let mut shape = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v = r.read_f64()?;
                shape[(i, j)] = v;
                shape[(j, i)] = v;
            }
        }
        Ok(EllipsoidState {
            center,
            shape,
            cuts: r.read_u32()?,
            repairs: r.read_u32()?,
            done: r.read_bool()?,
        })
    }

    fn repair(s: &mut EllipsoidState) {
        let sym = (&s.shape + s.shape.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = (top * 1e-15).max(f64::MIN_POSITIVE);
        let vals = eig.eigenvalues.map(|v| v.max(floor));
        s.shape = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
        s.repairs = s.repairs.wrapping_add(1);
    }

    fn needs_repair(s: &EllipsoidState) -> bool {
        (0..s.shape.nrows()).any(|i| s.shape[(i, i)] <= 0.0) || s.shape.iter().any(|v| !v.is_finite())
    }

    /// One central cut `{y : g^T (y - c) <= 0}`.
    fn cut(&self, s: &mut EllipsoidState, g: &[f64]) {
        let d = self.d;
        if d == 1 {
            let half = s.shape[(0, 0)].sqrt();
            s.center[0] -= g[0].signum() * half / 2.0;
            s.shape[(0, 0)] /= 4.0;
            return;
        }
        let gv = nalgebra::DVector::from_column_slice(g);
        let mut pg = &s.shape * &gv;
        let mut gpg = gv.dot(&pg);
        if gpg <= 0.0 || !gpg.is_finite() {
            Self::repair(s);
            pg = &s.shape * &gv;
            gpg = gv.dot(&pg);
            if gpg <= 0.0 || !gpg.is_finite() {
                s.done = true;
                return;
            }
        }
        let gt = pg / gpg.sqrt();
        let df = d as f64;
        for i in 0..d {
            s.center[i] -= gt[i] / (df + 1.0);
        }
        let outer = &gt * gt.transpose();
        s.shape = (&s.shape - outer * (2.0 / (df + 1.0))) * (df * df / (df * df - 1.0));
        if Self::needs_repair(s) {
            Self::repair(s);
        }
    }
}

impl MemAlgorithm for Ellipsoid {
    fn name(&self) -> &str {
        "ellipsoid"
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn initial_state(&self, _tape: &mut RandomTape) -> Result<MemoryState, HarnessError> {
        Ok(self.encode(&EllipsoidState {
            center: vec![0.0; self.d],
            shape: DMatrix::identity(self.d, self.d),
            cuts: 0,
            repairs: 0,
            done: false,
        }))
    }

    fn propose(&self, state: &MemoryState, _tape: &mut RandomTape) -> Result<Option<Vec<f64>>, HarnessError> {
        let s = self.decode(state)?;
        Ok((!s.done).then_some(s.center))
    }

    fn absorb(
        &self,
        state: &MemoryState,
        _x: &[f64],
        _value: f64,
        g: &[f64],
        _tape: &mut RandomTape,
    ) -> Result<MemoryState, HarnessError> {
        let mut s = self.decode(state)?;
        if s.done {
            return Ok(state.clone());
        }
        if norm(g) == 0.0 {
            s.done = true;
            return Ok(self.encode(&s));
        }
        self.cut(&mut s, g);
        s.cuts = s.cuts.wrapping_add(1);
        // Feasibility cuts keep the next center inside the ball.
        let limit = 64 * self.d * self.d + 64;
        for _ in 0..limit {
            let n = norm(&s.center);
            if s.done || n <= 1.0 {
                break;
            }
            let c = s.center.clone();
            self.cut(&mut s, &c);
        }
        Ok(self.encode(&s))
    }
}

/// Projected subgradient descent restricted to `null(A)`.
///
/// Needs the matrix up front, so it is a diagnostic and not a legitimate
/// optimizer for the hidden-matrix problem. State: `d` f64 values and a
/// 32-bit step counter.
#[derive(Debug, Clone)]
pub struct NullSpaceDescent {
    d: usize,
    rows: OrthoBasis,
    schedule: StepSchedule,
}

impl NullSpaceDescent {
    pub fn new(matrix: &SignMatrix, schedule: StepSchedule) -> Self {
        Self {
            d: matrix.d(),
            rows: matrix.row_basis(),
            schedule,
        }
    }

    pub fn state_bits_for(d: usize) -> usize {
        64 * d + 32
    }

    fn encode(x: &[f64], t: u32) -> MemoryState {
        let mut w = MemoryState::writer();
        for v in x {
            w.push_f64(*v);
        }
        w.push_u32(t).finish()
    }

    fn decode(&self, state: &MemoryState) -> Result<(Vec<f64>, u32), HarnessError> {
        let mut r = state.reader();
        let x = (0..self.d).map(|_| r.read_f64()).collect::<Result<Vec<_>, _>>()?;
        Ok((x, r.read_u32()?))
    }
}

impl MemAlgorithm for NullSpaceDescent {
    fn name(&self) -> &str {
        "nullspace"
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn initial_state(&self, _tape: &mut RandomTape) -> Result<MemoryState, HarnessError> {
        Ok(Self::encode(&vec![0.0; self.d], 0))
    }

    fn propose(&self, state: &MemoryState, _tape: &mut RandomTape) -> Result<Option<Vec<f64>>, HarnessError> {
        Ok(Some(self.decode(state)?.0))
    }

    fn absorb(
        &self,
        state: &MemoryState,
        _x: &[f64],
        _value: f64,
        g: &[f64],
        _tape: &mut RandomTape,
    ) -> Result<MemoryState, HarnessError> {
        let (x, t) = self.decode(state)?;
        let gp = self.rows.project_complement(g);
        let gn = norm(&gp);
        let mut y = x;
        if gn > 0.0 && gn > 1e-12 * norm(g) {
            let s = self.schedule.at(t) / gn;
            for (yi, gi) in y.iter_mut().zip(&gp) {
                *yi -= s * gi;
            }
            y = self.rows.project_complement(&y);
            project_to_ball(&mut y);
        }
        debug_assert!(dot(&y, &y).is_finite());
        Ok(Self::encode(&y, t.wrapping_add(1)))
    }
}
