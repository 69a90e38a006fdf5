//! State-space blocks, companion-form filters and the fixed-step integrator.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::poly::{PolyError, RationalTf};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LtiError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite derivative component {index} at t = {t}")]
    NonFinite { t: f64, index: usize },
    #[error("step size must be positive and finite, got {0}")]
    BadStep(f64),
}

/// `ẋ = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceBlock {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub x: DVector<f64>,
}

impl StateSpaceBlock {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self, LtiError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(LtiError::Dimension(format!("A is {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n || c.ncols() != n {
            return Err(LtiError::Dimension(format!(
                "A is {n}x{n} but B has {} rows and C has {} columns",
                b.nrows(),
                c.ncols()
            )));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(LtiError::Dimension(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b, c, d, x: DVector::zeros(n) })
    }

    pub fn with_state(mut self, x: DVector<f64>) -> Result<Self, LtiError> {
        if x.len() != self.order() {
            return Err(LtiError::Dimension(format!("state has {} entries, block order {}", x.len(), self.order())));
        }
        self.x = x;
        Ok(self)
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Returns `(A x + B u, C x + D u)` for the block's current state.
    pub fn block_derivative(&self, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>), LtiError> {
        if u.len() != self.inputs() {
            return Err(LtiError::Dimension(format!("input has {} entries, block takes {}", u.len(), self.inputs())));
        }
        let dx = &self.a * &self.x + &self.b * u;
        let y = &self.c * &self.x + &self.d * u;
        Ok((dx, y))
    }

    /// `C (sI - A)^{-1} B + D` for a single-input single-output block.
    pub fn frequency_response(&self, s: Complex64) -> Complex64 {
        let n = self.order();
        let d = Complex64::new(self.d[(0, 0)], 0.0);
        if n == 0 {
            return d;
        }
        let m = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
            let diag = if i == j { s } else { Complex64::new(0.0, 0.0) };
            diag - self.a[(i, j)]
        });
        let rhs = DVector::<Complex64>::from_fn(n, |i, _| Complex64::new(self.b[(i, 0)], 0.0));
        let sol = m.lu().solve(&rhs).expect("sI - A is singular at the sample frequency");
        (0..n).map(|i| sol[i] * self.c[(0, i)]).sum::<Complex64>() + d
    }
}

/// Single-input single-output filter in controllable canonical form.
///
/// With `den(s) = s^n + a_{n-1} s^{n-1} + ... + a_0` the states obey
/// `ẋ_i = x_{i+1}` for `i < n` and `ẋ_n = -Σ a_j x_{j+1} + u`, so
/// `x_i = s^(i-1)/den(s) [u]`. The output is `Σ c_i x_i + d u`.
/// Operates on borrowed state slices so that many filters can share one
/// global state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CompanionFilter {
    den: Vec<f64>,
    c: Vec<f64>,
    d: f64,
}

impl CompanionFilter {
    pub fn from_tf(tf: &RationalTf) -> Result<Self, PolyError> {
        if !tf.is_proper() {
            return Err(PolyError::Improper { num: tf.num.degree(), den: tf.den.degree() });
        }
        let lead = tf.den.leading();
        let n = tf.den.degree();
        let den: Vec<f64> = (0..n).map(|j| tf.den.coeff(j) / lead).collect();
        let scale = tf.gain / lead;
        let num: Vec<f64> = (0..=n).map(|j| tf.num.coeff(j) * scale).collect();
        let d = num[n];
        let c = (0..n).map(|j| num[j] - d * den[j]).collect();
        Ok(Self { den, c, d })
    }

    pub fn order(&self) -> usize {
        self.den.len()
    }

    pub fn feedthrough(&self) -> f64 {
        self.d
    }

    pub fn output_weights(&self) -> &[f64] {
        &self.c
    }

    /// Monic denominator coefficients `a_0 .. a_{n-1}`.
    pub fn denominator(&self) -> &[f64] {
        &self.den
    }

    pub fn output(&self, x: &[f64], u: f64) -> f64 {
        debug_assert_eq!(x.len(), self.order());
        self.c.iter().zip(x).map(|(c, x)| c * x).sum::<f64>() + self.d * u
    }

    /// Output excluding the feedthrough term.
    pub fn state_output(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(c, x)| c * x).sum()
    }

    pub fn derivative(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        let n = self.order();
        debug_assert!(x.len() == n && dx.len() == n);
        if n == 0 {
            return;
        }
        dx[..n - 1].copy_from_slice(&x[1..]);
        dx[n - 1] = u - self.den.iter().zip(x).map(|(a, x)| a * x).sum::<f64>();
    }

    pub fn to_state_space(&self) -> StateSpaceBlock {
        let n = self.order();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n.saturating_sub(1) {
            a[(i, i + 1)] = 1.0;
        }
        if n > 0 {
            for j in 0..n {
                a[(n - 1, j)] = -self.den[j];
            }
        }
        let mut b = DMatrix::zeros(n, 1);
        if n > 0 {
            b[(n - 1, 0)] = 1.0;
        }
        let c = DMatrix::from_row_slice(1, n, &self.c);
        let d = DMatrix::from_element(1, 1, self.d);
        StateSpaceBlock::new(a, b, c, d).expect("companion realization is dimensionally consistent")
    }
}

/// A bank of identical companion filters applied componentwise to a vector
/// signal. Channel `k` owns states `x[k*order .. (k+1)*order]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFilter {
    filter: CompanionFilter,
    width: usize,
}

impl VectorFilter {
    pub fn new(filter: CompanionFilter, width: usize) -> Self {
        Self { filter, width }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn state_len(&self) -> usize {
        self.filter.order() * self.width
    }

    pub fn filter(&self) -> &CompanionFilter {
        &self.filter
    }

    pub fn channel<'a>(&self, x: &'a [f64], k: usize) -> &'a [f64] {
        let n = self.filter.order();
        &x[k * n..(k + 1) * n]
    }

    pub fn outputs(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        debug_assert!(u.len() == self.width && out.len() == self.width);
        for (k, (o, &uk)) in out.iter_mut().zip(u).enumerate() {
            *o = self.filter.output(self.channel(x, k), uk);
        }
    }

    /// Outputs of a strictly proper bank; no input needed.
    pub fn state_outputs(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.filter.state_output(self.channel(x, k));
        }
    }

    pub fn derivative(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let n = self.filter.order();
        for (k, &uk) in u.iter().enumerate().take(self.width) {
            self.filter.derivative(&x[k * n..(k + 1) * n], uk, &mut dx[k * n..(k + 1) * n]);
        }
    }
}

/// Classical fourth-order Runge–Kutta with reusable stage buffers.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    /// Derivative evaluated at the start of the most recent step.
    pub fn first_stage(&self) -> &[f64] {
        &self.k1
    }

    /// Advances `x` in place from `t` to `t + dt`.
    pub fn step<F>(&mut self, mut f: F, t: f64, x: &mut [f64], dt: f64) -> Result<(), LtiError>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(LtiError::BadStep(dt));
        }
        let n = x.len();
        if self.k1.len() != n {
            return Err(LtiError::Dimension(format!("integrator sized for {}, state has {n}", self.k1.len())));
        }
        let half = 0.5 * dt;

        f(t, x, &mut self.k1);
        check_finite(&self.k1, t)?;
        for i in 0..n {
            self.tmp[i] = x[i] + half * self.k1[i];
        }
        f(t + half, &self.tmp, &mut self.k2);
        check_finite(&self.k2, t)?;
        for i in 0..n {
            self.tmp[i] = x[i] + half * self.k2[i];
        }
        f(t + half, &self.tmp, &mut self.k3);
        check_finite(&self.k3, t)?;
        for i in 0..n {
            self.tmp[i] = x[i] + dt * self.k3[i];
        }
        f(t + dt, &self.tmp, &mut self.k4);
        check_finite(&self.k4, t)?;
        let sixth = dt / 6.0;
        for i in 0..n {
            x[i] += sixth * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }
}

fn check_finite(k: &[f64], t: f64) -> Result<(), LtiError> {
    match k.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(LtiError::NonFinite { t, index }),
        None => Ok(()),
    }
}

/// One RK4 step from `(t, x)`; allocating convenience wrapper around [`Rk4`].
pub fn rk4_step<F>(f: F, t: f64, x: &[f64], dt: f64) -> Result<Vec<f64>, LtiError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let mut out = x.to_vec();
    Rk4::new(x.len()).step(f, t, &mut out, dt)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Polynomial;

    fn scalar_block(a: f64, b: f64, c: f64, d: f64, x: f64) -> StateSpaceBlock {
        StateSpaceBlock::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, c),
            DMatrix::from_element(1, 1, d),
        )
        .unwrap()
        .with_state(DVector::from_element(1, x))
        .unwrap()
    }

    #[test]
    fn block_derivative_examples() {
        let (dx, y) = scalar_block(-1.0, 1.0, 1.0, 0.0, 0.0)
            .block_derivative(&DVector::from_element(1, 1.0))
            .unwrap();
        assert_eq!((dx[0], y[0]), (1.0, 0.0));

        let (dx, y) = scalar_block(-1.0, 1.0, 1.0, 1.0, 2.0)
            .block_derivative(&DVector::from_element(1, 3.0))
            .unwrap();
        assert_eq!((dx[0], y[0]), (1.0, 5.0));

        let (dx, y) = scalar_block(-1.0, 1.0, 1.0, 1.0, 0.0)
            .block_derivative(&DVector::from_element(1, 0.0))
            .unwrap();
        assert_eq!((dx[0], y[0]), (0.0, 0.0));
    }

    #[test]
    fn block_derivative_rejects_wrong_width() {
        let block = scalar_block(-1.0, 1.0, 1.0, 0.0, 0.0);
        assert!(matches!(block.block_derivative(&DVector::zeros(2)), Err(LtiError::Dimension(_))));
    }

    #[test]
    fn inconsistent_matrices_rejected() {
        let r = StateSpaceBlock::new(DMatrix::zeros(2, 2), DMatrix::zeros(3, 1), DMatrix::zeros(1, 2), DMatrix::zeros(1, 1));
        assert!(r.is_err());
    }

    #[test]
    fn rk4_decay_matches_amplification_factor() {
        let h: f64 = 0.1;
        let factor = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        let x = rk4_step(|_, x, dx| dx[0] = -x[0], 0.0, &[1.0], h).unwrap();
        assert!((x[0] - factor).abs() < 1e-15);
        assert!((x[0] - 0.9048375).abs() < 1e-7);
    }

    #[test]
    fn rk4_constant_and_ramp() {
        let x = rk4_step(|_, _, dx| dx[0] = 0.0, 0.0, &[3.5], 0.1).unwrap();
        assert_eq!(x[0], 3.5);
        let x = rk4_step(|_, _, dx| dx[0] = 1.0, 0.0, &[0.0], 0.5).unwrap();
        assert_eq!(x[0], 0.5);
    }

    #[test]
    fn rk4_exact_for_quartic_in_time() {
        // ẋ = 4t^3 integrates exactly.
        let x = rk4_step(|t, _, dx| dx[0] = 4.0 * t.powi(3), 1.0, &[1.0], 0.5).unwrap();
        assert!((x[0] - 1.5f64.powi(4)).abs() < 1e-14);
    }

    #[test]
    fn rk4_reports_non_finite() {
        let err = rk4_step(|_, _, dx| dx[0] = f64::NAN, 2.0, &[0.0], 0.1).unwrap_err();
        assert_eq!(err, LtiError::NonFinite { t: 2.0, index: 0 });
        assert!(matches!(rk4_step(|_, _, dx| dx[0] = 0.0, 0.0, &[0.0], 0.0), Err(LtiError::BadStep(_))));
    }

    fn integrate_decay(dt: f64, t_end: f64) -> Vec<f64> {
        let steps = (t_end / dt).round() as usize;
        let mut rk = Rk4::new(1);
        let mut x = [1.0];
        let mut out = vec![1.0];
        for k in 0..steps {
            rk.step(|_, x, dx| dx[0] = -x[0], k as f64 * dt, &mut x, dt).unwrap();
            out.push(x[0]);
        }
        out
    }

    #[test]
    fn rk4_global_error_on_decay() {
        let x = integrate_decay(1e-3, 1.0);
        assert!((x.last().unwrap() - (-1.0f64).exp()).abs() <= 1e-11);
    }

    #[test]
    fn companion_filter_step_response_settles_at_dc_gain() {
        let tf = RationalTf::new(
            Polynomial::new(vec![2.0, 1.0]),
            Polynomial::new(vec![2.0, 3.0, 1.0]),
            1.0,
        )
        .unwrap();
        let f = CompanionFilter::from_tf(&tf).unwrap();
        let mut rk = Rk4::new(2);
        let mut x = [0.0, 0.0];
        for k in 0..20_000 {
            rk.step(|_, x, dx| f.derivative(x, 1.0, dx), k as f64 * 1e-3, &mut x, 1e-3).unwrap();
        }
        assert!((f.output(&x, 1.0) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn vector_filter_channels_are_independent() {
        let f = CompanionFilter::from_tf(&RationalTf::all_pole(Polynomial::new(vec![1.0, 1.0])).unwrap()).unwrap();
        let bank = VectorFilter::new(f, 3);
        let x = [1.0, 2.0, 3.0];
        let mut dx = [0.0; 3];
        bank.derivative(&x, &[0.0, 1.0, -1.0], &mut dx);
        assert_eq!(dx, [-1.0, -1.0, -4.0]);
        let mut y = [0.0; 3];
        bank.state_outputs(&x, &mut y);
        assert_eq!(y, x);
    }
}
