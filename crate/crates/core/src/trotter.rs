//! Generic nonlinear Lie-Trotter engine.
//!
//! Flows are abstract maps `(t, z) -> z'`; the engine composes them as
//! `(S_{t/n} o G_{t/n})^n` and measures the quantities that control the
//! product formula: the commutator defect, Cauchy gaps between round counts,
//! Lipschitz growth of the composed flow, and the Finsler tangent norm.
//! A linear matrix testbed provides exact references.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expm::matrix_exponential;
use crate::fit::{fit_loglog, LogLogFit};
use crate::rng;

/// Elements of the ambient space in which flows act.
pub trait StateVector: Clone + Send + Sync {
    /// Ambient norm.
    fn norm(&self) -> f64;
    /// `a*self + b*other`.
    fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Result<Self>;

    fn distance(&self, other: &Self) -> Result<f64> {
        Ok(self.lin_comb(1.0, other, -1.0)?.norm())
    }
}

impl StateVector for DVector<f64> {
    fn norm(&self) -> f64 {
        DVector::norm(self)
    }

    fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::InvalidParameter("state vectors differ in length".into()));
        }
        Ok(self * a + other * b)
    }
}

/// A (local) semiflow `t -> step(t, .)`.
pub trait FlowMap: Sync {
    type State: StateVector;

    fn step(&self, t: f64, z: &Self::State) -> Result<Self::State>;

    fn descriptor(&self) -> String;

    fn admissible_horizon(&self) -> f64 {
        f64::INFINITY
    }
}

impl<F: FlowMap> FlowMap for &F {
    type State = F::State;

    fn step(&self, t: f64, z: &Self::State) -> Result<Self::State> {
        (**self).step(t, z)
    }

    fn descriptor(&self) -> String {
        (**self).descriptor()
    }

    fn admissible_horizon(&self) -> f64 {
        (**self).admissible_horizon()
    }
}

/// The trivial flow `step(t, z) = z`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityFlow<T>(std::marker::PhantomData<T>);

impl<T> IdentityFlow<T> {
    pub fn new() -> Self {
        Self(std::marker::PhantomData)
    }
}

impl<T: StateVector> FlowMap for IdentityFlow<T> {
    type State = T;

    fn step(&self, _t: f64, z: &T) -> Result<T> {
        Ok(z.clone())
    }

    fn descriptor(&self) -> String {
        "identity".into()
    }
}

/// `S^{(nu)}_t := S_{nu t}`; `nu = 0` gives the identity flow.
#[derive(Debug, Clone, Copy)]
pub struct TimeScaled<F> {
    pub inner: F,
    pub factor: f64,
}

impl<F: FlowMap> FlowMap for TimeScaled<F> {
    type State = F::State;

    fn step(&self, t: f64, z: &Self::State) -> Result<Self::State> {
        if self.factor == 0.0 {
            return Ok(z.clone());
        }
        self.inner.step(self.factor * t, z)
    }

    fn descriptor(&self) -> String {
        format!("{}[nu={}]", self.inner.descriptor(), self.factor)
    }

    fn admissible_horizon(&self) -> f64 {
        if self.factor == 0.0 {
            f64::INFINITY
        } else {
            self.inner.admissible_horizon() / self.factor
        }
    }
}

/// Composition order inside a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    /// `S_{t/n} o G_{t/n}`: the `G` flow acts first.
    #[default]
    SAfterG,
    /// `G_{t/n} o S_{t/n}`; reserved for defect experiments.
    GAfterS,
}

fn check_horizon<G: FlowMap, S: FlowMap>(g: &G, s: &S, dt: f64) -> Result<()> {
    if !(dt.is_finite() && dt >= 0.0) {
        return Err(Error::InvalidParameter(format!("substep {dt} must be finite and nonnegative")));
    }
    for (name, horizon) in [(g.descriptor(), g.admissible_horizon()), (s.descriptor(), s.admissible_horizon())] {
        if dt > horizon {
            return Err(Error::InvalidParameter(format!(
                "substep {dt} exceeds admissible horizon {horizon} of {name}"
            )));
        }
    }
    Ok(())
}

/// `(S_{t/n} o G_{t/n})^n (z)`.
pub fn trotter_iterate<G, S>(g: &G, s: &S, z: &G::State, t: f64, n: usize) -> Result<G::State>
where
    G: FlowMap,
    S: FlowMap<State = G::State>,
{
    trotter_iterate_ordered(g, s, z, t, n, Order::SAfterG)
}

pub fn trotter_iterate_ordered<G, S>(g: &G, s: &S, z: &G::State, t: f64, n: usize, order: Order) -> Result<G::State>
where
    G: FlowMap,
    S: FlowMap<State = G::State>,
{
    if n == 0 {
        return Err(Error::InvalidParameter("round count must be at least 1".into()));
    }
    let dt = t / n as f64;
    check_horizon(g, s, dt)?;
    let mut state = z.clone();
    for round in 0..n {
        let wrap = |e: Error| Error::FlowStep { round, source: Box::new(e) };
        state = match order {
            Order::SAfterG => s.step(dt, &g.step(dt, &state).map_err(wrap)?).map_err(wrap)?,
            Order::GAfterS => g.step(dt, &s.step(dt, &state).map_err(wrap)?).map_err(wrap)?,
        };
    }
    Ok(state)
}

/// Commutator defect samples with log-log slope fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    pub samples: Vec<(f64, f64)>,
    /// Fit over the smallest decade of `t` (points with `t <= 10 t_min`).
    pub fit_smallest_decade: Option<LogLogFit>,
    /// Fit over every sample.
    pub fit_all: Option<LogLogFit>,
}

/// `defect(t) = ||S_t(G_t(z)) - G_t(S_t(z))||` for every `t` in `t_grid`.
pub fn commutator_defect<G, S>(g: &G, s: &S, z: &G::State, t_grid: &[f64]) -> Result<DefectReport>
where
    G: FlowMap,
    S: FlowMap<State = G::State>,
{
    let mut samples = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        check_horizon(g, s, t)?;
        let sg = s.step(t, &g.step(t, z)?)?;
        let gs = g.step(t, &s.step(t, z)?)?;
        samples.push((t, sg.distance(&gs)?));
    }
    let fit_over = |pts: &[(f64, f64)]| -> Option<LogLogFit> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().filter(|(t, d)| *t > 0.0 && *d > 0.0).copied().unzip();
        fit_loglog(&xs, &ys).ok()
    };
    let t_min = samples.iter().map(|(t, _)| *t).filter(|t| *t > 0.0).fold(f64::INFINITY, f64::min);
    let decade: Vec<(f64, f64)> = samples.iter().copied().filter(|(t, _)| *t <= 10.0 * t_min).collect();
    Ok(DefectReport { fit_smallest_decade: fit_over(&decade), fit_all: fit_over(&samples), samples })
}

/// `||(S_{t/n} G_{t/n})^n z - (S_{t/m} G_{t/m})^m z||`.
pub fn cauchy_gap<G, S>(g: &G, s: &S, z: &G::State, t: f64, n: usize, m: usize) -> Result<f64>
where
    G: FlowMap,
    S: FlowMap<State = G::State>,
{
    if n > m {
        return Err(Error::InvalidParameter(format!("cauchy gap needs n <= m, got {n} > {m}")));
    }
    if n == m {
        return Ok(0.0);
    }
    trotter_iterate(g, s, z, t, n)?.distance(&trotter_iterate(g, s, z, t, m)?)
}

/// Runs the product formula with `S` replaced by `S_{nu t}` for each `nu`.
pub fn viscosity_sweep<G, S>(
    g: &G,
    s: &S,
    z: &G::State,
    t: f64,
    n: usize,
    nu_list: &[f64],
) -> Result<Vec<(f64, G::State)>>
where
    G: FlowMap,
    S: FlowMap<State = G::State>,
{
    nu_list
        .iter()
        .map(|&nu| {
            if !(0.0..=1.0).contains(&nu) {
                return Err(Error::InvalidParameter(format!("viscosity {nu} outside [0, 1]")));
            }
            let scaled = TimeScaled { inner: s, factor: nu };
            Ok((nu, trotter_iterate(g, &scaled, z, t, n)?))
        })
        .collect()
}

/// `ratio(t) = ||H_t(z1) - H_t(z2)|| / ||z1 - z2||` where `H_t` is the
/// product formula with `n` rounds.
pub fn lipschitz_probe<G, S>(
    g: &G,
    s: &S,
    n: usize,
    z1: &G::State,
    z2: &G::State,
    t_grid: &[f64],
) -> Result<Vec<(f64, f64)>>
where
    G: FlowMap,
    S: FlowMap<State = G::State>,
{
    let initial = z1.distance(z2)?;
    if initial == 0.0 {
        return Err(Error::InvalidParameter("lipschitz probe needs distinct states".into()));
    }
    t_grid
        .iter()
        .map(|&t| {
            if t == 0.0 {
                return Ok((t, 1.0));
            }
            let a = trotter_iterate(g, s, z1, t, n)?;
            let b = trotter_iterate(g, s, z2, t, n)?;
            Ok((t, a.distance(&b)? / initial))
        })
        .collect()
}

/// Smallest `beta >= 0` with `ln ratio(t) <= 2 beta t` on the samples.
pub fn fit_growth_rate(samples: &[(f64, f64)]) -> f64 {
    samples.iter().filter(|(t, _)| *t > 0.0).map(|(t, r)| r.ln() / (2.0 * t)).fold(0.0, f64::max)
}

/// Finite-difference estimate of `sup_t ||e^{-beta t} (d_x S_t) xi||` over
/// `t_grid`. The difference step is `fd_eps * ||x||` (or `fd_eps` at the
/// origin).
pub fn finsler_norm_probe<S: FlowMap>(
    s: &S,
    x: &S::State,
    xi: &S::State,
    beta: f64,
    t_grid: &[f64],
    fd_eps: f64,
) -> Result<f64> {
    if !(fd_eps.is_finite() && fd_eps > 0.0) {
        return Err(Error::InvalidParameter(format!("finite-difference step {fd_eps} must be positive")));
    }
    crate::heat::check_time_grid(t_grid)?;
    if xi.norm() == 0.0 {
        return Ok(0.0);
    }
    let x_norm = x.norm();
    let eps = if x_norm > 0.0 { fd_eps * x_norm } else { fd_eps };
    let plus = x.lin_comb(1.0, xi, eps)?;
    let minus = x.lin_comb(1.0, xi, -eps)?;
    let mut sup: f64 = 0.0;
    for &t in t_grid {
        let diff = s.step(t, &plus)?.lin_comb(1.0, &s.step(t, &minus)?, -1.0)?;
        let value = (-beta * t).exp() * diff.norm() / (2.0 * eps);
        if !value.is_finite() {
            return Err(Error::NonFinite { context: format!("finsler difference quotient at t = {t}") });
        }
        sup = sup.max(value);
    }
    Ok(sup)
}

/// Linear flow `z -> e^{tA} z`.
#[derive(Debug, Clone)]
pub struct MatrixFlow {
    pub generator: DMatrix<f64>,
    pub label: String,
}

impl MatrixFlow {
    pub fn new(generator: DMatrix<f64>, label: impl Into<String>) -> Self {
        Self { generator, label: label.into() }
    }
}

impl FlowMap for MatrixFlow {
    type State = DVector<f64>;

    fn step(&self, t: f64, z: &DVector<f64>) -> Result<DVector<f64>> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        Ok(matrix_exponential(&self.generator, t)? * z)
    }

    fn descriptor(&self) -> String {
        self.label.clone()
    }
}

/// Random linear testbed: `A` skew-symmetric, `B` symmetric negative
/// semidefinite, and a unit initial vector `z`.
#[derive(Debug, Clone)]
pub struct MatrixTestbed {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub z: DVector<f64>,
}

impl MatrixTestbed {
    pub fn random(size: usize, seed: u64) -> Self {
        let mut rng = rng::seeded(seed, rng::streams::MATRICES);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let m = DMatrix::from_fn(size, size, |_, _| normal());
        let c = DMatrix::from_fn(size, size, |_, _| normal());
        let a = (&m - m.transpose()) * 0.5;
        let b = -(&c * c.transpose()) / size as f64;
        let mut vrng = rng::seeded(seed, rng::streams::VECTORS);
        let z = DVector::from_fn(size, |_, _| StandardNormal.sample(&mut vrng));
        let z = z.normalize();
        Self { a, b, z }
    }

    /// Both generators negative semidefinite, so every flow is contracting.
    pub fn contracting(size: usize, seed: u64) -> Self {
        let base = Self::random(size, seed);
        let mut rng = rng::seeded(seed, rng::streams::MATRICES + 100);
        let c = DMatrix::from_fn(size, size, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
        let a = -(&c * c.transpose()) / size as f64;
        Self { a, ..base }
    }

    pub fn g_flow(&self) -> MatrixFlow {
        MatrixFlow::new(self.a.clone(), "exp(tA)")
    }

    pub fn s_flow(&self) -> MatrixFlow {
        MatrixFlow::new(self.b.clone(), "exp(tB)")
    }

    /// Exact reference `e^{t(A + nu B)} z`.
    pub fn exact(&self, t: f64, nu: f64) -> Result<DVector<f64>> {
        Ok(matrix_exponential(&(&self.a + &self.b * nu), t)? * &self.z)
    }

    /// Product-formula errors against the exact reference.
    pub fn trotter_run(&self, t: f64, n_values: &[usize]) -> Result<TrotterRun> {
        let reference = self.exact(t, 1.0)?;
        let (g, s) = (self.g_flow(), self.s_flow());
        let errors = n_values
            .iter()
            .map(|&n| trotter_iterate(&g, &s, &self.z, t, n)?.distance(&reference))
            .collect::<Result<Vec<f64>>>()?;
        TrotterRun::new("matrix-trotter", t, 1.0, n_values.to_vec(), errors)
    }
}

/// `sup_t e^{-beta t} ||e^{tB}||_2` over `t_grid`.
pub fn matrix_flow_bound(b: &DMatrix<f64>, beta: f64, t_grid: &[f64]) -> Result<f64> {
    let mut sup: f64 = 0.0;
    for &t in t_grid {
        let e = matrix_exponential(b, t)?;
        let sv = e.singular_values();
        sup = sup.max((-beta * t).exp() * sv.max());
    }
    Ok(sup)
}

/// Errors of a product-formula run against a reference, with the fitted
/// log-log slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrotterRun {
    pub descriptor: String,
    pub t: f64,
    pub nu: f64,
    pub n_values: Vec<usize>,
    pub errors: Vec<f64>,
    pub fitted_slope: f64,
    pub fit_r2: f64,
    /// Fitted constant in `error ~ C_hat / n`.
    pub c_hat: f64,
}

impl TrotterRun {
    pub fn new(descriptor: &str, t: f64, nu: f64, n_values: Vec<usize>, errors: Vec<f64>) -> Result<Self> {
        if n_values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("round counts must be strictly increasing".into()));
        }
        if errors.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::InvalidParameter("errors must be finite and nonnegative".into()));
        }
        let xs: Vec<f64> = n_values.iter().map(|&n| n as f64).collect();
        let fit = fit_loglog(&xs, &errors)?;
        let c_hat = xs.iter().zip(&errors).map(|(n, e)| n * e).sum::<f64>() / xs.len() as f64;
        Ok(Self {
            descriptor: descriptor.to_string(),
            t,
            nu,
            n_values,
            errors,
            fitted_slope: fit.slope,
            fit_r2: fit.r2,
            c_hat,
        })
    }

    /// `error(n) / error(2n)` for each adjacent doubling present in the run.
    pub fn doubling_ratios(&self) -> Vec<(usize, f64)> {
        self.n_values
            .windows(2)
            .zip(self.errors.windows(2))
            .filter(|(n, _)| n[1] == 2 * n[0])
            .map(|(n, e)| (n[0], e[0] / e[1]))
            .collect()
    }

    /// CSV with columns `n,error,t,nu,descriptor`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "n,error,t,nu,descriptor")?;
        for (n, e) in self.n_values.iter().zip(&self.errors) {
            writeln!(out, "{n},{e:e},{},{},{}", self.t, self.nu, self.descriptor)?;
        }
        Ok(())
    }

    pub fn summary_json(&self, beta_hat: Option<f64>) -> serde_json::Value {
        serde_json::json!({
            "fitted_slope": self.fitted_slope,
            "fit_r2": self.fit_r2,
            "C_hat": self.c_hat,
            "beta_hat": beta_hat,
        })
    }

    pub fn save(&self, dir: &Path, beta_hat: Option<f64>) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join("trotter_run.csv"))?)?;
        std::fs::write(dir.join("trotter_summary.json"), serde_json::to_string_pretty(&self.summary_json(beta_hat))?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn commuting_pair() -> (MatrixFlow, MatrixFlow, DMatrix<f64>) {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![-0.5, -0.5, -2.0]));
        let sum = &a + &b;
        (MatrixFlow::new(a, "A"), MatrixFlow::new(b, "B"), sum)
    }

    #[test]
    fn single_round_is_s_after_g() {
        let tb = MatrixTestbed::random(4, 7);
        let (g, s) = (tb.g_flow(), tb.s_flow());
        let one = trotter_iterate(&g, &s, &tb.z, 0.8, 1).unwrap();
        let manual = s.step(0.8, &g.step(0.8, &tb.z).unwrap()).unwrap();
        assert_eq!(one, manual);
    }

    #[test]
    fn commuting_flows_are_exact_for_every_n() {
        let (g, s, sum) = commuting_pair();
        let z = DVector::from_vec(vec![0.3, -1.0, 0.7]);
        let exact = matrix_exponential(&sum, 1.3).unwrap() * &z;
        for n in [1, 2, 7, 32] {
            let out = trotter_iterate(&g, &s, &z, 1.3, n).unwrap();
            assert!((out - &exact).norm() < 1e-12);
        }
        let defect = commutator_defect(&g, &s, &z, &[1e-3, 1e-2, 0.1, 1.0]).unwrap();
        assert!(defect.samples.iter().all(|(_, d)| *d <= 1e-12));
    }

    #[test]
    fn zero_rounds_rejected_and_errors_carry_round() {
        let tb = MatrixTestbed::random(4, 1);
        let (g, s) = (tb.g_flow(), tb.s_flow());
        assert!(trotter_iterate(&g, &s, &tb.z, 1.0, 0).is_err());
        struct Failing;
        impl FlowMap for Failing {
            type State = DVector<f64>;
            fn step(&self, t: f64, z: &DVector<f64>) -> Result<DVector<f64>> {
                if z.norm() < 0.5 {
                    Err(Error::InvalidParameter(format!("collapsed at {t}")))
                } else {
                    Ok(z * 0.5)
                }
            }
            fn descriptor(&self) -> String {
                "halving".into()
            }
        }
        let id = IdentityFlow::<DVector<f64>>::new();
        let err = trotter_iterate(&Failing, &id, &DVector::from_vec(vec![1.0]), 1.0, 5).unwrap_err();
        assert_eq!(err.round(), Some(2));
    }

    #[test]
    fn identity_s_reduces_to_g() {
        let tb = MatrixTestbed::random(4, 3);
        let g = tb.g_flow();
        let id = IdentityFlow::new();
        let out = trotter_iterate(&g, &id, &tb.z, 1.0, 16).unwrap();
        let direct = g.step(1.0, &tb.z).unwrap();
        assert!((out - direct).norm() < 1e-13);
    }

    #[test]
    fn round_regrouping() {
        // n rounds over t, then k more rounds at the same substep, equals
        // an (n+k)-round run over t (n+k)/n
        let tb = MatrixTestbed::random(4, 11);
        let (g, s) = (tb.g_flow(), tb.s_flow());
        let (t, n, k) = (0.6, 6, 4);
        let first = trotter_iterate(&g, &s, &tb.z, t, n).unwrap();
        let cont = trotter_iterate(&g, &s, &first, t * k as f64 / n as f64, k).unwrap();
        let whole = trotter_iterate(&g, &s, &tb.z, t * (n + k) as f64 / n as f64, n + k).unwrap();
        assert!((cont - whole).norm() < 1e-14 * (n + k) as f64 * 10.0);
    }

    #[test]
    fn runs_are_bit_identical() {
        let a = MatrixTestbed::random(4, 42).trotter_run(1.0, &[2, 4, 8]).unwrap();
        let b = MatrixTestbed::random(4, 42).trotter_run(1.0, &[2, 4, 8]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn commutator_defect_matches_series_limit() {
        let tb = MatrixTestbed::random(4, 5);
        let (g, s) = (tb.g_flow(), tb.s_flow());
        let t = 1e-3;
        let report = commutator_defect(&g, &s, &tb.z, &[t]).unwrap();
        let limit = ((&tb.b * &tb.a - &tb.a * &tb.b) * &tb.z).norm();
        let ratio = report.samples[0].1 / (t * t);
        assert!((ratio / limit - 1.0).abs() < 0.05, "{ratio} vs {limit}");
    }

    #[test]
    fn defect_over_t_squared_stays_bounded_on_smallest_decade() {
        let tb = MatrixTestbed::random(4, 9);
        let (g, s) = (tb.g_flow(), tb.s_flow());
        let ts: Vec<f64> = (0..8).map(|i| 1e-4 * 10f64.powf(i as f64 / 7.0)).collect();
        let report = commutator_defect(&g, &s, &tb.z, &ts).unwrap();
        let limit = ((&tb.b * &tb.a - &tb.a * &tb.b) * &tb.z).norm();
        for (t, d) in &report.samples {
            assert!(d / (t * t) <= 2.0 * limit);
        }
        let fit = report.fit_smallest_decade.unwrap();
        assert!((fit.slope - 2.0).abs() < 0.05);
    }

    #[test]
    fn cauchy_gap_guards_and_first_order_decay() {
        let tb = MatrixTestbed::random(4, 42);
        let (g, s) = (tb.g_flow(), tb.s_flow());
        assert_eq!(cauchy_gap(&g, &s, &tb.z, 1.0, 8, 8).unwrap(), 0.0);
        assert!(cauchy_gap(&g, &s, &tb.z, 1.0, 9, 8).is_err());
        let g8 = cauchy_gap(&g, &s, &tb.z, 1.0, 8, 1024).unwrap();
        let g16 = cauchy_gap(&g, &s, &tb.z, 1.0, 16, 1024).unwrap();
        let ratio = g8 / g16;
        assert!((1.5..=2.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn cauchy_gap_tracks_fitted_constant() {
        let tb = MatrixTestbed::random(4, 42);
        let (g, s) = (tb.g_flow(), tb.s_flow());
        let t = 1.0;
        let ns = [4usize, 8, 16, 32, 64];
        let gaps: Vec<f64> = ns.iter().map(|&n| cauchy_gap(&g, &s, &tb.z, t, n, 1024).unwrap()).collect();
        let c = gaps[0] * ns[0] as f64 / (t * t);
        for (&n, gap) in ns.iter().zip(&gaps) {
            let bound = c * t * t / n as f64;
            assert!(*gap <= 3.0 * bound && *gap >= bound / 3.0, "n={n}: {gap} vs {bound}");
        }
    }

    #[test]
    fn viscosity_sweep_endpoints() {
        let tb = MatrixTestbed::random(4, 42);
        let (g, s) = (tb.g_flow(), tb.s_flow());
        let sweep = viscosity_sweep(&g, &s, &tb.z, 1.0, 64, &[0.0, 0.5]).unwrap();
        let pure_g = g.step(1.0, &tb.z).unwrap();
        assert!((&sweep[0].1 - pure_g).norm() < 1e-13);
        assert!(viscosity_sweep(&g, &s, &tb.z, 1.0, 4, &[1.5]).is_err());
    }

    #[test]
    fn viscosity_sweep_is_linear_in_nu() {
        let tb = MatrixTestbed::random(4, 42);
        let (g, s) = (tb.g_flow(), tb.s_flow());
        let nus = [0.4, 0.2, 0.1, 0.05, 0.025];
        let sweep = viscosity_sweep(&g, &s, &tb.z, 1.0, 64, &nus).unwrap();
        let base = viscosity_sweep(&g, &s, &tb.z, 1.0, 64, &[0.0]).unwrap().remove(0).1;
        let diffs: Vec<f64> = sweep.iter().map(|(_, z)| (z - &base).norm()).collect();
        let fit = fit_loglog(&nus, &diffs).unwrap();
        assert!((fit.slope - 1.0).abs() < 0.2, "{}", fit.slope);
    }

    #[test]
    fn lipschitz_ratio_of_contracting_flows_is_at_most_one() {
        let tb = MatrixTestbed::contracting(4, 13);
        let (g, s) = (tb.g_flow(), tb.s_flow());
        let z2 = &tb.z + DVector::from_vec(vec![0.1, -0.2, 0.05, 0.3]);
        let ratios = lipschitz_probe(&g, &s, 32, &tb.z, &z2, &[0.0, 0.5, 1.0, 2.0, 4.0]).unwrap();
        assert!(ratios.iter().all(|(_, r)| *r <= 1.0 + 1e-12));
        assert!(lipschitz_probe(&g, &s, 32, &tb.z, &tb.z, &[1.0]).is_err());
        let beta = fit_growth_rate(&ratios);
        assert_eq!(beta, 0.0);
    }

    #[test]
    fn finsler_probe_matches_direct_linear_computation() {
        let tb = MatrixTestbed::random(4, 21);
        let s = tb.s_flow();
        let xi = DVector::from_vec(vec![0.4, -0.1, 0.9, 0.2]);
        let ts: Vec<f64> = (0..=20).map(|i| i as f64 * 0.25).collect();
        let beta = 1.0;
        let probe = finsler_norm_probe(&s, &tb.z, &xi, beta, &ts, 1e-5).unwrap();
        let direct = ts
            .iter()
            .map(|&t| (-beta * t).exp() * (matrix_exponential(&tb.b, t).unwrap() * &xi).norm())
            .fold(0.0, f64::max);
        assert!((probe - direct).abs() < 1e-10 * direct.max(1.0));
        let zero = DVector::zeros(4);
        assert_eq!(finsler_norm_probe(&s, &tb.z, &zero, beta, &ts, 1e-5).unwrap(), 0.0);
        assert!(finsler_norm_probe(&s, &tb.z, &xi, beta, &ts, 0.0).is_err());
    }

    #[test]
    fn trotter_run_csv_layout() {
        let run = TrotterRun::new("demo", 1.0, 0.5, vec![2, 4], vec![0.5, 0.25]).unwrap();
        let mut buf = Vec::new();
        run.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "n,error,t,nu,descriptor");
        assert_eq!(lines[1], "2,5e-1,1,0.5,demo");
        assert!((run.fitted_slope + 1.0).abs() < 1e-12);
        assert_eq!(run.doubling_ratios(), vec![(2, 2.0)]);
        assert!(TrotterRun::new("bad", 1.0, 0.0, vec![4, 2], vec![1.0, 1.0]).is_err());
    }
}
