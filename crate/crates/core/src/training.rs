//! Building emulators from run data: regression surface, active variables,
//! correlation hyperparameters and the adjustment itself.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use indexmap::IndexMap;
use log::info;
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{Correlator, KernelKind};
use crate::emulator::{adjust_points, BasisFunction, Discrepancy, EmulatorPrior, TrainedEmulator, JITTER};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::set::{EmulatorMap, EmulatorSet};
use crate::space::ParameterSpace;
use crate::table::RunTable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    /// Regression coefficients treated as known, `Var[beta] = 0`.
    Known,
    /// Least-squares coefficient covariance carried into the prior.
    Noninformative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingOptions {
    pub beta_mode: BetaMode,
    /// Terms explaining less than this fraction of the output variance are dropped.
    pub variance_explained_threshold: f64,
    pub theta_bounds: (f64, f64),
    pub nugget_bounds: (f64, f64),
    pub kernel: KernelKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matern_nu: Option<f64>,
    /// Multiplier on the normal-theory variance of a sample variance.
    pub kurtosis_multiplier: f64,
    /// Random local-search starts in addition to the best grid point.
    pub extra_starts: usize,
    pub seed: u64,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        let r3 = 3f64.sqrt();
        TrainingOptions {
            beta_mode: BetaMode::Known,
            variance_explained_threshold: 0.01,
            theta_bounds: (r3 / 3.0, r3),
            nugget_bounds: (1e-4, 0.5),
            kernel: KernelKind::ExpSq,
            matern_nu: None,
            kurtosis_multiplier: 1.0,
            extra_starts: 2,
            seed: 0,
        }
    }
}

impl TrainingOptions {
    pub fn validate(&self) -> Result<()> {
        let (tl, tu) = self.theta_bounds;
        let (dl, du) = self.nugget_bounds;
        if !(self.variance_explained_threshold >= 0.0 && self.variance_explained_threshold < 1.0) {
            return Err(Error::Argument("variance_explained_threshold must lie in [0, 1)".into()));
        }
        if !(tl > 0.0 && tl <= tu && tu.is_finite()) {
            return Err(Error::Argument(format!("theta bounds ({tl}, {tu}) must be positive and ordered")));
        }
        if !(dl > 0.0 && dl <= du && du <= 1.0) {
            return Err(Error::Argument(format!("nugget bounds ({dl}, {du}) must be ordered within (0, 1]")));
        }
        if self.kurtosis_multiplier.is_nan() || self.kurtosis_multiplier <= 0.0 {
            return Err(Error::Argument("kurtosis_multiplier must be positive".into()));
        }
        Ok(())
    }

    fn correlator(&self, theta: f64, delta: f64) -> Result<Correlator> {
        let c = Correlator::new(self.kernel, theta, delta)?;
        match self.matern_nu {
            Some(nu) => c.with_nu(nu),
            None => Ok(c),
        }
    }
}

/// Result of the regression step.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionFit {
    pub basis: Vec<BasisFunction>,
    pub coefficients: Vec<f64>,
    pub coefficient_cov: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
}

/// Constant, linear, pure quadratic and pairwise interaction terms.
pub fn candidate_terms(d: usize) -> Vec<BasisFunction> {
    let mut c = vec![BasisFunction::Constant];
    c.extend((0..d).map(BasisFunction::Linear));
    c.extend((0..d).map(BasisFunction::Quadratic));
    for i in 0..d {
        for j in i + 1..d {
            c.push(BasisFunction::Interaction(i, j));
        }
    }
    c
}

struct Ols {
    coef: Vec<f64>,
    rss: f64,
}

fn design_matrix(u: &[Vec<f64>], basis: &[BasisFunction]) -> DMatrix<f64> {
    DMatrix::from_fn(u.len(), basis.len(), |i, j| basis[j].eval(&u[i]))
}

fn ols(u: &[Vec<f64>], y: &DVector<f64>, basis: &[BasisFunction]) -> Ols {
    let x = design_matrix(u, basis);
    let svd = x.clone().svd(true, true);
    let coef = svd
        .solve(y, 1e-12 * svd.singular_values.max())
        .unwrap_or_else(|_| DVector::zeros(basis.len()));
    let r = y - &x * &coef;
    Ols {
        coef: coef.iter().copied().collect(),
        rss: r.norm_squared(),
    }
}

fn aicc(rss: f64, n: usize, p: usize, floor: f64) -> f64 {
    let k = (p + 1) as f64;
    let n_f = n as f64;
    if n_f - k - 1.0 <= 0.0 {
        return f64::INFINITY;
    }
    n_f * (rss.max(floor) / n_f).ln() + 2.0 * k + 2.0 * k * (k + 1.0) / (n_f - k - 1.0)
}

/// Stepwise least-squares selection over the quadratic candidates on
/// scaled inputs, then variance-explained pruning.
pub fn fit_regression_scaled(u: &[Vec<f64>], y: &[f64], d: usize, opts: &TrainingOptions) -> Result<RegressionFit> {
    let n = y.len();
    if n < d + 2 {
        return Err(Error::InsufficientData(format!(
            "{n} runs cannot support a regression in {d} parameters (need at least {})",
            d + 2
        )));
    }
    let yv = DVector::from_column_slice(y);
    let mean = yv.mean();
    let tss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let candidates = candidate_terms(d);
    // keeps ln(rss) finite for exact fits
    let floor = (tss * 1e-24).max(f64::MIN_POSITIVE);

    let mut basis: Vec<BasisFunction> = if tss <= 0.0 {
        vec![BasisFunction::Constant]
    } else if n >= candidates.len() {
        stepwise_delete(u, &yv, candidates, floor)
    } else {
        stepwise_add(u, &yv, &candidates, floor)
    };

    if tss > 0.0 {
        loop {
            let full = ols(u, &yv, &basis).rss;
            let mut worst: Option<(usize, f64)> = None;
            for (k, b) in basis.iter().enumerate() {
                if *b == BasisFunction::Constant {
                    continue;
                }
                let mut reduced = basis.clone();
                reduced.remove(k);
                let share = (ols(u, &yv, &reduced).rss - full) / tss;
                if worst.is_none_or(|(_, s)| share < s) {
                    worst = Some((k, share));
                }
            }
            match worst {
                Some((k, share)) if share < opts.variance_explained_threshold => {
                    basis.remove(k);
                }
                _ => break,
            }
        }
    }

    let fit = ols(u, &yv, &basis);
    let x = design_matrix(u, &basis);
    let resid = &yv - &x * DVector::from_column_slice(&fit.coef);
    let p = basis.len();
    let coefficient_cov = match opts.beta_mode {
        BetaMode::Known => vec![vec![0.0; p]; p],
        BetaMode::Noninformative => {
            let s2 = if n > p { fit.rss / (n - p) as f64 } else { 0.0 };
            let xtx = x.transpose() * &x;
            let inv = xtx
                .pseudo_inverse(1e-12)
                .map_err(|e| Error::Degenerate(e.to_string()))?;
            let m = inv * s2;
            (0..p)
                .map(|i| (0..p).map(|j| 0.5 * (m[(i, j)] + m[(j, i)])).collect())
                .collect()
        }
    };
    Ok(RegressionFit {
        basis,
        coefficients: fit.coef,
        coefficient_cov,
        residuals: resid.iter().copied().collect(),
    })
}

fn stepwise_delete(u: &[Vec<f64>], y: &DVector<f64>, mut basis: Vec<BasisFunction>, floor: f64) -> Vec<BasisFunction> {
    let n = y.len();
    let mut current = aicc(ols(u, y, &basis).rss, n, basis.len(), floor);
    loop {
        let mut best: Option<(usize, f64)> = None;
        for k in 0..basis.len() {
            if basis[k] == BasisFunction::Constant {
                continue;
            }
            let mut reduced = basis.clone();
            reduced.remove(k);
            let a = aicc(ols(u, y, &reduced).rss, n, reduced.len(), floor);
            if best.is_none_or(|(_, b)| a < b) {
                best = Some((k, a));
            }
        }
        match best {
            Some((k, a)) if a < current => {
                basis.remove(k);
                current = a;
            }
            _ => return basis,
        }
    }
}

fn stepwise_add(u: &[Vec<f64>], y: &DVector<f64>, candidates: &[BasisFunction], floor: f64) -> Vec<BasisFunction> {
    let n = y.len();
    let mut basis = vec![BasisFunction::Constant];
    let mut current = aicc(ols(u, y, &basis).rss, n, 1, floor);
    loop {
        let mut best: Option<(BasisFunction, f64)> = None;
        for c in candidates {
            if basis.contains(c) {
                continue;
            }
            let mut grown = basis.clone();
            grown.push(*c);
            grown.sort();
            let a = aicc(ols(u, y, &grown).rss, n, grown.len(), floor);
            if best.is_none_or(|(_, b)| a < b) {
                best = Some((*c, a));
            }
        }
        match best {
            Some((c, a)) if a < current => {
                basis.push(c);
                basis.sort();
                current = a;
            }
            _ => return basis,
        }
    }
}

/// Regression for one output column of `runs`.
pub fn fit_regression(runs: &RunTable, output: &str, space: &ParameterSpace, opts: &TrainingOptions) -> Result<RegressionFit> {
    let u: Vec<Vec<f64>> = runs
        .points_in(space)?
        .iter()
        .map(|x| space.scale_point(x, false))
        .collect::<Result<_>>()?;
    fit_regression_scaled(&u, &runs.output_column(output)?, space.dim(), opts)
}

/// Parameters appearing in any non-constant basis term.
pub fn derive_actives(basis: &[BasisFunction], d: usize) -> Vec<bool> {
    let mut a = vec![false; d];
    for b in basis {
        for v in b.variables() {
            a[v] = true;
        }
    }
    a
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperEstimate {
    pub theta: f64,
    pub delta: f64,
    pub sigma_sq: f64,
    /// Notes for estimates that finished on a bound.
    pub flags: Vec<String>,
}

#[derive(Clone, Copy)]
struct Likelihood<'a> {
    resid: &'a [f64],
    u: &'a [Vec<f64>],
    actives: &'a [bool],
    noise: Option<&'a [f64]>,
    opts: &'a TrainingOptions,
    scale: f64,
}

impl Likelihood<'_> {
    fn bounds(&self) -> [(f64, f64); 2] {
        let (tl, tu) = self.opts.theta_bounds;
        let (dl, du) = self.opts.nugget_bounds;
        [(tl.ln(), tu.ln()), (dl.ln(), du.ln())]
    }

    fn clamp(&self, z: &[f64]) -> [f64; 2] {
        let b = self.bounds();
        [z[0].clamp(b[0].0, b[0].1), z[1].clamp(b[1].0, b[1].1)]
    }

    fn corr_matrix(&self, theta: f64, delta: f64) -> Option<DMatrix<f64>> {
        let c = self.opts.correlator(theta, delta).ok()?;
        let mut k = c.self_matrix(self.u, self.actives);
        for i in 0..k.nrows() {
            k[(i, i)] += JITTER;
        }
        Some(k)
    }

    /// Negative log-likelihood with sigma^2 profiled out, and the profiled sigma^2.
    fn profile(&self, theta: f64, delta: f64) -> (f64, f64) {
        let Some(k) = self.corr_matrix(theta, delta) else {
            return (f64::INFINITY, f64::NAN);
        };
        match self.noise {
            None => {
                let n = self.resid.len() as f64;
                let Some(ch) = k.cholesky() else {
                    return (f64::INFINITY, f64::NAN);
                };
                let r = DVector::from_column_slice(self.resid);
                let q = r.dot(&ch.solve(&r));
                let s2 = (q / n).max(self.scale * 1e-300).max(f64::MIN_POSITIVE);
                let logdet: f64 = ch.l().diagonal().iter().map(|v| v.ln()).sum();
                (0.5 * n * s2.ln() + logdet, s2)
            }
            Some(noise) => self.profile_noisy(&k, noise),
        }
    }

    fn nll_noisy(&self, k: &DMatrix<f64>, noise: &[f64], s2: f64) -> f64 {
        let mut v = k * s2;
        for i in 0..v.nrows() {
            v[(i, i)] += noise[i];
        }
        let Some(ch) = v.cholesky() else {
            return f64::INFINITY;
        };
        let r = DVector::from_column_slice(self.resid);
        let logdet: f64 = ch.l().diagonal().iter().map(|v| v.ln()).sum();
        0.5 * r.dot(&ch.solve(&r)) + logdet
    }

    // golden-section search over log sigma^2
    fn profile_noisy(&self, k: &DMatrix<f64>, noise: &[f64]) -> (f64, f64) {
        let base = self.scale.max(f64::MIN_POSITIVE);
        let (mut a, mut b) = (base.ln() - 12.0, base.ln() + 5.0);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let f = |z: f64| self.nll_noisy(k, noise, z.exp());
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..48 {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = f(d);
            }
        }
        let z = 0.5 * (a + b);
        (f(z), z.exp())
    }
}

impl CostFunction for Likelihood<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, z: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let c = self.clamp(z);
        let pen: f64 = z.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
        let v = self.profile(c[0].exp(), c[1].exp()).0;
        Ok(if v.is_finite() { v + 1e3 * pen } else { 1e300 })
    }
}

/// Bounded maximum-likelihood estimate of `(theta, delta)` for residuals at
/// scaled inputs, with sigma^2 profiled. `noise` holds known per-point
/// output variances when the runs are themselves noisy.
pub fn estimate_hyperparameters(
    residuals: &[f64],
    scaled_inputs: &[Vec<f64>],
    actives: &[bool],
    noise: Option<&[f64]>,
    opts: &TrainingOptions,
) -> Result<HyperEstimate> {
    opts.validate()?;
    let n = residuals.len();
    if n < 4 {
        return Err(Error::InsufficientData(format!(
            "hyperparameter estimation needs at least 4 runs, got {n}"
        )));
    }
    let mean_sq = residuals.iter().map(|r| r * r).sum::<f64>() / n as f64;
    let lik = Likelihood {
        resid: residuals,
        u: scaled_inputs,
        actives,
        noise,
        opts,
        scale: mean_sq,
    };
    let b = lik.bounds();
    let has_actives = actives.iter().any(|&a| a);

    const THETA_GRID: usize = 10;
    const DELTA_GRID: usize = 8;
    let lin = |(lo, hi): (f64, f64), k: usize, m: usize| {
        if m == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * k as f64 / (m - 1) as f64
        }
    };
    let theta_pts = if has_actives { THETA_GRID } else { 1 };
    let mut grid: Vec<([f64; 2], f64)> = Vec::with_capacity(theta_pts * DELTA_GRID);
    for i in 0..theta_pts {
        for j in 0..DELTA_GRID {
            let z = [lin(b[0], i, theta_pts), lin(b[1], j, DELTA_GRID)];
            grid.push((z, lik.profile(z[0].exp(), z[1].exp()).0));
        }
    }
    grid.sort_by(|a, b| a.1.total_cmp(&b.1));

    let mut starts = vec![grid[0].0];
    let mut rng = substream(opts.seed, "hyperparameter-starts");
    for _ in 0..opts.extra_starts {
        starts.push([rng.random_range(b[0].0..=b[0].1), rng.random_range(b[1].0..=b[1].1)]);
    }
    let mut best = (grid[0].0, grid[0].1);
    for s in starts {
        let step = [0.1 * (b[0].1 - b[0].0), 0.1 * (b[1].1 - b[1].0)];
        let mut simplex = vec![s.to_vec()];
        for k in 0..2 {
            let mut v = s.to_vec();
            // step inward so the simplex stays inside the box
            v[k] += if v[k] + step[k] <= b[k].1 { step[k] } else { -step[k] };
            simplex.push(v);
        }
        let Ok(solver) = NelderMead::new(simplex).with_sd_tolerance(1e-7) else {
            continue;
        };
        let res = Executor::new(lik, solver)
            .configure(|st| st.max_iters(200))
            .run();
        if let Ok(r) = res {
            if let Some(p) = r.state().get_best_param() {
                let c = lik.clamp(p);
                let v = lik.profile(c[0].exp(), c[1].exp()).0;
                if v < best.1 {
                    best = (c, v);
                }
            }
        }
    }
    if !best.1.is_finite() {
        return Err(Error::Degenerate(
            "no correlation hyperparameters give a finite likelihood".into(),
        ));
    }
    let [zt, zd] = best.0;
    let (theta, delta) = (zt.exp(), zd.exp());
    let sigma_sq = lik.profile(theta, delta).1;
    let mut flags = Vec::new();
    let near = |z: f64, (lo, hi): (f64, f64)| {
        let tol = 1e-3 * (hi - lo).max(1e-12);
        if (z - lo).abs() <= tol {
            Some("lower")
        } else if (hi - z).abs() <= tol {
            Some("upper")
        } else {
            None
        }
    };
    if has_actives {
        if let Some(side) = near(zt, b[0]) {
            flags.push(format!("theta estimate at {side} bound"));
        }
    }
    if let Some(side) = near(zd, b[1]) {
        flags.push(format!("nugget estimate at {side} bound"));
    }
    Ok(HyperEstimate {
        theta: if has_actives { theta } else { (0.5 * (b[0].0 + b[0].1)).exp() },
        delta,
        sigma_sq,
        flags,
    })
}

/// Train one output from scaled points, natural-unit points and values.
pub(crate) fn train_output(
    name: &str,
    space: &ParameterSpace,
    inputs: &[Vec<f64>],
    y: &[f64],
    noise: Option<&[f64]>,
    opts: &TrainingOptions,
) -> Result<TrainedEmulator> {
    let u: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| space.scale_point(x, false))
        .collect::<Result<_>>()?;
    let fit = fit_regression_scaled(&u, y, space.dim(), opts)?;
    let actives = derive_actives(&fit.basis, space.dim());
    let hp = estimate_hyperparameters(&fit.residuals, &u, &actives, noise, opts)?;
    let prior = EmulatorPrior {
        output_name: name.to_string(),
        space: space.clone(),
        basis: fit.basis,
        beta_mean: fit.coefficients,
        beta_var: fit.coefficient_cov,
        sigma_sq: hp.sigma_sq,
        correlator: opts.correlator(hp.theta, hp.delta)?,
        actives,
        discrepancy: Discrepancy::default(),
        flags: hp.flags,
    };
    adjust_points(prior, inputs.to_vec(), y.to_vec(), noise.map(<[f64]>::to_vec))
}

/// Train one emulator per named output on the runs in `runs`.
///
/// Always returns a set, even for a single output.
pub fn emulator_from_data(
    runs: &RunTable,
    output_names: &[String],
    space: &ParameterSpace,
    opts: &TrainingOptions,
) -> Result<EmulatorSet> {
    opts.validate()?;
    if output_names.is_empty() {
        return Err(Error::Argument("no outputs to emulate".into()));
    }
    for o in output_names {
        if !runs.has_output(o) {
            return Err(Error::Schema(format!("output `{o}` is not in the run table")));
        }
    }
    let inputs = runs.points_in(space)?;
    for x in &inputs {
        space.scale_point(x, false)?;
    }
    info!("Fitting regression surfaces...");
    info!("Building correlation structures...");
    info!("Creating emulators...");
    let trained: Vec<Result<TrainedEmulator>> = output_names
        .par_iter()
        .map(|o| {
            let y = runs.output_column(o)?;
            train_output(o, space, &inputs, &y, None, opts).map_err(|e| e.for_output(o))
        })
        .collect();
    info!("Performing Bayes linear adjustment...");
    let mut map = EmulatorMap::new();
    for (o, em) in output_names.iter().zip(trained) {
        map.insert(o.clone(), em?);
    }
    EmulatorSet::deterministic(map)
}

/// Train with per-run additive output variances (as for replicate means).
pub fn emulator_from_noisy_data(
    inputs: &[Vec<f64>],
    outputs: &IndexMap<String, (Vec<f64>, Vec<f64>)>,
    space: &ParameterSpace,
    opts: &TrainingOptions,
) -> Result<EmulatorMap> {
    let jobs: Vec<_> = outputs.iter().collect();
    let trained: Vec<Result<TrainedEmulator>> = jobs
        .par_iter()
        .map(|(o, (y, noise))| {
            train_output(o, space, inputs, y, Some(noise), opts).map_err(|e| e.for_output(o))
        })
        .collect();
    let mut map = EmulatorMap::new();
    for (o, em) in outputs.keys().zip(trained) {
        map.insert(o.clone(), em?);
    }
    Ok(map)
}
