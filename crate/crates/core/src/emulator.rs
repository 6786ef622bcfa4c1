//! Prior emulators, the Bayes linear adjustment and implausibility.

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::Correlator;
use crate::error::{Error, Result};
use crate::space::ParameterSpace;
use crate::table::RunTable;

/// Diagonal jitter added to self-correlation matrices before factorising.
pub const JITTER: f64 = 1e-10;

/// Points per prediction block.
pub const DEFAULT_BLOCK_SIZE: usize = 1024;

/// Version tag written into serialised emulators.
pub const FORMAT_VERSION: u32 = 1;

/// One regression term over scaled coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFunction {
    Constant,
    Linear(usize),
    Quadratic(usize),
    Interaction(usize, usize),
}

impl BasisFunction {
    pub fn eval(&self, u: &[f64]) -> f64 {
        match *self {
            BasisFunction::Constant => 1.0,
            BasisFunction::Linear(i) => u[i],
            BasisFunction::Quadratic(i) => u[i] * u[i],
            BasisFunction::Interaction(i, j) => u[i] * u[j],
        }
    }

    /// Parameter indices the term depends on.
    pub fn variables(&self) -> Vec<usize> {
        match *self {
            BasisFunction::Constant => vec![],
            BasisFunction::Linear(i) | BasisFunction::Quadratic(i) => vec![i],
            BasisFunction::Interaction(i, j) => vec![i, j],
        }
    }

    pub fn label(&self, names: &[String]) -> String {
        match *self {
            BasisFunction::Constant => "(Intercept)".to_string(),
            BasisFunction::Linear(i) => names[i].clone(),
            BasisFunction::Quadratic(i) => format!("I({}^2)", names[i]),
            BasisFunction::Interaction(i, j) => format!("{}:{}", names[i], names[j]),
        }
    }

    fn check(&self, d: usize) -> Result<()> {
        let ok = match *self {
            BasisFunction::Constant => true,
            BasisFunction::Linear(i) | BasisFunction::Quadratic(i) => i < d,
            BasisFunction::Interaction(i, j) => i < d && j < d && i != j,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(format!("basis term {self:?} is invalid for {d} parameters")))
        }
    }
}

/// Structural discrepancy standard deviations, entering implausibility only.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub internal: f64,
    pub external: f64,
}

impl Discrepancy {
    pub fn variance(&self) -> f64 {
        self.internal * self.internal + self.external * self.external
    }
}

/// An observation to match: a value with its standard deviation, or an
/// interval read as a band of three standard deviations either side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TargetRepr", into = "TargetRepr")]
pub enum Target {
    Value { val: f64, sigma: f64 },
    Interval { lower: f64, upper: f64 },
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TargetRepr {
    Value { val: f64, sigma: f64 },
    Interval([f64; 2]),
}

impl TryFrom<TargetRepr> for Target {
    type Error = Error;

    fn try_from(r: TargetRepr) -> Result<Self> {
        match r {
            TargetRepr::Value { val, sigma } => Target::value(val, sigma),
            TargetRepr::Interval([a, b]) => Target::interval(a, b),
        }
    }
}

impl From<Target> for TargetRepr {
    fn from(t: Target) -> Self {
        match t {
            Target::Value { val, sigma } => TargetRepr::Value { val, sigma },
            Target::Interval { lower, upper } => TargetRepr::Interval([lower, upper]),
        }
    }
}

pub type Targets = IndexMap<String, Target>;

impl Target {
    pub fn value(val: f64, sigma: f64) -> Result<Self> {
        if !(val.is_finite() && sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Argument(format!(
                "target needs a finite value and positive sigma, got val {val}, sigma {sigma}"
            )));
        }
        Ok(Target::Value { val, sigma })
    }

    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::Argument(format!(
                "target interval needs finite bounds with lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Target::Interval { lower, upper })
    }

    /// Observed value and observation-error variance.
    pub fn moments(&self) -> (f64, f64) {
        match *self {
            Target::Value { val, sigma } => (val, sigma * sigma),
            Target::Interval { lower, upper } => {
                let s = (upper - lower) / 6.0;
                (0.5 * (lower + upper), s * s)
            }
        }
    }

    /// Whether `y` falls in the three-sigma band, or in the interval.
    pub fn matches(&self, y: f64) -> bool {
        match *self {
            Target::Value { val, sigma } => (y - val).abs() <= 3.0 * sigma,
            Target::Interval { lower, upper } => y >= lower && y <= upper,
        }
    }

    /// Same target with the observation sd multiplied by `k`, keeping the centre.
    pub fn scaled_sd(&self, k: f64) -> Result<Target> {
        match *self {
            Target::Value { val, sigma } => Target::value(val, sigma * k),
            Target::Interval { lower, upper } => {
                let c = 0.5 * (lower + upper);
                let h = 0.5 * (upper - lower) * k;
                Target::interval(c - h, c + h)
            }
        }
    }
}

/// `(z, Var[e])` for a target.
pub fn target_moments(t: &Target) -> (f64, f64) {
    t.moments()
}

/// `|E - z| / sqrt(V + Var[e] + extra)`.
pub fn implausibility_value(exp: f64, var: f64, target: &Target, extra_var: f64) -> f64 {
    let (z, ve) = target.moments();
    (exp - z).abs() / (var.max(0.0) + ve + extra_var).sqrt()
}

/// Second-order prior specification for one output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmulatorPrior {
    pub output_name: String,
    pub space: ParameterSpace,
    pub basis: Vec<BasisFunction>,
    pub beta_mean: Vec<f64>,
    pub beta_var: Vec<Vec<f64>>,
    pub sigma_sq: f64,
    pub correlator: Correlator,
    pub actives: Vec<bool>,
    #[serde(default)]
    pub discrepancy: Discrepancy,
    /// Free-text notes on estimation quality, shown in the summary.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl EmulatorPrior {
    /// Constant-mean prior with no regression uncertainty.
    pub fn constant(
        output_name: impl Into<String>,
        space: ParameterSpace,
        mean: f64,
        sigma_sq: f64,
        correlator: Correlator,
    ) -> Result<Self> {
        let d = space.dim();
        let p = EmulatorPrior {
            output_name: output_name.into(),
            space,
            basis: vec![BasisFunction::Constant],
            beta_mean: vec![mean],
            beta_var: vec![vec![0.0]],
            sigma_sq,
            correlator,
            actives: vec![true; d],
            discrepancy: Discrepancy::default(),
            flags: Vec::new(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.space.dim();
        let p = self.basis.len();
        if !self.basis.contains(&BasisFunction::Constant) {
            return Err(Error::Argument("basis must contain the constant term".into()));
        }
        for b in &self.basis {
            b.check(d)?;
        }
        if self.beta_mean.len() != p
            || self.beta_var.len() != p
            || self.beta_var.iter().any(|r| r.len() != p)
        {
            return Err(Error::Argument(format!(
                "regression moments do not match the {p} basis functions"
            )));
        }
        for i in 0..p {
            for j in 0..i {
                let (a, b) = (self.beta_var[i][j], self.beta_var[j][i]);
                if (a - b).abs() > 1e-9 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::Argument("Var[beta] must be symmetric".into()));
                }
            }
        }
        if !(self.sigma_sq > 0.0 && self.sigma_sq.is_finite()) {
            return Err(Error::Hyperparameter(format!(
                "sigma^2 must be positive, got {}",
                self.sigma_sq
            )));
        }
        if self.actives.len() != d {
            return Err(Error::Argument("active mask length does not match the space".into()));
        }
        for b in &self.basis {
            for v in b.variables() {
                if !self.actives[v] {
                    return Err(Error::Argument(format!(
                        "`{}` appears in the basis but is not active",
                        self.space.parameters()[v].name
                    )));
                }
            }
        }
        if !(self.discrepancy.internal >= 0.0 && self.discrepancy.external >= 0.0) {
            return Err(Error::Argument("discrepancy sds must be non-negative".into()));
        }
        Ok(())
    }

    fn beta_var_is_zero(&self) -> bool {
        self.beta_var.iter().flatten().all(|&v| v == 0.0)
    }

    fn basis_row(&self, u: &[f64]) -> Vec<f64> {
        self.basis.iter().map(|b| b.eval(u)).collect()
    }

    fn mean_scaled(&self, u: &[f64]) -> f64 {
        self.basis.iter().zip(&self.beta_mean).map(|(b, m)| b.eval(u) * m).sum()
    }

    fn quad(&self, g: &[f64], h: &[f64]) -> f64 {
        let mut s = 0.0;
        for (i, gi) in g.iter().enumerate() {
            for (j, hj) in h.iter().enumerate() {
                s += gi * self.beta_var[i][j] * hj;
            }
        }
        s
    }

    /// `g(x)^T E[beta]` at a point in natural units.
    pub fn prior_expectation(&self, x: &[f64]) -> Result<f64> {
        let u = self.space.scale_point(x, true)?;
        Ok(self.mean_scaled(&u))
    }

    /// `g(x)^T Var[beta] g(x') + sigma^2 rho(x, x')`.
    pub fn prior_covariance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let u = self.space.scale_point(x, true)?;
        let v = self.space.scale_point(y, true)?;
        Ok(self.quad(&self.basis_row(&u), &self.basis_row(&v))
            + self.sigma_sq * self.correlator.value(&u, &v, &self.actives))
    }

    /// Basis labels, for printing.
    pub fn basis_labels(&self) -> Vec<String> {
        let names = self.space.names();
        self.basis.iter().map(|b| b.label(&names)).collect()
    }

    pub fn active_names(&self) -> Vec<String> {
        self.space
            .parameters()
            .iter()
            .zip(&self.actives)
            .filter(|(_, &a)| a)
            .map(|(p, _)| p.name.clone())
            .collect()
    }
}

/// Adjusted covariance output of [`TrainedEmulator::get_cov`].
#[derive(Clone, Debug, PartialEq)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

#[derive(Serialize, Deserialize)]
struct EmulatorDoc {
    format_version: u32,
    prior: EmulatorPrior,
    train_inputs: Vec<Vec<f64>>,
    train_outputs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    obs_noise_var: Option<Vec<f64>>,
}

/// A prior emulator adjusted by training runs.
///
/// Serialises to the prior plus the training data; the factorisation is
/// rebuilt on load.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "EmulatorDoc", into = "EmulatorDoc")]
pub struct TrainedEmulator {
    prior: EmulatorPrior,
    train_inputs: Vec<Vec<f64>>,
    train_outputs: Vec<f64>,
    obs_noise_var: Option<Vec<f64>>,
    cache: Cache,
}

// four independent partial sums so the adds pipeline
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

struct Scratch {
    ua: Vec<f64>,
    g: Vec<f64>,
    k: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch { ua: Vec::new(), g: Vec::new(), k: vec![0.0; n] }
    }
}

#[derive(Clone, Debug)]
struct Cache {
    scaled: Vec<Vec<f64>>,
    // active coordinates of the scaled training points, row-major
    packed: Vec<f64>,
    active_idx: Vec<usize>,
    // row-major lower Cholesky factor of Var[D]
    chol: Vec<f64>,
    inv_diag: Vec<f64>,
    alpha: Vec<f64>,
    // G Var[beta], n x p, present only when Var[beta] is nonzero
    g_vb: Option<Vec<Vec<f64>>>,
    block_size: usize,
}

impl PartialEq for TrainedEmulator {
    fn eq(&self, other: &Self) -> bool {
        self.prior == other.prior
            && self.train_inputs == other.train_inputs
            && self.train_outputs == other.train_outputs
            && self.obs_noise_var == other.obs_noise_var
    }
}

impl TryFrom<EmulatorDoc> for TrainedEmulator {
    type Error = Error;

    fn try_from(doc: EmulatorDoc) -> Result<Self> {
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported emulator format version {} (expected {FORMAT_VERSION})",
                doc.format_version
            )));
        }
        adjust_points(doc.prior, doc.train_inputs, doc.train_outputs, doc.obs_noise_var)
    }
}

impl From<TrainedEmulator> for EmulatorDoc {
    fn from(em: TrainedEmulator) -> Self {
        EmulatorDoc {
            format_version: FORMAT_VERSION,
            prior: em.prior,
            train_inputs: em.train_inputs,
            train_outputs: em.train_outputs,
            obs_noise_var: em.obs_noise_var,
        }
    }
}

/// Adjust `prior` by the runs in `runs`, which must carry its output column.
pub fn adjust(prior: EmulatorPrior, runs: &RunTable, obs_noise_var: Option<Vec<f64>>) -> Result<TrainedEmulator> {
    let inputs = runs.points_in(&prior.space)?;
    let outputs = runs.output_column(&prior.output_name)?;
    adjust_points(prior, inputs, outputs, obs_noise_var)
}

/// Adjust `prior` by training points given in the canonical column order.
pub fn adjust_points(
    prior: EmulatorPrior,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    obs_noise_var: Option<Vec<f64>>,
) -> Result<TrainedEmulator> {
    prior.validate()?;
    let n = inputs.len();
    if n == 0 {
        return Err(Error::InsufficientData("no training runs".into()));
    }
    if outputs.len() != n {
        return Err(Error::Schema("training outputs do not match inputs".into()));
    }
    if inputs.iter().any(|r| r.len() != prior.space.dim()) {
        return Err(Error::Schema("training input has the wrong number of coordinates".into()));
    }
    if let Some(v) = &obs_noise_var {
        if v.len() != n || v.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::Argument(
                "observation noise variances must be non-negative, one per run".into(),
            ));
        }
    }
    if outputs.iter().any(|y| !y.is_finite()) {
        return Err(Error::Argument(format!(
            "non-finite training output for `{}`",
            prior.output_name
        )));
    }
    let scaled: Vec<Vec<f64>> = inputs.iter().map(|x| prior.space.scale_unchecked(x)).collect();
    let g: Vec<Vec<f64>> = scaled.iter().map(|u| prior.basis_row(u)).collect();
    let mut var_d = prior.correlator.self_matrix(&scaled, &prior.actives);
    for i in 0..n {
        var_d[(i, i)] += JITTER;
    }
    var_d *= prior.sigma_sq;
    let g_vb = if prior.beta_var_is_zero() {
        None
    } else {
        let gm = DMatrix::from_fn(n, prior.basis.len(), |i, j| g[i][j]);
        let vb = DMatrix::from_fn(prior.basis.len(), prior.basis.len(), |i, j| prior.beta_var[i][j]);
        let gv = &gm * &vb;
        var_d += &gv * gm.transpose();
        Some((0..n).map(|i| gv.row(i).iter().copied().collect()).collect())
    };
    if let Some(v) = &obs_noise_var {
        for i in 0..n {
            var_d[(i, i)] += v[i];
        }
    }
    let diag: Vec<f64> = var_d.diagonal().iter().copied().collect();
    let chol = var_d.cholesky().ok_or_else(|| Error::Conditioning {
        output: prior.output_name.clone(),
    })?;
    let resid = DVector::from_iterator(
        n,
        outputs
            .iter()
            .zip(&scaled)
            .map(|(y, u)| y - prior.mean_scaled(u)),
    );
    let alpha = chol.solve(&resid);
    let l = chol.l();
    // a pivot this small means the jitter alone is holding the factor together
    for i in 0..n {
        if l[(i, i)] * l[(i, i)] <= 4.0 * JITTER * diag[i] {
            return Err(Error::Conditioning {
                output: prior.output_name.clone(),
            });
        }
    }
    let active_idx: Vec<usize> = (0..prior.actives.len()).filter(|&i| prior.actives[i]).collect();
    let packed = scaled.iter().flat_map(|u| active_idx.iter().map(|&i| u[i])).collect();
    let mut flat = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            flat[i * n + j] = l[(i, j)];
        }
    }
    Ok(TrainedEmulator {
        cache: Cache {
            scaled,
            packed,
            active_idx,
            inv_diag: (0..n).map(|i| 1.0 / l[(i, i)]).collect(),
            chol: flat,
            alpha: alpha.iter().copied().collect(),
            g_vb,
            block_size: DEFAULT_BLOCK_SIZE,
        },
        prior,
        train_inputs: inputs,
        train_outputs: outputs,
        obs_noise_var,
    })
}

impl TrainedEmulator {
    pub fn prior(&self) -> &EmulatorPrior {
        &self.prior
    }

    pub fn output_name(&self) -> &str {
        &self.prior.output_name
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.prior.space
    }

    pub fn train_inputs(&self) -> &[Vec<f64>] {
        &self.train_inputs
    }

    pub fn train_outputs(&self) -> &[f64] {
        &self.train_outputs
    }

    pub fn obs_noise_var(&self) -> Option<&[f64]> {
        self.obs_noise_var.as_deref()
    }

    pub fn n_train(&self) -> usize {
        self.train_inputs.len()
    }

    pub fn discrepancy_var(&self) -> f64 {
        self.prior.discrepancy.variance()
    }

    pub fn with_block_size(mut self, block_size: usize) -> Self {
        self.cache.block_size = block_size.max(1);
        self
    }

    /// Same training data under a modified prior.
    pub fn readjust(&self, prior: EmulatorPrior) -> Result<TrainedEmulator> {
        adjust_points(
            prior,
            self.train_inputs.clone(),
            self.train_outputs.clone(),
            self.obs_noise_var.clone(),
        )
    }

    /// Same prior and data with the discrepancy replaced.
    pub fn with_discrepancy(mut self, d: Discrepancy) -> Self {
        self.prior.discrepancy = d;
        self
    }

    fn n(&self) -> usize {
        self.train_inputs.len()
    }

    // Covariance vector between a scaled point and the training set, plus
    // the basis row at the point.
    fn cov_vector(&self, u: &[f64], s: &mut Scratch) {
        let p = &self.prior;
        let c = &self.cache;
        s.ua.clear();
        s.ua.extend(c.active_idx.iter().map(|&i| u[i]));
        let keep = p.sigma_sq * (1.0 - p.correlator.nugget());
        let a = c.active_idx.len();
        for (j, kj) in s.k.iter_mut().enumerate() {
            let row = &c.packed[j * a..(j + 1) * a];
            let r2: f64 = row.iter().zip(&s.ua).map(|(x, y)| (x - y) * (x - y)).sum();
            *kj = if r2 != 0.0 {
                keep * p.correlator.base_sq(r2)
            } else if u == c.scaled[j].as_slice() {
                p.sigma_sq
            } else {
                keep
            };
        }
        if let Some(gv) = &c.g_vb {
            for (kj, row) in s.k.iter_mut().zip(gv) {
                *kj += row.iter().zip(&s.g).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }

    // Solve L v = k in place.
    fn forward(&self, v: &mut [f64]) {
        let n = self.n();
        let l = &self.cache.chol;
        for i in 0..n {
            let s = dot(&l[i * n..i * n + i], &v[..i]);
            v[i] = (v[i] - s) * self.cache.inv_diag[i];
        }
    }

    fn moments_scaled(&self, u: &[f64], want_var: bool, s: &mut Scratch) -> (f64, f64) {
        let p = &self.prior;
        s.g.clear();
        s.g.extend(p.basis.iter().map(|b| b.eval(u)));
        self.cov_vector(u, s);
        let mean: f64 = s.g.iter().zip(&p.beta_mean).map(|(a, b)| a * b).sum();
        let e = mean + dot(&s.k, &self.cache.alpha);
        if !want_var {
            return (e, f64::NAN);
        }
        let prior_var = p.sigma_sq + p.quad(&s.g, &s.g);
        self.forward(&mut s.k);
        let v = prior_var - dot(&s.k, &s.k);
        (e, v.max(0.0))
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        let d = self.prior.space.dim();
        if x.len() != d {
            return Err(Error::Schema(format!(
                "point has {} coordinates, emulator `{}` expects {d}",
                x.len(),
                self.prior.output_name
            )));
        }
        Ok(())
    }

    fn block(&self, points: &[Vec<f64>], want_var: bool) -> Vec<(f64, f64)> {
        let mut s = Scratch::new(self.n());
        let space = &self.prior.space;
        let mut u = Vec::with_capacity(space.dim());
        points
            .iter()
            .map(|x| {
                space.scale_into(x, &mut u);
                self.moments_scaled(&u, want_var, &mut s)
            })
            .collect()
    }

    fn batch(&self, points: &[Vec<f64>], want_var: bool) -> Result<Vec<(f64, f64)>> {
        for x in points {
            self.check_point(x)?;
        }
        let bs = self.cache.block_size;
        if points.len() <= bs || rayon::current_num_threads() == 1 {
            return Ok(self.block(points, want_var));
        }
        let blocks: Vec<Vec<(f64, f64)>> =
            points.par_chunks(bs).map(|chunk| self.block(chunk, want_var)).collect();
        Ok(blocks.into_iter().flatten().collect())
    }

    /// Adjusted expectations at points in natural units, canonical order.
    /// Points outside the ranges are extrapolated.
    pub fn expectation(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.batch(points, false)?.into_iter().map(|m| m.0).collect())
    }

    /// Adjusted variances, clamped at zero.
    pub fn variance(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.batch(points, true)?.into_iter().map(|m| m.1).collect())
    }

    /// Adjusted expectations and variances together.
    pub fn predict(&self, points: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok(self.batch(points, true)?.into_iter().unzip())
    }

    /// Adjusted moments at a single point.
    pub fn predict_one(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check_point(x)?;
        let u = self.prior.space.scale_unchecked(x);
        Ok(self.moments_scaled(&u, true, &mut Scratch::new(self.n())))
    }

    /// Full adjusted covariance between two point sets.
    pub fn covariance_between(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let scale = |pts: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
            pts.iter()
                .map(|x| self.check_point(x).map(|_| self.prior.space.scale_unchecked(x)))
                .collect()
        };
        let ua = scale(a)?;
        let ub = scale(b)?;
        let solve = |pts: &[Vec<f64>]| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
            let mut gs = Vec::with_capacity(pts.len());
            let mut vs = Vec::with_capacity(pts.len());
            for u in pts {
                let mut s = Scratch::new(self.n());
                s.g = self.prior.basis_row(u);
                self.cov_vector(u, &mut s);
                self.forward(&mut s.k);
                gs.push(s.g);
                vs.push(s.k);
            }
            (gs, vs)
        };
        let (ga, va) = solve(&ua);
        let (gb, vb) = solve(&ub);
        let p = &self.prior;
        Ok(DMatrix::from_fn(ua.len(), ub.len(), |i, j| {
            let prior = p.quad(&ga[i], &gb[j]) + p.sigma_sq * p.correlator.value(&ua[i], &ub[j], &p.actives);
            prior - va[i].iter().zip(&vb[j]).map(|(x, y)| x * y).sum::<f64>()
        }))
    }

    /// Leave-one-out moments of the simulator output at each training
    /// point, from the inverse of the training covariance.
    pub fn loo_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let l = DMatrix::from_fn(n, n, |i, j| if j <= i { self.cache.chol[i * n + j] } else { 0.0 });
        let l_inv = l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("cached factor has a positive diagonal");
        let mut exp = Vec::with_capacity(n);
        let mut var = Vec::with_capacity(n);
        for i in 0..n {
            // diagonal of L^-T L^-1
            let prec: f64 = l_inv.column(i).iter().map(|a| a * a).sum();
            let mean = self.prior.mean_scaled(&self.cache.scaled[i]);
            let r = self.train_outputs[i] - mean;
            exp.push(mean + r - self.cache.alpha[i] / prec);
            let noise = self.obs_noise_var.as_ref().map_or(0.0, |v| v[i]);
            var.push((1.0 / prec - noise).max(0.0));
        }
        (exp, var)
    }

    /// Adjusted expectations at the rows of a run table.
    pub fn get_exp(&self, points: &RunTable) -> Result<Vec<f64>> {
        self.expectation(&points.points_in(&self.prior.space)?)
    }

    /// Adjusted variances, or the full covariance matrix when `full` is set.
    pub fn get_cov(&self, points: &RunTable, full: bool) -> Result<Covariance> {
        let pts = points.points_in(&self.prior.space)?;
        if full {
            let mut m = self.covariance_between(&pts, &pts)?;
            for i in 0..m.nrows() {
                m[(i, i)] = m[(i, i)].max(0.0);
                for j in 0..i {
                    let s = 0.5 * (m[(i, j)] + m[(j, i)]);
                    m[(i, j)] = s;
                    m[(j, i)] = s;
                }
            }
            Ok(Covariance::Full(m))
        } else {
            Ok(Covariance::Diagonal(self.variance(&pts)?))
        }
    }

    /// Implausibility of each point against `target`, with `extra_var`
    /// added to every denominator (the stochastic variance for mean
    /// emulators of a variance set, zero otherwise).
    pub fn implausibility_points(
        &self,
        points: &[Vec<f64>],
        target: &Target,
        extra_var: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let (e, v) = self.predict(points)?;
        let disc = self.discrepancy_var();
        Ok((0..e.len())
            .map(|i| {
                let x = extra_var.map_or(0.0, |xv| xv[i].max(0.0));
                implausibility_value(e[i], v[i], target, disc + x)
            })
            .collect())
    }

    pub fn implausibility(&self, points: &RunTable, target: &Target) -> Result<Vec<f64>> {
        self.implausibility_points(&points.points_in(&self.prior.space)?, target, None)
    }

    /// Whether each point's implausibility is at most `cutoff`.
    pub fn implausibility_within(&self, points: &RunTable, target: &Target, cutoff: f64) -> Result<Vec<bool>> {
        Ok(self
            .implausibility(points, target)?
            .into_iter()
            .map(|i| i <= cutoff)
            .collect())
    }

    /// Human-readable description of the prior and adjustment.
    pub fn summary(&self) -> String {
        let p = &self.prior;
        let ranges: Vec<String> = p
            .space
            .parameters()
            .iter()
            .map(|q| format!("{}: [{}, {}]", q.name, q.lower, q.upper))
            .collect();
        let beta_var = DMatrix::from_fn(p.basis.len(), p.basis.len(), |i, j| p.beta_var[i][j]);
        let mut eig: Vec<f64> = beta_var.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        let hp = p.correlator.hyperparameters();
        let mut hps = vec![format!("theta: {}", signif(hp.theta, 4))];
        if let Some(nu) = hp.nu {
            hps.push(format!("nu: {nu}"));
        }
        if let Some(alpha) = hp.alpha {
            hps.push(format!("alpha: {alpha}"));
        }
        let mut s = String::new();
        s += &format!("Output: {}\n", p.output_name);
        s += &format!("Parameters and ranges: {}\n", ranges.join("; "));
        s += "Specifications:\n";
        s += &format!("\tBasis functions: {}\n", p.basis_labels().join("; "));
        s += &format!("\tActive variables: {}\n", p.active_names().join("; "));
        s += &format!("\tRegression surface expectation: {}\n", join_signif(&p.beta_mean));
        s += &format!("\tRegression surface variance (eigenvalues): {}\n", join_signif(&eig));
        s += "Correlation structure:\n";
        s += &format!("\tBayes-adjusted emulator ({} training runs), prior specifications listed.\n", self.n());
        s += &format!("\tVariance (representative): {}\n", signif(p.sigma_sq, 7));
        s += "\tExpectation: 0\n";
        s += &format!("\tCorrelation type: {}\n", p.correlator.kind().as_str());
        s += &format!("\tHyperparameters: {}\n", hps.join("; "));
        s += &format!("\tNugget term: {}\n", signif(p.correlator.nugget(), 4));
        s += &format!(
            "Mixed covariance: {}\n",
            vec!["0"; p.basis.len()].join(" ")
        );
        if p.discrepancy.variance() > 0.0 {
            s += &format!(
                "Discrepancy: internal {}; external {}\n",
                p.discrepancy.internal, p.discrepancy.external
            );
        }
        if !p.flags.is_empty() {
            s += &format!("Quality flags: {}\n", p.flags.join("; "));
        }
        s
    }
}

/// Round to `digits` significant figures for display.
pub(crate) fn signif(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let mag = x.abs().log10().floor() as i32;
    let f = 10f64.powi(digits - 1 - mag);
    let r = (x * f).round() / f;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn join_signif(v: &[f64]) -> String {
    v.iter()
        .map(|x| {
            let r = signif(*x, 7);
            if r.abs() < 1e-12 * (1.0 + v.iter().fold(0.0f64, |m, y| m.max(y.abs()))) {
                "0".to_string()
            } else {
                r.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("; ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::KernelKind;
    use proptest::prelude::*;

    fn sirs() -> ParameterSpace {
        ParameterSpace::new([("aSI", 0.1, 0.8), ("aIR", 0.0, 0.5), ("aSR", 0.0, 0.05)]).unwrap()
    }

    fn ni_prior() -> EmulatorPrior {
        use BasisFunction::*;
        EmulatorPrior {
            output_name: "nI".into(),
            space: sirs(),
            basis: vec![Constant, Linear(0), Linear(1), Quadratic(1), Interaction(0, 1)],
            beta_mean: vec![149.8096, 199.5466, -281.9466, 201.6298, -196.1621],
            beta_var: vec![vec![0.0; 5]; 5],
            sigma_sq: 3226.426,
            correlator: Correlator::new(KernelKind::ExpSq, 0.9033, 0.05).unwrap(),
            actives: vec![true, true, false],
            discrepancy: Discrepancy::default(),
            flags: vec![],
        }
    }

    #[test]
    fn target_moment_values() {
        let (z, v) = Target::value(169.0, 8.45).unwrap().moments();
        assert_eq!(z, 169.0);
        assert!((v - 71.4025).abs() < 1e-10);
        let (z, v) = Target::interval(580.0, 651.0).unwrap().moments();
        assert_eq!(z, 615.5);
        assert!((v - 140.0277777777778).abs() < 1e-9);
        let (z, v) = Target::interval(-1.0, 1.0).unwrap().moments();
        assert_eq!(z, 0.0);
        assert!((v - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn target_json_forms() {
        let t: Targets =
            serde_json::from_str(r#"{"nS": [580, 651], "nI": {"val": 169, "sigma": 8.45}}"#).unwrap();
        assert_eq!(t["nS"], Target::Interval { lower: 580.0, upper: 651.0 });
        assert_eq!(t["nI"], Target::Value { val: 169.0, sigma: 8.45 });
        assert!(serde_json::from_str::<Target>("[3, 1]").is_err());
        assert!(serde_json::from_str::<Target>(r#"{"val": 1, "sigma": 0}"#).is_err());
    }

    #[test]
    fn prior_expectation_examples() {
        let s = ParameterSpace::new([("x1", 0.0, 2.0)]).unwrap();
        let mut p = EmulatorPrior::constant("y", s.clone(), 5.0, 1.0, Correlator::default()).unwrap();
        assert_eq!(p.prior_expectation(&[0.3]).unwrap(), 5.0);
        p.basis.push(BasisFunction::Linear(0));
        p.beta_mean = vec![0.1, -1.0];
        p.beta_var = vec![vec![0.0; 2]; 2];
        assert!((p.prior_expectation(&[2.0]).unwrap() + 0.9).abs() < 1e-15);
        let n = ni_prior();
        assert!((n.prior_expectation(&[0.45, 0.25, 0.025]).unwrap() - 149.8096).abs() < 1e-12);
    }

    #[test]
    fn prior_covariance_examples() {
        let p = ni_prior();
        let x = [0.3, 0.2, 0.01];
        assert!((p.prior_covariance(&x, &x).unwrap() - 3226.426).abs() < 1e-9);
        let far = p.prior_covariance(&[0.1, 0.0, 0.0], &[0.8, 0.5, 0.0]).unwrap();
        assert!(far < 1e-2 * 3226.426);
        // hand evaluation on scaled coordinates
        let y = [0.45, 0.25, 0.03];
        let du = (0.3 - 0.45) / 0.35;
        let dv = (0.2 - 0.25) / 0.25;
        let want = 3226.426 * 0.95 * (-(du * du + dv * dv) / (0.9033f64 * 0.9033)).exp();
        assert!((p.prior_covariance(&x, &y).unwrap() - want).abs() < 1e-9);
    }

    fn toy_runs() -> (ParameterSpace, Vec<Vec<f64>>, Vec<f64>) {
        let s = ParameterSpace::new([("a", 0.0, 1.0), ("b", 0.0, 1.0)]).unwrap();
        let x = vec![
            vec![0.1, 0.2],
            vec![0.5, 0.9],
            vec![0.8, 0.4],
            vec![0.3, 0.7],
            vec![0.95, 0.05],
        ];
        let y = x.iter().map(|r: &Vec<f64>| (3.0 * r[0]).sin() + r[1] * r[1]).collect();
        (s, x, y)
    }

    #[test]
    fn interpolates_training_points() {
        let (s, x, y) = toy_runs();
        let prior = EmulatorPrior::constant("y", s, 0.5, 1.0, Correlator::new(KernelKind::ExpSq, 0.8, 0.0).unwrap()).unwrap();
        let em = adjust_points(prior, x.clone(), y.clone(), None).unwrap();
        let (e, v) = em.predict(&x).unwrap();
        for i in 0..x.len() {
            assert!((e[i] - y[i]).abs() <= 1e-6 * y[i].abs().max(1.0));
            assert!(v[i] <= 1e-8);
        }
    }

    #[test]
    fn far_point_returns_prior() {
        let (s, x, y) = toy_runs();
        let prior = EmulatorPrior::constant("y", s, 0.5, 2.0, Correlator::new(KernelKind::ExpSq, 0.05, 0.0).unwrap()).unwrap();
        let em = adjust_points(prior, x, y, None).unwrap();
        let (e, v) = em.predict_one(&[0.6, 0.1]).unwrap();
        assert!((e - 0.5).abs() < 1e-12);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn two_point_explicit_inverse() {
        let s = ParameterSpace::new([("a", 0.0, 1.0)]).unwrap();
        let c = Correlator::new(KernelKind::ExpSq, 0.6, 0.0).unwrap();
        let prior = EmulatorPrior::constant("y", s.clone(), 1.0, 4.0, c.clone()).unwrap();
        let x = vec![vec![0.2], vec![0.7]];
        let y = vec![2.0, -1.0];
        let em = adjust_points(prior, x.clone(), y.clone(), None).unwrap();
        let sc = |v: f64| 2.0 * v - 1.0;
        let r = c.base((sc(0.2) - sc(0.7)).abs());
        let (a, b, d) = (4.0 * (1.0 + JITTER), 4.0 * r, 4.0 * (1.0 + JITTER));
        let det = a * d - b * b;
        let inv = [[d / det, -b / det], [-b / det, a / det]];
        let q = 0.4;
        let k = [4.0 * c.base((sc(q) - sc(0.2)).abs()), 4.0 * c.base((sc(q) - sc(0.7)).abs())];
        let res = [y[0] - 1.0, y[1] - 1.0];
        let mut e = 1.0;
        let mut v = 4.0;
        for i in 0..2 {
            for j in 0..2 {
                e += k[i] * inv[i][j] * res[j];
                v -= k[i] * inv[i][j] * k[j];
            }
        }
        let (ge, gv) = em.predict_one(&[q]).unwrap();
        assert!((ge - e).abs() < 1e-10 * e.abs().max(1.0));
        assert!((gv - v).abs() < 1e-10 * 4.0);
    }

    #[test]
    fn loo_closed_form_matches_refit() {
        let (s, x, y) = toy_runs();
        let mut prior = EmulatorPrior::constant("y", s, 0.2, 1.5, Correlator::new(KernelKind::ExpSq, 0.7, 0.05).unwrap()).unwrap();
        prior.beta_var = vec![vec![0.3]];
        let noise = vec![0.01, 0.0, 0.02, 0.005, 0.0];
        let em = adjust_points(prior.clone(), x.clone(), y.clone(), Some(noise.clone())).unwrap();
        let (le, lv) = em.loo_moments();
        for i in 0..x.len() {
            let keep: Vec<usize> = (0..x.len()).filter(|&j| j != i).collect();
            let sub = adjust_points(
                prior.clone(),
                keep.iter().map(|&j| x[j].clone()).collect(),
                keep.iter().map(|&j| y[j]).collect(),
                Some(keep.iter().map(|&j| noise[j]).collect()),
            )
            .unwrap();
            let (e, v) = sub.predict_one(&x[i]).unwrap();
            assert!((le[i] - e).abs() < 1e-7, "{i}: {} vs {e}", le[i]);
            assert!((lv[i] - v).abs() < 1e-7, "{i}: {} vs {v}", lv[i]);
        }
    }

    #[test]
    fn full_covariance_symmetric_psd() {
        let (s, x, y) = toy_runs();
        let prior = EmulatorPrior::constant("y", s.clone(), 0.0, 1.0, Correlator::new(KernelKind::Matern, 0.7, 0.1).unwrap()).unwrap();
        let em = adjust_points(prior, x, y, None).unwrap();
        let pts = RunTable::from_space_points(
            &s,
            vec![vec![0.0, 0.0], vec![0.2, 0.6], vec![0.9, 0.9], vec![0.4, 0.45], vec![0.41, 0.46]],
        )
        .unwrap();
        let Covariance::Full(m) = em.get_cov(&pts, true).unwrap() else {
            panic!()
        };
        assert_eq!(m, m.transpose());
        assert!(m.symmetric_eigenvalues().iter().all(|&e| e > -1e-10));
        let Covariance::Diagonal(d) = em.get_cov(&pts, false).unwrap() else {
            panic!()
        };
        for i in 0..5 {
            assert!((d[i] - m[(i, i)]).abs() < 1e-10);
        }
    }

    #[test]
    fn duplicate_points_without_nugget_fail_to_factorise() {
        let s = ParameterSpace::new([("a", 0.0, 1.0)]).unwrap();
        let c = Correlator::new(KernelKind::ExpSq, 0.5, 0.0).unwrap();
        let prior = EmulatorPrior::constant("y", s, 0.0, 1.0, c).unwrap();
        let r = adjust_points(prior, vec![vec![0.3], vec![0.3]], vec![1.0, 2.0], None);
        assert!(matches!(r, Err(Error::Conditioning { .. })));
    }

    #[test]
    fn implausibility_definition() {
        let (s, x, y) = toy_runs();
        let prior = EmulatorPrior::constant("y", s, 0.0, 1.0, Correlator::new(KernelKind::ExpSq, 0.1, 0.0).unwrap()).unwrap();
        let em = adjust_points(prior, x.clone(), y.clone(), None).unwrap();
        // at a training point E_D = f, so I is zero against the exact value
        let t = Target::value(y[0], 1.0).unwrap();
        let i = em.implausibility_points(&x[..1], &t, None).unwrap();
        assert!(i[0] < 1e-6);
        let (e, v) = em.predict_one(&[0.6, 0.6]).unwrap();
        let t = Target::value(e - 3.0 * (v + 4.0).sqrt(), 2.0).unwrap();
        let i = em.implausibility_points(&[vec![0.6, 0.6]], &t, None).unwrap();
        assert!((i[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_is_byte_stable() {
        let (s, x, y) = toy_runs();
        let mut prior = EmulatorPrior::constant("y", s, 0.1, 1.3, Correlator::new(KernelKind::RatQuad, 0.4, 0.02).unwrap()).unwrap();
        prior.discrepancy = Discrepancy { internal: 0.1, external: 0.2 };
        let em = adjust_points(prior, x, y, Some(vec![0.0, 0.1, 0.0, 0.0, 0.3])).unwrap();
        let a = serde_json::to_string(&em).unwrap();
        let back: TrainedEmulator = serde_json::from_str(&a).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), a);
        assert_eq!(back.predict_one(&[0.3, 0.3]).unwrap(), em.predict_one(&[0.3, 0.3]).unwrap());
        let wrong = a.replace("\"format_version\":1", "\"format_version\":99");
        assert!(serde_json::from_str::<TrainedEmulator>(&wrong).is_err());
    }

    #[test]
    fn summary_lists_sections() {
        let p = ni_prior();
        let x: Vec<Vec<f64>> = vec![vec![0.2, 0.1, 0.01], vec![0.6, 0.4, 0.04], vec![0.4, 0.3, 0.02]];
        let em = adjust_points(p, x, vec![100.0, 150.0, 170.0], None).unwrap();
        let s = em.summary();
        assert!(s.contains("Basis functions: (Intercept); aSI; aIR; I(aIR^2); aSI:aIR"));
        assert!(s.contains("Active variables: aSI; aIR\n"));
        assert!(s.contains("Regression surface expectation: 149.8096; 199.5466; -281.9466; 201.6298; -196.1621"));
        assert!(s.contains("Variance (representative): 3226.426"));
        assert!(s.contains("theta: 0.9033"));
        assert!(s.contains("Nugget term: 0.05"));
        assert!(s.contains("Mixed covariance: 0 0 0 0 0"));
    }

    type Instance = (usize, Vec<Vec<f64>>, Vec<f64>, Vec<f64>, f64, f64, f64);

    fn random_instance() -> impl Strategy<Value = Instance> {
        (1usize..=3).prop_flat_map(|d| {
            (
                Just(d),
                prop::collection::vec(prop::collection::vec(0.0f64..1.0, d), 2..=8),
                prop::collection::vec(-5.0f64..5.0, 8),
                prop::collection::vec(0.0f64..1.0, d),
                0.2f64..2.0,
                0.0f64..0.3,
                0.3f64..3.0,
            )
        })
    }

    proptest! {
        #[test]
        fn variance_never_exceeds_prior_and_cauchy_schwarz(
            (d, x, y, q, theta, nug, s2) in random_instance(),
            q2 in prop::collection::vec(0.0f64..1.0, 3),
        ) {
            let names: Vec<(String, f64, f64)> = (0..d).map(|i| (format!("x{i}"), 0.0, 1.0)).collect();
            let s = ParameterSpace::new(names).unwrap();
            let prior = EmulatorPrior::constant("y", s, 0.3, s2, Correlator::new(KernelKind::ExpSq, theta, nug.max(1e-3)).unwrap()).unwrap();
            let n = x.len();
            let em = adjust_points(prior, x, y[..n].to_vec(), None).unwrap();
            let a = q.clone();
            let b = q2[..d].to_vec();
            let (_, va) = em.predict_one(&a).unwrap();
            let (_, vb) = em.predict_one(&b).unwrap();
            prop_assert!(va <= s2 + 1e-10);
            let c = em.covariance_between(&[a], &[b]).unwrap()[(0, 0)];
            prop_assert!(c * c <= va * vb * (1.0 + 1e-8) + 1e-10);
        }

        #[test]
        fn implausibility_invariant_to_affine_units(
            (d, x, y, q, theta, _nug, s2) in random_instance(),
            scale in 0.1f64..20.0,
            shift in -50.0f64..50.0,
        ) {
            let names: Vec<(String, f64, f64)> = (0..d).map(|i| (format!("x{i}"), 0.0, 1.0)).collect();
            let s = ParameterSpace::new(names).unwrap();
            let n = x.len();
            let mk = |k: f64, c: f64| {
                let mut prior = EmulatorPrior::constant("y", s.clone(), 0.3 * k + c, s2 * k * k, Correlator::new(KernelKind::ExpSq, theta, 0.05).unwrap()).unwrap();
                prior.discrepancy = Discrepancy { internal: 0.2 * k, external: 0.1 * k };
                let ys: Vec<f64> = y[..n].iter().map(|v| v * k + c).collect();
                let em = adjust_points(prior, x.clone(), ys, None).unwrap();
                let t = Target::value(1.0 * k + c, 0.5 * k).unwrap();
                em.implausibility_points(std::slice::from_ref(&q), &t, None).unwrap()[0]
            };
            let a = mk(1.0, 0.0);
            let b = mk(scale, shift);
            prop_assert!((a - b).abs() < 1e-8 * a.max(1.0));
        }
    }
}
