//! Space-filling proposals from the non-implausible region.
//!
//! The pipeline seeds from a rejected Latin hypercube, finds the region's
//! boundaries by sampling along rays, fills it by importance sampling from
//! a mixture of uniform ellipsoids, optionally repeats the last two steps
//! from a thinned design, and finishes with maximin selection.

use std::collections::HashSet;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{latin_hypercube, maximin_select};
use crate::emulator::Targets;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, indexed_substream, substream, Rng};
use crate::set::{wave_implausibility, EmulatorSet};
use crate::space::ParameterSpace;
use crate::table::RunTable;

/// Decides which points are acceptable at a cutoff.
///
/// Implementations must be deterministic, and raising the cutoff must never
/// reject a point that was accepted before.
pub trait AcceptanceMeasure: Sync {
    fn accept(&self, points: &[Vec<f64>], cutoff: f64) -> Result<Vec<bool>>;
}

/// Maximum over waves of the nth-largest implausibility across outputs.
pub struct ImplausibilityMeasure<'a> {
    pub waves: &'a [EmulatorSet],
    pub targets: &'a Targets,
    pub nth: usize,
}

impl AcceptanceMeasure for ImplausibilityMeasure<'_> {
    fn accept(&self, points: &[Vec<f64>], cutoff: f64) -> Result<Vec<bool>> {
        Ok(wave_implausibility(self.waves, points, self.targets, self.nth)?
            .into_iter()
            .map(|i| i <= cutoff)
            .collect())
    }
}

/// A score function; points with score at most the cutoff are accepted.
pub struct ScoreMeasure<F>(pub F);

impl<F> AcceptanceMeasure for ScoreMeasure<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn accept(&self, points: &[Vec<f64>], cutoff: f64) -> Result<Vec<bool>> {
        Ok(points.iter().map(|x| (self.0)(x) <= cutoff).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalOptions {
    pub cutoff: f64,
    pub nth: usize,
    /// Initial LHD size as a multiple of the requested number of points.
    pub lhd_multiplier: usize,
    pub lhd_cap: usize,
    pub n_lines: usize,
    pub points_per_line: usize,
    /// Candidates drawn per burn-in round when tuning ellipsoid radii.
    pub burn_in: usize,
    pub resample: usize,
    pub seed: u64,
    /// Descending cutoffs to relax through when the region is hard to
    /// find; defaults to the cutoff times 2, 1.5, 1.25 and 1.
    pub ladder: Option<Vec<f64>>,
}

impl Default for ProposalOptions {
    fn default() -> Self {
        ProposalOptions {
            cutoff: 3.0,
            nth: 1,
            lhd_multiplier: 10,
            lhd_cap: 20_000,
            n_lines: 20,
            points_per_line: 20,
            burn_in: 100,
            resample: 1,
            seed: 0,
            ladder: None,
        }
    }
}

impl ProposalOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(Error::Argument("cutoff must be positive".into()));
        }
        let sizes = [
            ("nth", self.nth),
            ("lhd_multiplier", self.lhd_multiplier),
            ("lhd_cap", self.lhd_cap),
            ("n_lines", self.n_lines),
            ("burn_in", self.burn_in),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Argument(format!("{name} must be at least 1")));
            }
        }
        if self.points_per_line < 2 {
            return Err(Error::Argument("points_per_line must be at least 2".into()));
        }
        if let Some(l) = &self.ladder {
            if l.iter().any(|c| !(*c > 0.0 && c.is_finite())) || l.windows(2).any(|w| w[1] > w[0]) {
                return Err(Error::Argument("the cutoff ladder must be positive and descending".into()));
            }
        }
        Ok(())
    }

    /// Rungs from loosest to the requested cutoff.
    pub fn rungs(&self) -> Vec<f64> {
        let mut r = match &self.ladder {
            Some(l) => l.iter().copied().filter(|&c| c > self.cutoff).collect(),
            None => [2.0, 1.5, 1.25].iter().map(|m| m * self.cutoff).collect::<Vec<_>>(),
        };
        r.push(self.cutoff);
        r
    }
}

/// Counts from one proposal run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProposalLog {
    pub lhd_accepted: usize,
    pub line_points: usize,
    pub importance_points: usize,
    pub resample_passes: usize,
    pub rungs_used: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub design: RunTable,
    pub cutoff: f64,
    pub log: ProposalLog,
}

fn accepted_subset(measure: &dyn AcceptanceMeasure, points: &[Vec<f64>], cutoff: f64) -> Result<Vec<Vec<f64>>> {
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let ok = measure.accept(points, cutoff)?;
    Ok(points.iter().zip(ok).filter(|(_, a)| *a).map(|(p, _)| p.clone()).collect())
}

/// Keep the points of a size-`size` LHD over `space` that are acceptable.
pub fn lhd_reject(
    measure: &dyn AcceptanceMeasure,
    space: &ParameterSpace,
    size: usize,
    cutoff: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let lhd = latin_hypercube(size, space, seed)?;
    accepted_subset(measure, lhd.inputs(), cutoff)
}

// Parameter range of the ray a + t (b - a) inside the scaled cube.
fn ray_limits(a: &[f64], v: &[f64]) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (ai, vi) in a.iter().zip(v) {
        if vi.abs() < 1e-300 {
            continue;
        }
        let (t1, t2) = ((-1.0 - ai) / vi, (1.0 - ai) / vi);
        lo = lo.max(t1.min(t2));
        hi = hi.min(t1.max(t2));
    }
    (lo.is_finite() && hi.is_finite() && hi > lo).then_some((lo, hi))
}

/// Boundary points of the acceptable region found along rays through pairs
/// of accepted points, pairs drawn with probability proportional to their
/// separation.
///
/// Retained are acceptable ray points next to an unacceptable one, and
/// acceptable points where the ray meets the box.
pub fn line_sample(
    accepted: &[Vec<f64>],
    space: &ParameterSpace,
    measure: &dyn AcceptanceMeasure,
    cutoff: f64,
    opts: &ProposalOptions,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if accepted.len() < 2 {
        warn!("line sampling needs at least two points; skipping");
        return Ok(Vec::new());
    }
    let mut rng = substream(seed, "line_sample");
    let scaled: Vec<Vec<f64>> = accepted.iter().map(|x| space.scale_unchecked(x)).collect();
    let pool: Vec<usize> = if scaled.len() > 400 {
        let mut s = sample(&mut rng, scaled.len(), 400).into_vec();
        s.sort_unstable();
        s
    } else {
        (0..scaled.len()).collect()
    };
    let mut pairs = Vec::new();
    let mut weights = Vec::new();
    for (i, &a) in pool.iter().enumerate() {
        for &b in &pool[i + 1..] {
            let d = crate::design::dist2(&scaled[a], &scaled[b]).sqrt();
            if d > 0.0 {
                pairs.push((a, b));
                weights.push(d);
            }
        }
    }
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let pick = WeightedIndex::new(&weights).expect("positive weights");
    let m = opts.points_per_line;
    let mut rays: Vec<Vec<Vec<f64>>> = Vec::with_capacity(opts.n_lines);
    for _ in 0..opts.n_lines {
        let (a, b) = pairs[pick.sample(&mut rng)];
        let v: Vec<f64> = scaled[b].iter().zip(&scaled[a]).map(|(x, y)| x - y).collect();
        let Some((lo, hi)) = ray_limits(&scaled[a], &v) else { continue };
        let ray = (0..m)
            .map(|j| {
                let t = lo + (hi - lo) * j as f64 / (m - 1) as f64;
                let u: Vec<f64> = scaled[a].iter().zip(&v).map(|(ai, vi)| (ai + t * vi).clamp(-1.0, 1.0)).collect();
                let mut x = space.unscale_unchecked(&u);
                space.clamp(&mut x);
                x
            })
            .collect();
        rays.push(ray);
    }
    let flat: Vec<Vec<f64>> = rays.iter().flatten().cloned().collect();
    let ok = measure.accept(&flat, cutoff)?;
    let mut out = Vec::new();
    for (r, ray) in rays.iter().enumerate() {
        let acc = &ok[r * m..(r + 1) * m];
        for j in 0..m {
            let edge = j == 0 || j == m - 1 || !acc[j - 1] || !acc[j + 1];
            if acc[j] && edge {
                out.push(ray[j].clone());
            }
        }
    }
    Ok(out)
}

/// Points drawn from a mixture of ellipsoids together with their
/// importance weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightedPoints {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl WeightedPoints {
    /// Keep each point with probability equal to its weight, which leaves a
    /// sample uniform over the union of the ellipsoids.
    pub fn thin(&self, rng: &mut Rng) -> Vec<Vec<f64>> {
        self.points
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| rng.random::<f64>() < w)
            .map(|(p, _)| p.clone())
            .collect()
    }
}

/// Uniform ellipsoids sharing one shape, in scaled coordinates.
struct Ellipsoids {
    centres: Vec<Vec<f64>>,
    radii: Vec<f64>,
    factor: DMatrix<f64>,
    precision: DMatrix<f64>,
    scale: f64,
}

impl Ellipsoids {
    fn new(seeds: &[Vec<f64>], d: usize) -> Ellipsoids {
        let n = seeds.len();
        let mean: Vec<f64> = (0..d).map(|j| seeds.iter().map(|s| s[j]).sum::<f64>() / n as f64).collect();
        let mut cov = DMatrix::zeros(d, d);
        if n > d {
            for s in seeds {
                let c = DVector::from_iterator(d, s.iter().zip(&mean).map(|(a, b)| a - b));
                cov += &c * c.transpose();
            }
            cov /= (n - 1) as f64;
        }
        let eig = cov.clone().symmetric_eigen();
        let (lmin, lmax) = eig
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), &l| (a.min(l), b.max(l)));
        if n <= d || lmin <= 1e-10 * lmax.max(1e-300) {
            warn!("seed points span a degenerate covariance; using axis-aligned ellipsoids");
            cov = DMatrix::zeros(d, d);
            for j in 0..d {
                let (lo, hi) = seeds.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s[j]), b.max(s[j])));
                let half = ((hi - lo) / 2.0).max(0.1);
                cov[(j, j)] = half * half;
            }
        }
        let chol = cov.clone().cholesky().expect("positive definite shape");
        let lmax = cov.clone().symmetric_eigen().eigenvalues.max();
        let radii = seeds
            .iter()
            .map(|c| {
                let to_face = c.iter().map(|v| (1.0 - v).min(v + 1.0)).fold(f64::INFINITY, f64::min);
                to_face.max(0.1) / lmax.sqrt()
            })
            .collect();
        Ellipsoids {
            centres: seeds.to_vec(),
            radii,
            precision: chol.inverse(),
            factor: chol.l(),
            scale: 1.0,
        }
    }

    fn containing(&self, u: &[f64]) -> usize {
        let d = u.len();
        let mut diff = vec![0.0; d];
        self.centres
            .iter()
            .zip(&self.radii)
            .filter(|(c, r)| {
                for j in 0..d {
                    diff[j] = u[j] - c[j];
                }
                let mut q = 0.0;
                for i in 0..d {
                    let row: f64 = (0..d).map(|j| self.precision[(i, j)] * diff[j]).sum();
                    q += diff[i] * row;
                }
                q <= (self.scale * **r).powi(2) * (1.0 + 1e-12)
            })
            .count()
    }

    // One candidate in scaled coordinates, or None if it left the cube.
    fn draw(&self, pick: &WeightedIndex<f64>, rng: &mut Rng) -> Option<Vec<f64>> {
        let d = self.factor.nrows();
        let k = pick.sample(rng);
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r: f64 = rng.random::<f64>().powf(1.0 / d as f64) * self.scale * self.radii[k] / norm;
        let u: Vec<f64> = (0..d)
            .map(|i| self.centres[k][i] + r * (0..=i).map(|j| self.factor[(i, j)] * z[j]).sum::<f64>())
            .collect();
        u.iter().all(|v| (-1.0..=1.0).contains(v)).then_some(u)
    }

    fn picker(&self) -> WeightedIndex<f64> {
        let d = self.factor.nrows() as i32;
        WeightedIndex::new(self.radii.iter().map(|r| r.powi(d))).expect("positive radii")
    }
}

/// Importance sample the acceptable region with uniform ellipsoids centred
/// on `seeds` until the summed weight reaches `n_wanted`.
///
/// Ellipsoids are chosen in proportion to volume and each accepted point is
/// weighted by one over the number of ellipsoids containing it.
pub fn ellipsoid_importance_sample(
    seeds: &[Vec<f64>],
    space: &ParameterSpace,
    measure: &dyn AcceptanceMeasure,
    cutoff: f64,
    n_wanted: usize,
    opts: &ProposalOptions,
    seed: u64,
) -> Result<WeightedPoints> {
    if seeds.is_empty() || n_wanted == 0 {
        return Ok(WeightedPoints::default());
    }
    let d = space.dim();
    let mut rng = substream(seed, "ellipsoid");
    let mut scaled: Vec<Vec<f64>> = seeds.iter().map(|x| space.scale_unchecked(x)).collect();
    if scaled.len() > 500 {
        let mut keep = sample(&mut rng, scaled.len(), 500).into_vec();
        keep.sort_unstable();
        scaled = keep.into_iter().map(|i| scaled[i].clone()).collect();
    }
    let mut ells = Ellipsoids::new(&scaled, d);
    let pick = ells.picker();

    let batch = |ells: &Ellipsoids, rng: &mut Rng, count: usize| -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
        let cands: Vec<Vec<f64>> = (0..count)
            .filter_map(|_| ells.draw(&pick, rng))
            .map(|u| {
                let mut x = space.unscale_unchecked(&u);
                space.clamp(&mut x);
                x
            })
            .collect();
        let ok = if cands.is_empty() { Vec::new() } else { measure.accept(&cands, cutoff)? };
        Ok((cands, ok))
    };

    for _ in 0..20 {
        let (_, ok) = batch(&ells, &mut rng, opts.burn_in)?;
        let rate = ok.iter().filter(|&&a| a).count() as f64 / opts.burn_in as f64;
        if rate < 0.1 {
            ells.scale *= 0.8;
        } else if rate > 0.8 {
            ells.scale *= 1.25;
        } else {
            break;
        }
    }

    let mut out = WeightedPoints::default();
    let mut total = 0.0;
    let mut drawn = 0usize;
    let max_draws = 200 * n_wanted + 10_000;
    while total < n_wanted as f64 && drawn < max_draws {
        let (cands, ok) = batch(&ells, &mut rng, 1000)?;
        drawn += 1000;
        let kept: Vec<Vec<f64>> = cands.into_iter().zip(ok).filter(|(_, a)| *a).map(|(x, _)| x).collect();
        let weights: Vec<f64> = kept
            .par_iter()
            .map(|x| 1.0 / ells.containing(&space.scale_unchecked(x)).max(1) as f64)
            .collect();
        total += weights.iter().sum::<f64>();
        out.points.extend(kept);
        out.weights.extend(weights);
    }
    Ok(out)
}

fn dedup(points: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut seen = HashSet::new();
    points
        .into_iter()
        .filter(|p| seen.insert(p.iter().map(|v| v.to_bits()).collect::<Vec<u64>>()))
        .collect()
}

fn maximin_points(points: &[Vec<f64>], k: usize, space: &ParameterSpace) -> Result<Vec<Vec<f64>>> {
    if k >= points.len() {
        return Ok(points.to_vec());
    }
    let scaled: Vec<Vec<f64>> = points.iter().map(|x| space.scale_unchecked(x)).collect();
    Ok(maximin_select(&scaled, k)?.into_iter().map(|i| points[i].clone()).collect())
}

/// Maximin-thin to half the requested size, then rerun line and importance
/// sampling from the thinned points, `passes` times.
#[allow(clippy::too_many_arguments)]
pub fn resample_pass(
    pool: Vec<Vec<f64>>,
    n_points: usize,
    space: &ParameterSpace,
    measure: &dyn AcceptanceMeasure,
    cutoff: f64,
    opts: &ProposalOptions,
    passes: usize,
    log: &mut ProposalLog,
) -> Result<Vec<Vec<f64>>> {
    let mut pool = pool;
    for pass in 0..passes {
        info!("Resample {}", pass + 1);
        let half = (n_points / 2).max(space.dim() + 1);
        let thinned = maximin_points(&pool, half, space)?;
        let seed = derive_seed(opts.seed, &format!("resample{pass}-{cutoff}"));
        let line = line_sample(&thinned, space, measure, cutoff, opts, seed)?;
        let mut seeds = thinned.clone();
        seeds.extend(line.iter().cloned());
        let is = ellipsoid_importance_sample(&seeds, space, measure, cutoff, 2 * n_points, opts, seed)?;
        let mut rng = indexed_substream(seed, "thin", pass as u64);
        let kept = is.thin(&mut rng);
        log.line_points += line.len();
        log.importance_points += kept.len();
        log.resample_passes += 1;
        pool = dedup(thinned.into_iter().chain(line).chain(kept).collect());
    }
    Ok(pool)
}

// Line and importance sampling at one cutoff, then the resample passes.
#[allow(clippy::too_many_arguments)]
fn run_stage(
    anchors: &[Vec<f64>],
    accepted: Vec<Vec<f64>>,
    n_points: usize,
    space: &ParameterSpace,
    measure: &dyn AcceptanceMeasure,
    cutoff: f64,
    opts: &ProposalOptions,
    log: &mut ProposalLog,
) -> Result<Vec<Vec<f64>>> {
    let seed = derive_seed(opts.seed, &format!("stage-{cutoff}"));
    info!("Performing line sampling...");
    let line = line_sample(&accepted, space, measure, cutoff, opts, seed)?;
    info!("Line sampling generated {} more points.", line.len());
    info!("Performing importance sampling...");
    let mut seeds = anchors.to_vec();
    seeds.extend(line.iter().cloned());
    let is = ellipsoid_importance_sample(&seeds, space, measure, cutoff, 2 * n_points, opts, seed)?;
    let kept = is.thin(&mut substream(seed, "thin"));
    info!("Importance sampling generated {} more points.", kept.len());
    log.line_points += line.len();
    log.importance_points += kept.len();
    let pool = dedup(accepted.into_iter().chain(line).chain(kept).collect());
    if pool.is_empty() {
        return Ok(pool);
    }
    resample_pass(pool, n_points, space, measure, cutoff, opts, opts.resample, log)
}

/// The cutoff ladder actually needed: the requested cutoff alone when the
/// initial design already has enough acceptable points, otherwise the rungs
/// from the loosest one with any acceptable point down to the cutoff.
pub fn cutoff_ladder(lhd: &[Vec<f64>], measure: &dyn AcceptanceMeasure, d: usize, opts: &ProposalOptions) -> Result<Vec<f64>> {
    let rungs = opts.rungs();
    let at_cut = accepted_subset(measure, lhd, opts.cutoff)?.len();
    if at_cut > d {
        return Ok(vec![opts.cutoff]);
    }
    // rungs are nested, so nothing at the loosest means nothing anywhere
    if accepted_subset(measure, lhd, rungs[0])?.is_empty() {
        return Ok(Vec::new());
    }
    Ok(rungs)
}

/// Propose `n_points` acceptable points inside `space`.
pub fn generate_design(
    measure: &dyn AcceptanceMeasure,
    space: &ParameterSpace,
    n_points: usize,
    opts: &ProposalOptions,
) -> Result<Proposal> {
    opts.validate()?;
    if n_points == 0 {
        return Err(Error::Argument("asked for zero points".into()));
    }
    let d = space.dim();
    let size = (opts.lhd_multiplier * n_points).min(opts.lhd_cap).max(d + 1);
    info!("Proposing from LHS...");
    let lhd = latin_hypercube(size, space, derive_seed(opts.seed, "proposal-lhd"))?;
    let lhd = lhd.inputs().to_vec();
    let rungs = cutoff_ladder(&lhd, measure, d, opts)?;
    let loosest = *opts.rungs().first().expect("non-empty ladder");
    let empty = || Error::EmptySpace {
        cutoff: opts.cutoff,
        loosest,
    };
    if rungs.is_empty() {
        return Err(empty());
    }
    let mut log = ProposalLog {
        rungs_used: rungs.clone(),
        ..ProposalLog::default()
    };
    if rungs.len() > 1 {
        info!("Relaxing the cutoff to {} to locate the region", rungs[0]);
    }
    let mut pool: Vec<Vec<f64>> = Vec::new();
    for (i, &c) in rungs.iter().enumerate() {
        let (anchors, accepted) = if i == 0 {
            let a = accepted_subset(measure, &lhd, c)?;
            log.lhd_accepted = a.len();
            info!("{} initial valid points generated for I={c}", a.len());
            (a.clone(), a)
        } else {
            let a = accepted_subset(measure, &pool, c)?;
            (pool.clone(), a)
        };
        pool = run_stage(&anchors, accepted, n_points, space, measure, c, opts, &mut log)?;
        pool = accepted_subset(measure, &pool, c)?;
        if pool.is_empty() {
            return Err(empty());
        }
    }
    info!("Selecting final points using maximin criterion...");
    if pool.len() < n_points {
        warn!(
            "only {} distinct acceptable points found; returning fewer than the {n_points} requested",
            pool.len()
        );
    }
    let chosen = maximin_points(&pool, n_points, space)?;
    let check = measure.accept(&chosen, opts.cutoff)?;
    assert!(check.iter().all(|&a| a), "proposed point fails the acceptance measure");
    assert!(chosen.iter().all(|x| space.contains(x)), "proposed point outside the box");
    Ok(Proposal {
        design: RunTable::from_space_points(space, chosen)?,
        cutoff: opts.cutoff,
        log,
    })
}

/// Propose from emulators: the box is the emulators' parameter space and the
/// measure is the wave implausibility at `opts.nth`.
pub fn generate_new_design(
    waves: &[EmulatorSet],
    n_points: usize,
    targets: &Targets,
    opts: &ProposalOptions,
) -> Result<Proposal> {
    let last = waves
        .last()
        .ok_or_else(|| Error::Argument("no emulators to propose from".into()))?;
    for o in last.output_names() {
        if !targets.contains_key(&o) {
            return Err(Error::Schema(format!("no target given for output `{o}`")));
        }
    }
    let measure = ImplausibilityMeasure {
        waves,
        targets,
        nth: opts.nth,
    };
    generate_design(&measure, last.space(), n_points, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> ParameterSpace {
        ParameterSpace::new([("x", 0.0, 1.0), ("y", 0.0, 1.0)]).unwrap()
    }

    fn line() -> ParameterSpace {
        ParameterSpace::new([("x", 0.0, 1.0)]).unwrap()
    }

    #[test]
    fn lhd_reject_extremes() {
        let all = ScoreMeasure(|_: &[f64]| 0.0);
        let none = ScoreMeasure(|_: &[f64]| 10.0);
        assert_eq!(lhd_reject(&all, &square(), 50, 3.0, 1).unwrap().len(), 50);
        assert!(lhd_reject(&none, &square(), 50, 3.0, 1).unwrap().is_empty());
    }

    #[test]
    fn line_sample_whole_box_keeps_ray_ends() {
        let all = ScoreMeasure(|_: &[f64]| 0.0);
        let pts = vec![vec![0.2, 0.3], vec![0.7, 0.6], vec![0.4, 0.9]];
        let opts = ProposalOptions::default();
        let out = line_sample(&pts, &square(), &all, 3.0, &opts, 5).unwrap();
        assert_eq!(out.len(), 2 * opts.n_lines);
        for p in &out {
            let on_face = p.iter().any(|&v| v.abs() < 1e-12 || (v - 1.0).abs() < 1e-12);
            assert!(on_face, "{p:?}");
        }
    }

    #[test]
    fn line_sample_finds_interval_ends() {
        let inside = ScoreMeasure(|x: &[f64]| if (0.2..=0.6).contains(&x[0]) { 0.0 } else { 9.0 });
        let pts = vec![vec![0.3], vec![0.5]];
        let opts = ProposalOptions::default();
        let step = 1.0 / (opts.points_per_line - 1) as f64;
        let out = line_sample(&pts, &line(), &inside, 3.0, &opts, 2).unwrap();
        assert!(!out.is_empty());
        for p in &out {
            let near = (p[0] - 0.2).abs() <= step || (p[0] - 0.6).abs() <= step;
            assert!(near && (0.2..=0.6).contains(&p[0]), "{p:?}");
        }
        assert!(out.iter().any(|p| p[0] < 0.4) && out.iter().any(|p| p[0] > 0.4));
    }

    #[test]
    fn line_sample_needs_two_points() {
        let all = ScoreMeasure(|_: &[f64]| 0.0);
        let out = line_sample(&[vec![0.5, 0.5]], &square(), &all, 3.0, &ProposalOptions::default(), 0).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn single_ellipsoid_has_unit_weights() {
        let all = ScoreMeasure(|_: &[f64]| 0.0);
        let w = ellipsoid_importance_sample(&[vec![0.5, 0.5]], &square(), &all, 3.0, 200, &ProposalOptions::default(), 3).unwrap();
        assert!(w.points.len() >= 200);
        assert!(w.weights.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn overlapping_ellipsoids_halve_weights() {
        let s = square();
        let seeds: Vec<Vec<f64>> = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let scaled: Vec<Vec<f64>> = seeds.iter().map(|x| s.scale_unchecked(x)).collect();
        let ells = Ellipsoids::new(&scaled, 2);
        assert_eq!(ells.containing(&[0.0, 0.0]), 2);
        let all = ScoreMeasure(|_: &[f64]| 0.0);
        let w = ellipsoid_importance_sample(&seeds, &s, &all, 3.0, 100, &ProposalOptions::default(), 4).unwrap();
        assert!(w.weights.iter().all(|&x| x == 0.5));
    }

    #[test]
    fn ladder_is_noop_when_region_is_large() {
        let half = ScoreMeasure(|x: &[f64]| if x[0] < 0.5 { 0.0 } else { 9.0 });
        let lhd = latin_hypercube(100, &square(), 1).unwrap();
        let r = cutoff_ladder(lhd.inputs(), &half, 2, &ProposalOptions::default()).unwrap();
        assert_eq!(r, vec![3.0]);
    }

    #[test]
    fn empty_region_is_reported() {
        let none = ScoreMeasure(|_: &[f64]| 100.0);
        let err = generate_design(&none, &square(), 10, &ProposalOptions::default()).unwrap_err();
        assert!(matches!(err, Error::EmptySpace { cutoff, loosest } if cutoff == 3.0 && loosest == 6.0));
    }

    #[test]
    fn proposals_are_acceptable_and_seeded() {
        let disc = ScoreMeasure(|x: &[f64]| 3.0 * ((x[0] - 0.4).powi(2) + (x[1] - 0.6).powi(2)).sqrt() / 0.25);
        let opts = ProposalOptions { seed: 9, ..ProposalOptions::default() };
        let a = generate_design(&disc, &square(), 40, &opts).unwrap();
        assert_eq!(a.design.len(), 40);
        for x in a.design.inputs() {
            assert!((x[0] - 0.4).powi(2) + (x[1] - 0.6).powi(2) <= 0.0625 + 1e-12);
        }
        let b = generate_design(&disc, &square(), 40, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.log.resample_passes, 1);
    }

    #[test]
    fn resample_zero_skips_passes() {
        let all = ScoreMeasure(|_: &[f64]| 0.0);
        let opts = ProposalOptions { resample: 0, ..ProposalOptions::default() };
        let p = generate_design(&all, &square(), 20, &opts).unwrap();
        assert_eq!(p.log.resample_passes, 0);
        assert_eq!(p.design.len(), 20);
    }

    #[test]
    fn rungs_default_and_custom() {
        let o = ProposalOptions::default();
        assert_eq!(o.rungs(), vec![6.0, 4.5, 3.75, 3.0]);
        let c = ProposalOptions { ladder: Some(vec![10.0, 5.0]), ..o };
        assert_eq!(c.rungs(), vec![10.0, 5.0, 3.0]);
        let bad = ProposalOptions { ladder: Some(vec![1.0, 5.0]), ..ProposalOptions::default() };
        assert!(bad.validate().is_err());
    }
}
