//! Helpers shared by the oracle, proposal and acceptance tests.
#![allow(dead_code)]

use histmatch_core::correlation::{Correlator, KernelKind};
use histmatch_core::design::min_pairwise_distance;
use histmatch_core::emulator::{adjust_points, BasisFunction, EmulatorPrior, JITTER};
use histmatch_core::proposal::{generate_design, lhd_reject, line_sample, ProposalOptions, ScoreMeasure};
use histmatch_core::space::ParameterSpace;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn random_prior(rng: &mut ChaCha8Rng, d: usize) -> EmulatorPrior {
    let params: Vec<(String, f64, f64)> = (0..d)
        .map(|i| {
            let lo = rng.random_range(-5.0..5.0);
            (format!("x{i}"), lo, lo + rng.random_range(0.5..4.0))
        })
        .collect();
    let space = ParameterSpace::new(params.iter().map(|(n, a, b)| (n.as_str(), *a, *b))).unwrap();
    let mut basis = vec![BasisFunction::Constant];
    for i in 0..d {
        if rng.random_bool(0.5) {
            basis.push(BasisFunction::Linear(i));
        }
    }
    if d > 1 && rng.random_bool(0.3) {
        basis.push(BasisFunction::Interaction(0, 1));
    }
    let p = basis.len();
    let zero_var = rng.random_bool(0.3);
    let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    let bv = &a * a.transpose() * if zero_var { 0.0 } else { 1.0 };
    let kind = match rng.random_range(0..3) {
        0 => KernelKind::ExpSq,
        1 => KernelKind::Matern,
        _ => KernelKind::OrnUhl,
    };
    let corr = Correlator::new(kind, rng.random_range(0.3..1.5), rng.random_range(0.0..0.3)).unwrap();
    EmulatorPrior {
        output_name: "y".into(),
        space,
        beta_mean: (0..p).map(|_| rng.random_range(-3.0..3.0)).collect(),
        beta_var: (0..p).map(|i| (0..p).map(|j| bv[(i, j)]).collect()).collect(),
        basis,
        sigma_sq: rng.random_range(0.2..5.0),
        correlator: corr,
        actives: vec![true; d],
        discrepancy: Default::default(),
        flags: vec![],
    }
}

fn random_point(rng: &mut ChaCha8Rng, s: &ParameterSpace) -> Vec<f64> {
    s.parameters().iter().map(|p| rng.random_range(p.lower..p.upper)).collect()
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-8 * b.abs().max(scale)
}

/// Random small adjustments checked against dense inverse formulae.
/// Returns a description of every mismatch.
pub fn adjustment_mismatches(cases: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    for case in 0..cases {
        let d = rng.random_range(1..=3);
        let n = rng.random_range(1..=8);
        let prior = random_prior(&mut rng, d);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| random_point(&mut rng, &prior.space)).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let noise: Option<Vec<f64>> = rng
            .random_bool(0.4)
            .then(|| (0..n).map(|_| rng.random_range(0.0..0.5)).collect());
        let em = adjust_points(prior.clone(), xs.clone(), ys.clone(), noise.clone()).unwrap();

        let var_d = DMatrix::from_fn(n, n, |i, j| {
            let mut v = prior.prior_covariance(&xs[i], &xs[j]).unwrap();
            if i == j {
                v += prior.sigma_sq * JITTER + noise.as_ref().map_or(0.0, |e| e[i]);
            }
            v
        });
        let inv = var_d.clone().try_inverse().unwrap();
        let resid = DVector::from_fn(n, |i, _| ys[i] - prior.prior_expectation(&xs[i]).unwrap());
        let w = &inv * &resid;
        let tests: Vec<Vec<f64>> = (0..4).map(|_| random_point(&mut rng, &prior.space)).collect();
        let (e, v) = em.predict(&tests).unwrap();
        let cov_to = |x: &[f64]| DVector::from_fn(n, |i, _| prior.prior_covariance(x, &xs[i]).unwrap());
        for (k, x) in tests.iter().enumerate() {
            let c = cov_to(x);
            let prior_var = prior.prior_covariance(x, x).unwrap();
            let exp = prior.prior_expectation(x).unwrap() + c.dot(&w);
            let var = prior_var - c.dot(&(&inv * &c));
            let scale = 1.0 + ys.iter().fold(0.0f64, |m, y| m.max(y.abs()));
            if !close(e[k], exp, scale) {
                bad.push(format!("case {case}: E {} vs {exp}", e[k]));
            }
            if !close(v[k], var, prior_var) {
                bad.push(format!("case {case}: V {} vs {var}", v[k]));
            }
        }
        let ab = em.covariance_between(&tests[..2], &tests[2..]).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let (ca, cb) = (cov_to(&tests[a]), cov_to(&tests[2 + b]));
                let want = prior.prior_covariance(&tests[a], &tests[2 + b]).unwrap() - ca.dot(&(&inv * &cb));
                if !close(ab[(a, b)], want, prior.sigma_sq) {
                    bad.push(format!("case {case}: cov ({a}, {b}) {} vs {want}", ab[(a, b)]));
                }
            }
        }
    }
    bad
}

/// Best achievable minimum pairwise distance over all `k`-subsets.
pub fn exhaustive_maximin(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let sel: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        best = best.max(min_pairwise_distance(points, &sel));
    }
    best
}

/// Random point clouds with `n <= 10`, `k <= 4`.
pub fn maximin_instances(count: usize, seed: u64) -> Vec<(Vec<Vec<f64>>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(2..=10);
            let k = rng.random_range(2..=4.min(n));
            let d = rng.random_range(1..=3);
            let pts = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
            (pts, k)
        })
        .collect()
}

const HOLE: (f64, f64, f64) = (-0.9, 0.0, 0.35);
const BOX_X: (f64, f64) = (-2.2, 0.5);
const BOX_Y: (f64, f64) = (-1.5, 1.5);

/// Cardioid `r <= 1 - cos(phi)` with a circular hole near its widest part.
pub fn in_cardioid(x: &[f64]) -> bool {
    let r = x[0].hypot(x[1]);
    let phi = x[1].atan2(x[0]);
    let hole = (x[0] - HOLE.0).hypot(x[1] - HOLE.1) < HOLE.2;
    r <= 1.0 - phi.cos() && !hole
}

pub type Indicator = ScoreMeasure<fn(&[f64]) -> f64>;

pub fn cardioid() -> (ParameterSpace, Indicator) {
    let space = ParameterSpace::new([("x", BOX_X.0, BOX_X.1), ("y", BOX_Y.0, BOX_Y.1)]).unwrap();
    fn score(x: &[f64]) -> f64 {
        if in_cardioid(x) {
            0.0
        } else {
            10.0
        }
    }
    (space, ScoreMeasure(score as fn(&[f64]) -> f64))
}

pub fn outer_distance(x: &[f64]) -> f64 {
    (0..4000)
        .map(|i| {
            let phi = std::f64::consts::TAU * i as f64 / 4000.0;
            let r = 1.0 - phi.cos();
            (x[0] - r * phi.cos()).hypot(x[1] - r * phi.sin())
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn hole_distance(x: &[f64]) -> f64 {
    ((x[0] - HOLE.0).hypot(x[1] - HOLE.1) - HOLE.2).abs()
}

/// What line sampling found for one seed on the cardioid.
pub struct LineOutcome {
    pub points: usize,
    pub outside: usize,
    pub far: usize,
    pub near_outer: bool,
    pub near_hole: bool,
}

pub fn cardioid_lines(seed: u64) -> LineOutcome {
    let (space, m) = cardioid();
    let opts = ProposalOptions::default();
    // longest possible ray step in this box
    let step = (BOX_X.1 - BOX_X.0).hypot(BOX_Y.1 - BOX_Y.0) / (opts.points_per_line - 1) as f64;
    let seeds = lhd_reject(&m, &space, 400, 3.0, seed).unwrap();
    let pts = line_sample(&seeds, &space, &m, 3.0, &opts, seed).unwrap();
    let mut out = LineOutcome {
        points: pts.len(),
        outside: 0,
        far: 0,
        near_outer: false,
        near_hole: false,
    };
    for p in &pts {
        out.outside += usize::from(!in_cardioid(p));
        let (dout, dhole) = (outer_distance(p), hole_distance(p));
        out.far += usize::from(dout > step && dhole > step);
        out.near_outer |= dout <= step;
        out.near_hole |= dhole <= step;
    }
    out
}

// x positions splitting the region into strips of equal area
fn strip_edges(strips: usize) -> Vec<f64> {
    let g = 1500;
    let (w, h) = (BOX_X.1 - BOX_X.0, BOX_Y.1 - BOX_Y.0);
    let col: Vec<usize> = (0..g)
        .map(|i| {
            let x = BOX_X.0 + w * (i as f64 + 0.5) / g as f64;
            (0..g)
                .filter(|&j| in_cardioid(&[x, BOX_Y.0 + h * (j as f64 + 0.5) / g as f64]))
                .count()
        })
        .collect();
    let total: usize = col.iter().sum();
    let mut edges = Vec::new();
    let mut acc = 0;
    for (i, c) in col.iter().enumerate() {
        acc += c;
        if edges.len() < strips - 1 && acc * strips >= total * (edges.len() + 1) {
            edges.push(BOX_X.0 + w * (i as f64 + 1.0) / g as f64);
        }
    }
    edges
}

/// Equal-area chi-square test of `n`-point cardioid designs at the 1%
/// level, one entry per seed. `None` marks a design with a point outside.
pub fn cardioid_uniformity(seeds: std::ops::Range<u64>, n: usize) -> Vec<Option<bool>> {
    let (space, m) = cardioid();
    let strips = 8;
    let edges = strip_edges(strips);
    let critical = ChiSquared::new((strips - 1) as f64).unwrap().inverse_cdf(0.99);
    seeds
        .map(|seed| {
            let p = generate_design(&m, &space, n, &ProposalOptions { seed, ..Default::default() }).unwrap();
            let mut counts = vec![0.0; strips];
            for x in p.design.inputs() {
                if !in_cardioid(x) {
                    return None;
                }
                counts[edges.iter().filter(|&&e| x[0] >= e).count()] += 1.0;
            }
            let e = p.design.len() as f64 / strips as f64;
            let chi2: f64 = counts.iter().map(|c| (c - e) * (c - e) / e).sum();
            Some(chi2 < critical)
        })
        .collect()
}
