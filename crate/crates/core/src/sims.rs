//! Toy SIRS epidemic simulators: a deterministic ODE and its stochastic
//! counterpart via the Gillespie algorithm.
//!
//! Both start from 950 susceptible, 50 infected and 0 recovered
//! individuals and report the three counts at `t = 10`.

use rayon::prelude::*;

use crate::design::latin_hypercube;
use crate::emulator::{Target, Targets};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, indexed_substream};
use crate::space::ParameterSpace;
use crate::table::RunTable;

pub const SIRS_OUTPUTS: [&str; 3] = ["nS", "nI", "nR"];
pub const SIRS_INITIAL: [f64; 3] = [950.0, 50.0, 0.0];
pub const SIRS_T_END: f64 = 10.0;
pub const SIRS_DT: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SirsParams {
    pub a_si: f64,
    pub a_ir: f64,
    pub a_sr: f64,
}

impl SirsParams {
    pub fn new(a_si: f64, a_ir: f64, a_sr: f64) -> Result<Self> {
        if [a_si, a_ir, a_sr].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Argument(format!(
                "SIRS rates must be non-negative, got ({a_si}, {a_ir}, {a_sr})"
            )));
        }
        Ok(SirsParams { a_si, a_ir, a_sr })
    }

    fn from_point(x: &[f64]) -> Result<Self> {
        match x {
            [a, b, c] => SirsParams::new(*a, *b, *c),
            _ => Err(Error::Schema("SIRS points need three coordinates".into())),
        }
    }
}

/// The default exploration box.
pub fn sirs_space() -> ParameterSpace {
    ParameterSpace::new([("aSI", 0.1, 0.8), ("aIR", 0.0, 0.5), ("aSR", 0.0, 0.05)])
        .expect("valid ranges")
}

/// Synthetic observations for the demo.
pub fn sirs_targets() -> Targets {
    let mut t = Targets::new();
    t.insert("nS".into(), Target::Interval { lower: 580.0, upper: 651.0 });
    t.insert("nI".into(), Target::Value { val: 169.0, sigma: 8.45 });
    t.insert("nR".into(), Target::Interval { lower: 199.0, upper: 221.0 });
    t
}

fn sirs_rhs(p: &SirsParams, y: [f64; 3]) -> [f64; 3] {
    let [s, i, r] = y;
    let inf = p.a_si * s * i / (s + i + r);
    let rec = p.a_ir * i;
    let wane = p.a_sr * r;
    [wane - inf, inf - rec, rec - wane]
}

/// Fixed-step fourth-order Runge-Kutta integration to `t_end` with step `dt`.
pub fn sirs_ode(p: &SirsParams, t_end: f64, dt: f64) -> [f64; 3] {
    let steps = (t_end / dt).round() as usize;
    let mut y = SIRS_INITIAL;
    let add = |y: [f64; 3], k: [f64; 3], h: f64| [y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2]];
    for _ in 0..steps {
        let k1 = sirs_rhs(p, y);
        let k2 = sirs_rhs(p, add(y, k1, 0.5 * dt));
        let k3 = sirs_rhs(p, add(y, k2, 0.5 * dt));
        let k4 = sirs_rhs(p, add(y, k3, dt));
        for j in 0..3 {
            y[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    y
}

/// `(nS, nI, nR)` at `t = 10` from the ODE.
pub fn sirs_deterministic(p: &SirsParams) -> [f64; 3] {
    sirs_ode(p, SIRS_T_END, SIRS_DT)
}

/// One exact stochastic trajectory, returning integer counts at `t_end`.
pub fn gillespie_path<R: rand::Rng>(p: &SirsParams, t_end: f64, rng: &mut R) -> [u32; 3] {
    let [mut s, mut i, mut r] = [950u32, 50, 0];
    let n = 1000.0;
    let mut t = 0.0;
    loop {
        let inf = p.a_si * s as f64 * i as f64 / n;
        let rec = p.a_ir * i as f64;
        let wane = p.a_sr * r as f64;
        let total = inf + rec + wane;
        if total <= 0.0 {
            break;
        }
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / total;
        if t > t_end {
            break;
        }
        let pick = rng.random::<f64>() * total;
        if pick < inf {
            s -= 1;
            i += 1;
        } else if pick < inf + rec {
            i -= 1;
            r += 1;
        } else {
            r -= 1;
            s += 1;
        }
    }
    [s, i, r]
}

/// `reps` stochastic replicates at one parameter set, grouped as one
/// replicate group.
pub fn sirs_gillespie(p: &SirsParams, t_end: f64, seed: u64, reps: usize) -> Result<RunTable> {
    if reps == 0 {
        return Err(Error::Argument("at least one replicate is needed".into()));
    }
    let outputs: Vec<Vec<f64>> = (0..reps)
        .map(|k| {
            let mut rng = indexed_substream(seed, "gillespie", k as u64);
            gillespie_path(p, t_end, &mut rng).iter().map(|&v| v as f64).collect()
        })
        .collect();
    let inputs = vec![vec![p.a_si, p.a_ir, p.a_sr]; reps];
    RunTable::from_space_points(&sirs_space(), inputs)?
        .with_outputs(output_names(), outputs)?
        .with_replicate_key(vec![0; reps])
}

fn output_names() -> Vec<String> {
    SIRS_OUTPUTS.iter().map(|s| s.to_string()).collect()
}

/// Something that turns parameter sets into output rows.
///
/// `design` holds the parameter sets to run, with columns in the order of
/// the simulator's space. The result has one row per successful run (a
/// stochastic simulator may return several rows per parameter set, tied
/// together by the replicate key). Failed points are left out.
pub trait Simulator: Sync {
    fn output_names(&self) -> Vec<String>;

    fn simulate(&self, design: &RunTable, seed: u64) -> Result<RunTable>;
}

/// The SIRS ODE as a [`Simulator`].
#[derive(Clone, Copy, Debug, Default)]
pub struct SirsOde;

impl Simulator for SirsOde {
    fn output_names(&self) -> Vec<String> {
        output_names()
    }

    fn simulate(&self, design: &RunTable, _seed: u64) -> Result<RunTable> {
        let pts = design.points_in(&sirs_space())?;
        let outputs = pts
            .par_iter()
            .map(|x| Ok(sirs_deterministic(&SirsParams::from_point(x)?).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        RunTable::from_space_points(&sirs_space(), pts)?.with_outputs(output_names(), outputs)
    }
}

/// Gillespie SIRS with a fixed number of replicates per parameter set.
#[derive(Clone, Copy, Debug)]
pub struct SirsGillespie {
    pub reps: usize,
}

impl Simulator for SirsGillespie {
    fn output_names(&self) -> Vec<String> {
        output_names()
    }

    fn simulate(&self, design: &RunTable, seed: u64) -> Result<RunTable> {
        if self.reps == 0 {
            return Err(Error::Argument("at least one replicate is needed".into()));
        }
        let pts = design.points_in(&sirs_space())?;
        let runs = pts
            .par_iter()
            .enumerate()
            .map(|(j, x)| {
                let p = SirsParams::from_point(x)?;
                let point_seed = derive_seed(seed, &format!("point{j}"));
                Ok((0..self.reps)
                    .map(|k| {
                        let mut rng = indexed_substream(point_seed, "gillespie", k as u64);
                        gillespie_path(&p, SIRS_T_END, &mut rng)
                    })
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        let mut key = Vec::new();
        for (j, reps) in runs.into_iter().enumerate() {
            for r in reps {
                inputs.push(pts[j].clone());
                outputs.push(r.iter().map(|&v| v as f64).collect());
                key.push(j as u64);
            }
        }
        RunTable::from_space_points(&sirs_space(), inputs)?
            .with_outputs(output_names(), outputs)?
            .with_replicate_key(key)
    }
}

/// Training and validation sets from two independent Latin hypercubes,
/// with ODE outputs attached.
pub fn make_wave0(space: &ParameterSpace, n_train: usize, n_valid: usize, seed: u64) -> Result<(RunTable, RunTable)> {
    let train = latin_hypercube(n_train, space, derive_seed(seed, "wave0-train"))?;
    let valid = latin_hypercube(n_valid, space, derive_seed(seed, "wave0-valid"))?;
    Ok((SirsOde.simulate(&train, seed)?, SirsOde.simulate(&valid, seed)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rates_are_stationary() {
        let p = SirsParams::new(0.0, 0.0, 0.0).unwrap();
        assert_eq!(sirs_deterministic(&p), [950.0, 50.0, 0.0]);
        let t = sirs_gillespie(&p, 10.0, 1, 5).unwrap();
        assert!(t.outputs().iter().all(|r| r == &[950.0, 50.0, 0.0]));
    }

    #[test]
    fn pure_recovery_decays_exponentially() {
        for a_ir in [0.05, 0.2, 0.5] {
            let p = SirsParams::new(0.0, a_ir, 0.0).unwrap();
            let y = sirs_deterministic(&p);
            let want = 50.0 * (-10.0 * a_ir).exp();
            assert!((y[1] - want).abs() <= 1e-6 * want);
        }
    }

    #[test]
    fn ode_conserves_population() {
        let s = sirs_space();
        let t = latin_hypercube(50, &s, 4).unwrap();
        for x in t.inputs() {
            let y = sirs_deterministic(&SirsParams::from_point(x).unwrap());
            assert!((y.iter().sum::<f64>() - 1000.0).abs() < 1e-8);
        }
    }

    #[test]
    fn step_halving_converges() {
        let s = sirs_space();
        let corners = [
            [0.8, 0.0, 0.05],
            [0.8, 0.5, 0.0],
            [0.1, 0.0, 0.0],
            [0.45, 0.25, 0.025],
            [0.8, 0.1, 0.05],
        ];
        let t = latin_hypercube(20, &s, 8).unwrap();
        let pts = corners.iter().map(|c| c.to_vec()).chain(t.inputs().iter().cloned());
        for x in pts {
            let p = SirsParams::from_point(&x).unwrap();
            let a = sirs_ode(&p, 10.0, 0.01);
            let b = sirs_ode(&p, 10.0, 0.001);
            for j in 0..3 {
                assert!((a[j] - b[j]).abs() < 1e-6, "{x:?}: {a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn gillespie_conserves_and_is_seeded() {
        let p = SirsParams::new(0.6, 0.2, 0.03).unwrap();
        let a = sirs_gillespie(&p, 10.0, 7, 20).unwrap();
        assert!(a.outputs().iter().all(|r| r.iter().sum::<f64>() == 1000.0));
        assert_eq!(a, sirs_gillespie(&p, 10.0, 7, 20).unwrap());
        assert_ne!(a, sirs_gillespie(&p, 10.0, 8, 20).unwrap());
    }

    #[test]
    fn gillespie_mean_tracks_ode() {
        let p = SirsParams::new(0.4, 0.2, 0.02).unwrap();
        let reps = 500;
        let t = sirs_gillespie(&p, 10.0, 11, reps).unwrap();
        let ode = sirs_deterministic(&p);
        for j in 0..3 {
            let col: Vec<f64> = t.outputs().iter().map(|r| r[j]).collect();
            let m = col.iter().sum::<f64>() / reps as f64;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (reps - 1) as f64;
            let se = (v / reps as f64).sqrt();
            assert!((m - ode[j]).abs() < 3.0 * se + 1e-9, "output {j}: {m} vs {}", ode[j]);
        }
    }

    #[test]
    fn wave0_sizes_and_conservation() {
        let (tr, va) = make_wave0(&sirs_space(), 30, 60, 3).unwrap();
        assert_eq!(tr.len(), 30);
        assert_eq!(va.len(), 60);
        assert!(tr.inputs().iter().all(|x| !va.inputs().contains(x)));
        for r in tr.outputs().iter().chain(va.outputs()) {
            assert!((r.iter().sum::<f64>() - 1000.0).abs() < 1e-8);
        }
    }

    #[test]
    fn batch_gillespie_groups_replicates() {
        let s = sirs_space();
        let d = latin_hypercube(4, &s, 2).unwrap();
        let t = SirsGillespie { reps: 3 }.simulate(&d, 5).unwrap();
        assert_eq!(t.len(), 12);
        assert_eq!(t.replicate_key().unwrap(), &[0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]);
    }
}
