//! Space-filling designs: Latin hypercubes, maximin thinning and the
//! minimum enclosing hyperrectangle of a point set.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::space::{Parameter, ParameterSpace};
use crate::table::RunTable;

/// Jittered Latin hypercube of `n` points over `space`.
///
/// Every one-dimensional projection has exactly one point in each of the
/// `n` equal-width strata.
pub fn latin_hypercube(n: usize, space: &ParameterSpace, seed: u64) -> Result<RunTable> {
    if n == 0 {
        return Err(Error::Argument("a Latin hypercube needs at least one point".into()));
    }
    let mut rng = substream(seed, "latin_hypercube");
    let d = space.dim();
    let mut rows = vec![vec![0.0; d]; n];
    for (j, p) in space.parameters().iter().enumerate() {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        for (row, &s) in rows.iter_mut().zip(&strata) {
            let v = (s as f64 + rng.random::<f64>()) / n as f64;
            row[j] = (p.lower + v * (p.upper - p.lower)).min(p.upper);
        }
    }
    RunTable::from_space_points(space, rows)
}

/// Squared Euclidean distance.
pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Instances with at most this many candidate subsets are solved exactly.
const EXACT_SUBSET_LIMIT: u128 = 50_000;

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > EXACT_SUBSET_LIMIT * 1000 {
            return acc;
        }
    }
    acc
}

/// Smallest pairwise distance among the selected rows.
pub fn min_pairwise_distance(points: &[Vec<f64>], selected: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for (a, &i) in selected.iter().enumerate() {
        for &j in &selected[a + 1..] {
            best = best.min(dist2(&points[i], &points[j]));
        }
    }
    best.sqrt()
}

/// Choose `k` of `points` (already in commensurate coordinates) so that the
/// smallest pairwise distance is large. Returns ascending row indices.
///
/// Small instances are enumerated exactly. Larger ones are built greedily:
/// start from the most distant pair and keep adding the point farthest from
/// everything already chosen, breaking ties by lowest row index.
pub fn maximin_select(points: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if k > n {
        return Err(Error::Argument(format!("cannot keep {k} of {n} points")));
    }
    if k == n {
        return Ok((0..n).collect());
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if k == 1 {
        return Ok(vec![0]);
    }
    if binomial(n, k) <= EXACT_SUBSET_LIMIT {
        return Ok(exact_maximin(points, k));
    }
    Ok(greedy_maximin(points, k))
}

fn exact_maximin(points: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = points.len();
    let d2: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| dist2(&points[i], &points[j])).collect())
        .collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut current = Vec::with_capacity(k);

    // depth-first over index-ascending subsets, pruning branches that can no
    // longer beat the incumbent
    fn recurse(
        start: usize,
        current_min: f64,
        k: usize,
        d2: &[Vec<f64>],
        current: &mut Vec<usize>,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        if current.len() == k {
            if best.as_ref().is_none_or(|(b, _)| current_min > *b) {
                *best = Some((current_min, current.clone()));
            }
            return;
        }
        let n = d2.len();
        let remaining = k - current.len();
        for i in start..=(n - remaining) {
            let m = current.iter().fold(current_min, |m, &j| m.min(d2[i][j]));
            if let Some((b, _)) = best {
                if m <= *b {
                    continue;
                }
            }
            current.push(i);
            recurse(i + 1, m, k, d2, current, best);
            current.pop();
        }
    }
    recurse(0, f64::INFINITY, k, &d2, &mut current, &mut best);
    best.map(|(_, s)| s).unwrap_or_default()
}

fn greedy_maximin(points: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = points.len();
    let (mut a, mut b, mut far) = (0, 1, -1.0);
    for i in 0..n {
        for j in i + 1..n {
            let d = dist2(&points[i], &points[j]);
            if d > far {
                far = d;
                a = i;
                b = j;
            }
        }
    }
    let mut chosen = vec![false; n];
    chosen[a] = true;
    chosen[b] = true;
    let mut to_set: Vec<f64> = (0..n)
        .map(|i| dist2(&points[i], &points[a]).min(dist2(&points[i], &points[b])))
        .collect();
    let mut selected = vec![a, b];
    while selected.len() < k {
        let mut next = usize::MAX;
        let mut next_d = -1.0;
        for i in 0..n {
            if !chosen[i] && to_set[i] > next_d {
                next_d = to_set[i];
                next = i;
            }
        }
        chosen[next] = true;
        selected.push(next);
        for i in 0..n {
            if !chosen[i] {
                to_set[i] = to_set[i].min(dist2(&points[i], &points[next]));
            }
        }
    }
    selected.sort_unstable();
    selected
}

/// Keep `k` rows of `points` by the maximin criterion, measuring distance in
/// coordinates scaled to the points' own enclosing box.
pub fn maximin_thin(points: &RunTable, k: usize, _seed: u64) -> Result<RunTable> {
    if k > points.len() {
        return Err(Error::Argument(format!(
            "cannot keep {k} rows of a {}-row table",
            points.len()
        )));
    }
    let scaled = scale_to_own_box(points.inputs());
    let rows = maximin_select(&scaled, k)?;
    Ok(points.select_rows(&rows))
}

fn scale_to_own_box(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if rows.is_empty() {
        return Vec::new();
    }
    let d = rows[0].len();
    let (lo, hi): (Vec<f64>, Vec<f64>) = (0..d)
        .map(|j| {
            rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), r| {
                (l.min(r[j]), h.max(r[j]))
            })
        })
        .unzip();
    rows.iter()
        .map(|r| {
            (0..d)
                .map(|j| {
                    let w = hi[j] - lo[j];
                    if w > 0.0 {
                        2.0 * (r[j] - lo[j]) / w - 1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Minimum enclosing hyperrectangle of the input rows.
pub fn enclosing_hyperrectangle(points: &RunTable) -> Result<ParameterSpace> {
    if points.len() < 2 {
        return Err(Error::Argument(
            "an enclosing hyperrectangle needs at least two points".into(),
        ));
    }
    let params = points
        .input_names()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let (lower, upper) = points
                .inputs()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), r| {
                    (l.min(r[j]), h.max(r[j]))
                });
            if upper <= lower {
                return Err(Error::DegenerateRange(name.clone()));
            }
            Ok(Parameter {
                name: name.clone(),
                lower,
                upper,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ParameterSpace::from_parameters(params)
}
