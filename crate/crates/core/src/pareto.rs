//! Dominance, non-dominated sorting, z-score normalization and box-volume ranking.

use serde::{Deserialize, Serialize};

use crate::domain::ObjectiveVector;
use crate::error::{check_len, Error, Result};

/// `a` dominates `b`: no worse everywhere, strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> Result<bool> {
    check_len(a.len(), b.len())?;
    Ok(dominates_unchecked(a, b))
}

pub(crate) fn dominates_unchecked(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

/// Result of recursive non-dominated peeling.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontAssignment {
    /// 1-based front index per input row.
    pub front_of: Vec<usize>,
    /// Input indices per front, ascending within each front.
    pub fronts: Vec<Vec<usize>>,
}

impl FrontAssignment {
    pub fn first(&self) -> &[usize] {
        self.fronts.first().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.front_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.front_of.is_empty()
    }
}

fn check_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<usize> {
    let m = rows.first().map_or(0, |r| r.as_ref().len());
    for r in rows {
        check_len(m, r.as_ref().len())?;
    }
    Ok(m)
}

/// Fast non-dominated sort (domination counts), O(n² M).
pub fn non_dominated_sort<R: AsRef<[f64]>>(rows: &[R]) -> Result<FrontAssignment> {
    check_rows(rows)?;
    let n = rows.len();
    let mut dominated_by_count = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (rows[i].as_ref(), rows[j].as_ref());
            if dominates_unchecked(a, b) {
                dominates_list[i].push(j);
                dominated_by_count[j] += 1;
            } else if dominates_unchecked(b, a) {
                dominates_list[j].push(i);
                dominated_by_count[i] += 1;
            }
        }
    }
    let mut front_of = vec![0usize; n];
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by_count[i] == 0).collect();
    while !current.is_empty() {
        let rank = fronts.len() + 1;
        let mut next = Vec::new();
        for &p in &current {
            front_of[p] = rank;
            for &q in &dominates_list[p] {
                dominated_by_count[q] -= 1;
                if dominated_by_count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    Ok(FrontAssignment { front_of, fronts })
}

/// Indices of rows not dominated by any other row, ascending.
pub fn non_dominated_indices<R: AsRef<[f64]>>(rows: &[R]) -> Result<Vec<usize>> {
    Ok(non_dominated_sort(rows)?.fronts.into_iter().next().unwrap_or_default())
}

/// Column-wise z-scores with population standard deviation.
///
/// Constant columns map to zero. Non-finite entries are excluded from the
/// moments and stay `+∞` in the output.
pub fn zscore_normalize<R: AsRef<[f64]>>(rows: &[R]) -> Result<Vec<Vec<f64>>> {
    if rows.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: rows.len(),
        });
    }
    let m = check_rows(rows)?;
    let mut out: Vec<Vec<f64>> = rows.iter().map(|r| r.as_ref().to_vec()).collect();
    for j in 0..m {
        let finite: Vec<f64> = rows
            .iter()
            .map(|r| r.as_ref()[j])
            .filter(|v| v.is_finite())
            .collect();
        let (mean, sd) = if finite.is_empty() {
            (0.0, 0.0)
        } else {
            let n = finite.len() as f64;
            let mean = finite.iter().sum::<f64>() / n;
            let var = finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        for row in out.iter_mut() {
            let v = row[j];
            row[j] = if !v.is_finite() {
                f64::INFINITY
            } else if sd > 0.0 {
                (v - mean) / sd
            } else {
                0.0
            };
        }
    }
    Ok(out)
}

/// Box volume and secondary rank of one solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxRank {
    pub volume: f64,
    /// 1-based rank, descending volume.
    pub beta: usize,
}

/// Ranks rows by the volume of the box they span with the reference point
/// `max + 1` (per column, over finite entries).
pub fn box_volume_rank<R: AsRef<[f64]>>(rows: &[R]) -> Result<Vec<BoxRank>> {
    box_volume_rank_weighted(rows, None)
}

/// Box-volume ranking where axis `j` contributes `gap_j^{w_j}`.
pub fn box_volume_rank_weighted<R: AsRef<[f64]>>(rows: &[R], weights: Option<&[f64]>) -> Result<Vec<BoxRank>> {
    let m = check_rows(rows)?;
    if let Some(w) = weights {
        check_len(m, w.len())?;
    }
    let mut reference = vec![f64::NEG_INFINITY; m];
    for r in rows {
        for (z, &v) in reference.iter_mut().zip(r.as_ref()) {
            if v.is_finite() && v > *z {
                *z = v;
            }
        }
    }
    for z in reference.iter_mut() {
        *z = if z.is_finite() { *z + 1.0 } else { 1.0 };
    }
    let volumes: Vec<f64> = rows
        .iter()
        .map(|r| {
            let mut vol = 1.0;
            for (j, (&v, &z)) in r.as_ref().iter().zip(&reference).enumerate() {
                let gap = (z - v).max(0.0);
                vol *= match weights {
                    Some(w) => gap.powf(w[j]),
                    None => gap,
                };
            }
            vol
        })
        .collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| volumes[b].total_cmp(&volumes[a]).then(a.cmp(&b)));
    let mut out = vec![BoxRank { volume: 0.0, beta: 0 }; rows.len()];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = BoxRank {
            volume: volumes[i],
            beta: pos + 1,
        };
    }
    Ok(out)
}

/// Gates for reporting a recommendation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Required cosine similarity, exclusive.
    pub cos_min: f64,
    /// Cost and environmental ratio ceiling, exclusive.
    pub ratio_max: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            cos_min: 0.5,
            ratio_max: 1.0,
        }
    }
}

impl FilterConfig {
    pub fn accepts(&self, z: &ObjectiveVector) -> bool {
        let cosine = 1.0 - z.0[0];
        cosine > self.cos_min && z.0[1] < self.ratio_max && z.0[5..].iter().all(|&r| r < self.ratio_max)
    }
}

/// Keeps items whose objectives pass `filter`, preserving order.
pub fn acceptability_filter<T: Clone>(
    solutions: &[T],
    objectives: impl Fn(&T) -> &ObjectiveVector,
    filter: &FilterConfig,
) -> Vec<T> {
    solutions
        .iter()
        .filter(|s| filter.accepts(objectives(s)))
        .cloned()
        .collect()
}

/// Per-method share of solutions in the first front of the pooled set.
pub fn pooled_dominance_ratio<R: AsRef<[f64]>>(per_method: &[Vec<R>]) -> Result<Vec<f64>> {
    if per_method.is_empty() {
        return Err(Error::Empty("no methods to pool"));
    }
    let mut pooled: Vec<&[f64]> = Vec::new();
    let mut owner = Vec::new();
    for (k, sols) in per_method.iter().enumerate() {
        if sols.is_empty() {
            return Err(Error::Empty("method without solutions"));
        }
        for s in sols {
            pooled.push(s.as_ref());
            owner.push(k);
        }
    }
    let fronts = non_dominated_sort(&pooled)?;
    let mut hits = vec![0usize; per_method.len()];
    for &i in fronts.first() {
        hits[owner[i]] += 1;
    }
    Ok(hits
        .iter()
        .zip(per_method)
        .map(|(&h, sols)| h as f64 / sols.len() as f64)
        .collect())
}
