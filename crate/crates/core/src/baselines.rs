//! Distance-based reference defenses.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::nn::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefenseVerdict {
    pub include: Vec<bool>,
    /// Clients labelled malicious.
    pub flagged: Vec<bool>,
    /// Larger is more suspicious.
    pub scores: Vec<f64>,
    pub method: &'static str,
}

/// Krum score of every row: summed squared distance to its `n − f − 2`
/// nearest neighbours.
pub fn krum_scores<R: AsRef<[f64]>>(rows: &[R], f: usize) -> Result<Vec<f64>> {
    let n = rows.len();
    if n < 2 * f + 3 {
        return Err(Error::Configuration(format!(
            "Krum needs n ≥ 2f + 3, got n = {n}, f = {f}"
        )));
    }
    let neighbours = n - f - 2;
    let mut d2 = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = linalg::sq_dist(rows[i].as_ref(), rows[j].as_ref());
            d2[i][j] = d;
            d2[j][i] = d;
        }
    }
    Ok((0..n)
        .map(|i| {
            let mut others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d2[i][j]).collect();
            others.sort_by(f64::total_cmp);
            others[..neighbours].iter().sum()
        })
        .collect())
}

/// Indices sorted by ascending score, ties to the lowest index.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx
}

fn worst_f(order: &[usize], f: usize) -> Vec<bool> {
    let n = order.len();
    let mut flagged = vec![false; n];
    for &i in &order[n - f.min(n)..] {
        flagged[i] = true;
    }
    flagged
}

/// Keep the `m` uploads with the lowest Krum scores.
pub fn multi_krum<R: AsRef<[f64]>>(rows: &[R], f: usize, m: usize) -> Result<DefenseVerdict> {
    if m == 0 || m > rows.len() {
        return Err(Error::Configuration(format!(
            "Multi-Krum selection count {m} outside 1..={}",
            rows.len()
        )));
    }
    let scores = krum_scores(rows, f)?;
    let order = ranking(&scores);
    let mut include = vec![false; rows.len()];
    for &i in &order[..m] {
        include[i] = true;
    }
    Ok(DefenseVerdict {
        flagged: include.iter().map(|b| !b).collect(),
        include,
        scores,
        method: "multi_krum",
    })
}

/// Krum over flattened heat maps: only the single best-scoring client is
/// aggregated; the `f` worst-scoring maps are reported as malicious.
pub fn layercam_krum<R: AsRef<[f64]>>(rows: &[R], f: usize) -> Result<DefenseVerdict> {
    let scores = krum_scores(rows, f)?;
    let order = ranking(&scores);
    let mut include = vec![false; rows.len()];
    include[order[0]] = true;
    Ok(DefenseVerdict {
        include,
        flagged: worst_f(&order, f),
        scores,
        method: "layercam_krum",
    })
}

/// Coordinate-wise mean after dropping the `k` largest and `k` smallest
/// values of every coordinate.
pub fn trimmed_mean(uploads: &[ModelParams], k: usize) -> Result<ModelParams> {
    let n = uploads.len();
    if n == 0 || 2 * k >= n {
        return Err(Error::Configuration(format!(
            "trimmed mean needs 2k < n, got k = {k}, n = {n}"
        )));
    }
    for u in uploads {
        uploads[0].check_layout(u)?;
    }
    let dim = uploads[0].len();
    let kept = (n - 2 * k) as f64;
    let mut column = vec![0.0; n];
    let values = (0..dim)
        .map(|j| {
            for (c, u) in column.iter_mut().zip(uploads) {
                *c = u.values()[j];
            }
            column.sort_by(f64::total_cmp);
            column[k..n - k].iter().sum::<f64>() / kept
        })
        .collect();
    uploads[0].with_values(values)
}

/// Result of Lloyd's algorithm with two clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoMeans {
    pub assignment: Vec<usize>,
    pub centroids: [Vec<f64>; 2],
    /// Within-cluster sum of squares after every assignment step.
    pub objective: Vec<f64>,
}

impl TwoMeans {
    pub fn sizes(&self) -> [usize; 2] {
        let ones = self.assignment.iter().filter(|&&a| a == 1).count();
        [self.assignment.len() - ones, ones]
    }
}

/// 2-means seeded with the farthest pair of rows.
pub fn two_means<R: AsRef<[f64]>>(rows: &[R], max_iter: usize) -> Result<TwoMeans> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Configuration(
            "2-means needs at least two points".into(),
        ));
    }
    let (mut a, mut b, mut best) = (0, 1, -1.0);
    for i in 0..n {
        for j in i + 1..n {
            let d = linalg::sq_dist(rows[i].as_ref(), rows[j].as_ref());
            if d > best {
                (a, b, best) = (i, j, d);
            }
        }
    }
    let mut centroids = [rows[a].as_ref().to_vec(), rows[b].as_ref().to_vec()];
    let mut assignment = vec![usize::MAX; n];
    let mut objective = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        let mut sse = 0.0;
        for (i, r) in rows.iter().enumerate() {
            let d0 = linalg::sq_dist(r.as_ref(), &centroids[0]);
            let d1 = linalg::sq_dist(r.as_ref(), &centroids[1]);
            let c = usize::from(d1 < d0);
            sse += d0.min(d1);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        objective.push(sse);
        if !changed {
            break;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&[f64]> = rows
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == c)
                .map(|(r, _)| r.as_ref())
                .collect();
            if !members.is_empty() {
                *centroid = linalg::mean_rows(&members);
            }
        }
    }
    Ok(TwoMeans {
        assignment,
        centroids,
        objective,
    })
}

pub const AUROR_MAX_ITER: usize = 100;

/// AUROR-style filter: split uploads into two clusters and drop the smaller
/// one when the centroids are more than `distance_threshold` apart.
pub fn auror_kmeans<R: AsRef<[f64]>>(
    rows: &[R],
    distance_threshold: f64,
) -> Result<DefenseVerdict> {
    let km = two_means(rows, AUROR_MAX_ITER)?;
    let [s0, s1] = km.sizes();
    // The minority cluster; on equal sizes, the one not holding client 0.
    let minority = if s1 < s0 || (s1 == s0 && km.assignment[0] == 0) {
        1
    } else {
        0
    };
    let majority = 1 - minority;
    let separation = linalg::dist(&km.centroids[0], &km.centroids[1]);
    let exclude = separation > distance_threshold;
    let flagged: Vec<bool> = km
        .assignment
        .iter()
        .map(|&a| exclude && a == minority)
        .collect();
    let scores = rows
        .iter()
        .map(|r| linalg::dist(r.as_ref(), &km.centroids[majority]))
        .collect();
    Ok(DefenseVerdict {
        include: flagged.iter().map(|f| !f).collect(),
        flagged,
        scores,
        method: "auror",
    })
}
