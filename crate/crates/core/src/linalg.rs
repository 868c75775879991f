//! Small dense-vector helpers shared by aggregation, attacks and defenses.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Unweighted coordinate mean of equally sized rows.
pub fn mean_rows<R: AsRef<[f64]>>(rows: &[R]) -> Vec<f64> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let mut acc = vec![0.0; first.as_ref().len()];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r.as_ref()) {
            *a += v;
        }
    }
    let n = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Median of the pairwise Euclidean distances between rows. Zero when fewer
/// than two rows are given.
pub fn median_pairwise_distance<R: AsRef<[f64]>>(rows: &[R]) -> f64 {
    let mut d = pairwise_distances(rows);
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    }
}

pub fn mean_pairwise_distance<R: AsRef<[f64]>>(rows: &[R]) -> f64 {
    let d = pairwise_distances(rows);
    if d.is_empty() {
        0.0
    } else {
        d.iter().sum::<f64>() / d.len() as f64
    }
}

fn pairwise_distances<R: AsRef<[f64]>>(rows: &[R]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            out.push(dist(rows[i].as_ref(), rows[j].as_ref()));
        }
    }
    out
}
