use std::collections::VecDeque;

use super::{dist2, ClusterLabels, PointCloud};
use crate::error::{Error, Result};

fn check(eps: f64, min_pts: usize) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) || min_pts == 0 {
        return Err(Error::BadParams(format!("dbscan needs eps > 0 and min_pts >= 1, got {eps}, {min_pts}")));
    }
    Ok(())
}

/// Points with at least `min_pts` neighbors within `eps`, counting
/// themselves.
pub fn dbscan_core_points(cloud: &PointCloud, eps: f64, min_pts: usize) -> Result<Vec<bool>> {
    check(eps, min_pts)?;
    let e2 = eps * eps;
    let p = &cloud.points;
    Ok(p.iter()
        .map(|&a| p.iter().filter(|&&b| dist2(a, b) <= e2).count() >= min_pts)
        .collect())
}

/// Density-based clustering. Clusters grow from core points in input order;
/// a border point joins the first cluster that reaches it.
pub fn dbscan(cloud: &PointCloud, eps: f64, min_pts: usize) -> Result<ClusterLabels> {
    let core = dbscan_core_points(cloud, eps, min_pts)?;
    let e2 = eps * eps;
    let p = &cloud.points;
    let mut labels = vec![-1i64; p.len()];
    let mut k = 0i64;
    let mut queue = VecDeque::new();
    for seed in 0..p.len() {
        if !core[seed] || labels[seed] >= 0 {
            continue;
        }
        labels[seed] = k;
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            for j in 0..p.len() {
                if labels[j] < 0 && dist2(p[i], p[j]) <= e2 {
                    labels[j] = k;
                    if core[j] {
                        queue.push_back(j);
                    }
                }
            }
        }
        k += 1;
    }
    Ok(ClusterLabels::from_raw(&labels))
}
