use super::{dist2, ClusterLabels, PointCloud};
use crate::error::{Error, Result};

/// Distance to the `k`-th nearest point, the point itself counting as the
/// first.
fn core_distances(p: &[[f64; 2]], k: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(p.len());
    p.iter()
        .map(|&a| {
            row.clear();
            row.extend(p.iter().map(|&b| dist2(a, b)));
            let idx = (k - 1).min(row.len() - 1);
            let (_, kth, _) = row.select_nth_unstable_by(idx, f64::total_cmp);
            kth.sqrt()
        })
        .collect()
}

/// Minimum spanning tree of the mutual-reachability graph (dense Prim),
/// as `(a, b, weight)` edges.
fn mst(p: &[[f64; 2]], core: &[f64]) -> Vec<(usize, usize, f64)> {
    let n = p.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut cur = 0;
    in_tree[0] = true;
    for _ in 1..n {
        for j in 0..n {
            if !in_tree[j] {
                let d = dist2(p[cur], p[j]).sqrt().max(core[cur]).max(core[j]);
                if d < best[j] {
                    best[j] = d;
                    from[j] = cur;
                }
            }
        }
        let next = (0..n)
            .filter(|&j| !in_tree[j])
            .min_by(|&a, &b| best[a].total_cmp(&best[b]).then(a.cmp(&b)))
            .expect("a vertex remains");
        in_tree[next] = true;
        edges.push((from[next], next, best[next]));
        cur = next;
    }
    edges
}

struct Dendrogram {
    /// Internal node `n + i` joins `children[i]` at `heights[i]`.
    children: Vec<(usize, usize)>,
    heights: Vec<f64>,
    sizes: Vec<usize>,
}

fn single_linkage(n: usize, mut edges: Vec<(usize, usize, f64)>) -> Dendrogram {
    edges.sort_by(|a, b| a.2.total_cmp(&b.2));
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut sizes = vec![1; n];
    let mut children = Vec::with_capacity(n - 1);
    let mut heights = Vec::with_capacity(n - 1);
    for (a, b, w) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        let node = n + children.len();
        parent[ra] = node;
        parent[rb] = node;
        children.push((ra, rb));
        heights.push(w);
        sizes.push(sizes[ra] + sizes[rb]);
    }
    Dendrogram {
        children,
        heights,
        sizes,
    }
}

struct Condensed {
    parent: Vec<Option<usize>>,
    birth: Vec<f64>,
    stability: Vec<f64>,
    /// Cluster each point finally fell out of.
    point_cluster: Vec<usize>,
}

fn condense(n: usize, d: &Dendrogram, min_size: usize) -> Condensed {
    let mut c = Condensed {
        parent: vec![None],
        birth: vec![0.0],
        stability: vec![0.0],
        point_cluster: vec![0; n],
    };
    let lambda = |h: f64| if h > 0.0 { 1.0 / h } else { f64::MAX };
    // Every leaf under `node` leaves `cluster` at `lam`.
    let drop_all = |c: &mut Condensed, node: usize, cluster: usize, lam: f64| {
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < n {
                c.point_cluster[x] = cluster;
                c.stability[cluster] += lam - c.birth[cluster];
            } else {
                let (a, b) = d.children[x - n];
                stack.push(a);
                stack.push(b);
            }
        }
    };
    let root = 2 * n - 2;
    let mut stack = vec![(root, 0usize)];
    while let Some((node, cluster)) = stack.pop() {
        if node < n {
            // A lone point can only get here as the whole tree.
            c.point_cluster[node] = cluster;
            continue;
        }
        let (a, b) = d.children[node - n];
        let lam = lambda(d.heights[node - n]);
        let (sa, sb) = (d.sizes[a], d.sizes[b]);
        match (sa >= min_size, sb >= min_size) {
            (true, true) => {
                c.stability[cluster] += (lam - c.birth[cluster]) * (sa + sb) as f64;
                for child in [a, b] {
                    let id = c.parent.len();
                    c.parent.push(Some(cluster));
                    c.birth.push(lam);
                    c.stability.push(0.0);
                    stack.push((child, id));
                }
            }
            (false, false) => {
                drop_all(&mut c, a, cluster, lam);
                drop_all(&mut c, b, cluster, lam);
            }
            (true, false) => {
                drop_all(&mut c, b, cluster, lam);
                stack.push((a, cluster));
            }
            (false, true) => {
                drop_all(&mut c, a, cluster, lam);
                stack.push((b, cluster));
            }
        }
    }
    c
}

/// Hierarchical density clustering with excess-of-mass selection.
///
/// Core distances use `k = min_cluster_size` neighbors (self included).
/// The root may be selected, so a single dense blob comes back as one
/// cluster; each point takes the label of the selected cluster whose
/// subtree it fell out of, or `-1`.
pub fn hdbscan(cloud: &PointCloud, min_cluster_size: usize) -> Result<ClusterLabels> {
    if min_cluster_size < 2 {
        return Err(Error::BadParams(format!(
            "min_cluster_size must be at least 2, got {min_cluster_size}"
        )));
    }
    let p = &cloud.points;
    let n = p.len();
    if n < min_cluster_size {
        return Ok(ClusterLabels::from_raw(&vec![-1; n]));
    }
    let core = core_distances(p, min_cluster_size);
    let tree = single_linkage(n, mst(p, &core));
    let c = condense(n, &tree, min_cluster_size);

    // Clusters are created after their parents, so a reverse sweep is
    // bottom-up.
    let m = c.parent.len();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (id, par) in c.parent.iter().enumerate() {
        if let Some(par) = par {
            children[*par].push(id);
        }
    }
    let mut best = c.stability.clone();
    let mut selected = vec![false; m];
    for id in (0..m).rev() {
        let below: f64 = children[id].iter().map(|&ch| best[ch]).sum();
        if children[id].is_empty() || c.stability[id] >= below {
            selected[id] = true;
        } else {
            best[id] = below;
        }
    }
    // Keep only the topmost selected cluster on each root-to-leaf path.
    let mut label_of = vec![-1i64; m];
    let mut stack = vec![0usize];
    while let Some(id) = stack.pop() {
        if selected[id] {
            label_of[id] = id as i64;
        } else {
            stack.extend(&children[id]);
        }
    }
    let resolve = |mut id: usize| loop {
        if label_of[id] >= 0 {
            return label_of[id];
        }
        match c.parent[id] {
            Some(par) => id = par,
            None => return -1,
        }
    };
    let raw: Vec<i64> = c.point_cluster.iter().map(|&id| resolve(id)).collect();
    Ok(ClusterLabels::from_raw(&raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use rand_distr::{Distribution, Normal};

    fn blob(center: [f64; 2], sd: f64, n: usize, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = stream(seed, Domain::Sampling, 0);
        let g = Normal::new(0.0, sd).unwrap();
        (0..n)
            .map(|_| [center[0] + g.sample(&mut rng), center[1] + g.sample(&mut rng)])
            .collect()
    }

    #[test]
    fn single_blob_is_one_cluster() {
        let c = PointCloud::new(blob([0.0, 0.0], 1.0, 40, 1)).unwrap();
        let l = hdbscan(&c, 5).unwrap();
        let sizes = l.sizes();
        assert_eq!(l.k, 1);
        assert!(sizes[0] >= 36, "{sizes:?}");
    }

    #[test]
    fn blobs_of_different_density() {
        let mut pts = blob([0.0, 0.0], 0.3, 60, 2);
        pts.extend(blob([30.0, 0.0], 3.0, 60, 3));
        let l = hdbscan(&PointCloud::new(pts).unwrap(), 10).unwrap();
        assert_eq!(l.k, 2);
        let first = l.labels[..60].iter().filter(|&&x| x == l.labels[0]).count();
        let second = l.labels[60..].iter().filter(|&&x| x >= 0 && x != l.labels[0]).count();
        assert!(first >= 54 && second >= 54, "{:?}", l.sizes());
    }

    #[test]
    fn tiny_inputs_are_noise() {
        let one = PointCloud::new(vec![[1.0, 2.0]]).unwrap();
        let l = hdbscan(&one, 2).unwrap();
        assert_eq!(l.labels, vec![-1]);
        assert_eq!(l.k, 0);
        assert!(hdbscan(&PointCloud::default(), 5).unwrap().labels.is_empty());
        assert!(hdbscan(&one, 1).is_err());
    }

    #[test]
    fn core_distance_counts_self() {
        let p = [[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]];
        assert_eq!(core_distances(&p, 1), vec![0.0, 0.0, 0.0]);
        assert_eq!(core_distances(&p, 2), vec![1.0, 1.0, 2.0]);
    }
}
