//! Bipartite matching and the bottleneck assignment built on it.

const FREE: usize = usize::MAX;

/// Maximum matching in a bipartite graph given as left-vertex adjacency lists.
///
/// Returns `match_left[i]`, the right vertex matched to `i` or `usize::MAX`.
/// Hopcroft-Karp: breadth-first layering, then disjoint augmenting paths.
pub fn max_bipartite_matching(n_right: usize, adj: &[Vec<usize>]) -> Vec<usize> {
    let n_left = adj.len();
    let mut match_left = vec![FREE; n_left];
    let mut match_right = vec![FREE; n_right];
    let mut dist = vec![0usize; n_left];
    let mut queue = Vec::with_capacity(n_left);

    loop {
        // Layer the free left vertices.
        queue.clear();
        for i in 0..n_left {
            if match_left[i] == FREE {
                dist[i] = 0;
                queue.push(i);
            } else {
                dist[i] = usize::MAX;
            }
        }
        let mut found = false;
        let mut head = 0;
        while head < queue.len() {
            let i = queue[head];
            head += 1;
            for &j in &adj[i] {
                let k = match_right[j];
                if k == FREE {
                    found = true;
                } else if dist[k] == usize::MAX {
                    dist[k] = dist[i] + 1;
                    queue.push(k);
                }
            }
        }
        if !found {
            break;
        }
        let mut it = vec![0usize; n_left];
        for i in 0..n_left {
            if match_left[i] == FREE {
                augment(i, adj, &mut match_left, &mut match_right, &mut dist, &mut it);
            }
        }
    }
    match_left
}

fn augment(
    root: usize,
    adj: &[Vec<usize>],
    match_left: &mut [usize],
    match_right: &mut [usize],
    dist: &mut [usize],
    it: &mut [usize],
) -> bool {
    // Iterative DFS along the layered graph.
    let mut stack = vec![root];
    while let Some(&i) = stack.last() {
        if it[i] == adj[i].len() {
            dist[i] = usize::MAX;
            stack.pop();
            continue;
        }
        let j = adj[i][it[i]];
        let k = match_right[j];
        if k == FREE {
            // Flip the path recorded on the stack.
            for &a in stack.iter().rev() {
                let b = adj[a][it[a]];
                match_left[a] = b;
                match_right[b] = a;
            }
            return true;
        }
        if dist[k] != usize::MAX && dist[k] == dist[i] + 1 {
            stack.push(k);
        } else {
            it[i] += 1;
        }
    }
    false
}

fn has_perfect_matching(n: usize, dist: &[f64], threshold: f64) -> Option<Vec<usize>> {
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist[i * n + j] <= threshold).collect())
        .collect();
    let m = max_bipartite_matching(n, &adj);
    m.iter().all(|&j| j != FREE).then_some(m)
}

/// Permutation minimising the largest matched entry of a row-major `n x n` matrix.
pub fn bottleneck_assignment(n: usize, dist: &[f64]) -> Vec<usize> {
    assert_eq!(dist.len(), n * n, "distance matrix must be n x n");
    if n == 0 {
        return Vec::new();
    }
    let mut levels = dist.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();

    // Every row must keep at least one edge, so the answer is at least the
    // largest row minimum (and likewise for columns).
    let mut lower = 0.0f64;
    for i in 0..n {
        let row = (0..n).map(|j| dist[i * n + j]).fold(f64::INFINITY, f64::min);
        let col = (0..n).map(|j| dist[j * n + i]).fold(f64::INFINITY, f64::min);
        lower = lower.max(row).max(col);
    }
    let mut lo = levels.partition_point(|&c| c < lower);
    let mut hi = levels.len() - 1;
    let mut best = has_perfect_matching(n, dist, levels[hi]).expect("complete graph has a perfect matching");
    while lo < hi {
        let mid = (lo + hi) / 2;
        match has_perfect_matching(n, dist, levels[mid]) {
            Some(m) => {
                best = m;
                hi = mid;
            }
            None => lo = mid + 1,
        }
    }
    best
}
