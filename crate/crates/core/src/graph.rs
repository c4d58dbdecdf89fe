//! Directed follower graph and synthetic generators.
//!
//! An edge `(v, u)` means `u` follows `v`, i.e. posts by `v` influence `u`.
//! `in_neighbors(u)` is therefore the influencer set of `u`, kept sorted by
//! id so that feature vectors and parameter rows share one layout.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SocialGraph {
    n_users: usize,
    edges: Vec<(usize, usize)>,
    in_neighbors: Vec<Vec<usize>>,
    out_neighbors: Vec<Vec<usize>>,
}

impl SocialGraph {
    /// Builds a graph, rejecting self-loops, duplicates and ids `>= n_users`.
    pub fn new(n_users: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (v, u) in edges {
            if v >= n_users || u >= n_users {
                return Err(Error::Input(format!(
                    "edge ({v},{u}) out of range for {n_users} users"
                )));
            }
            if v == u {
                return Err(Error::Input(format!("self-loop on user {v}")));
            }
            if !set.insert((v, u)) {
                return Err(Error::Input(format!("duplicate edge ({v},{u})")));
            }
        }
        Ok(Self::from_sorted(n_users, set.into_iter().collect()))
    }

    fn from_sorted(n_users: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut in_neighbors = vec![Vec::new(); n_users];
        let mut out_neighbors = vec![Vec::new(); n_users];
        // edges sorted by (v, u) so pushes keep both lists ascending
        for &(v, u) in &edges {
            in_neighbors[u].push(v);
            out_neighbors[v].push(u);
        }
        Self { n_users, edges, in_neighbors, out_neighbors }
    }

    pub fn empty(n_users: usize) -> Self {
        Self::from_sorted(n_users, Vec::new())
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges `(influencer, follower)` in ascending order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn in_neighbors(&self, u: usize) -> &[usize] {
        &self.in_neighbors[u]
    }

    pub fn out_neighbors(&self, v: usize) -> &[usize] {
        &self.out_neighbors[v]
    }

    /// Position of `v` inside `in_neighbors(u)`.
    pub fn in_position(&self, v: usize, u: usize) -> Option<usize> {
        self.in_neighbors[u].binary_search(&v).ok()
    }

    pub fn has_edge(&self, v: usize, u: usize) -> bool {
        self.in_position(v, u).is_some()
    }

    /// Feature dimension of user `u`: influencers plus the bias slot.
    pub fn feature_dim(&self, u: usize) -> usize {
        self.in_neighbors[u].len() + 1
    }

    /// Undirected degree counting each neighbor once.
    pub fn undirected_degree(&self, u: usize) -> usize {
        let mut all: Vec<usize> = self.in_neighbors[u].clone();
        all.extend_from_slice(&self.out_neighbors[u]);
        all.sort_unstable();
        all.dedup();
        all.len()
    }

    /// Weak connectivity via union-find.
    pub fn is_weakly_connected(&self) -> bool {
        if self.n_users == 0 {
            return true;
        }
        let mut parent: Vec<usize> = (0..self.n_users).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(v, u) in &self.edges {
            let (a, b) = (find(&mut parent, v), find(&mut parent, u));
            if a != b {
                parent[a] = b;
            }
        }
        let root = find(&mut parent, 0);
        (0..self.n_users).all(|x| find(&mut parent, x) == root)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut body = format!("# n_users={}\nsrc,dst\n", self.n_users);
        for &(v, u) in &self.edges {
            body.push_str(&format!("{v},{u}\n"));
        }
        f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads a `src,dst` edge list. An optional first line `# n_users=<k>`
    /// declares users that have no edges.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines().enumerate();
        let mut declared: Option<usize> = None;
        let mut saw_header = false;
        let mut edges = Vec::new();
        let mut seen = BTreeSet::new();
        for (idx, line) in &mut lines {
            let lineno = idx as u64 + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if !saw_header {
                    if let Some(k) = rest.trim().strip_prefix("n_users=") {
                        let k = k.trim().parse::<usize>().map_err(|_| {
                            Error::format(path, lineno, format!("bad n_users value {k:?}"))
                        })?;
                        declared = Some(k);
                    }
                }
                continue;
            }
            if !saw_header {
                let cols: Vec<&str> = line.split(',').map(str::trim).collect();
                if cols != ["src", "dst"] {
                    return Err(Error::format(path, lineno, "expected header `src,dst`"));
                }
                saw_header = true;
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let (Some(a), Some(b), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::format(path, lineno, "expected two columns"));
            };
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::format(path, lineno, format!("invalid user id {s:?}")))
            };
            let (v, u) = (parse(a)?, parse(b)?);
            if let Some(k) = declared {
                if v >= k || u >= k {
                    return Err(Error::format(
                        path,
                        lineno,
                        format!("user id out of range for n_users={k}"),
                    ));
                }
            }
            if v == u {
                return Err(Error::format(path, lineno, "self-loop"));
            }
            if !seen.insert((v, u)) {
                return Err(Error::format(path, lineno, "duplicate edge"));
            }
            edges.push((v, u));
        }
        if !saw_header {
            return Err(Error::format(path, 1, "missing header `src,dst`"));
        }
        let max_id = edges.iter().map(|&(v, u)| v.max(u) + 1).max().unwrap_or(0);
        let n = declared.unwrap_or(0).max(max_id);
        Self::new(n, edges)
    }
}

fn check_prob(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!("probability {p} outside [0,1]")));
    }
    Ok(())
}

/// Edge probability of the ordered pair `(i, j)` under the `power`-fold
/// Kronecker product of `seed`, read off the base-2 digits of the indices.
pub fn kronecker_probability(seed: &[[f64; 2]; 2], power: u32, i: usize, j: usize) -> f64 {
    (0..power).fold(1.0, |p, k| p * seed[(i >> k) & 1][(j >> k) & 1])
}

/// Stochastic Kronecker graph on `2^power` nodes.
pub fn generate_kronecker(seed: [[f64; 2]; 2], power: u32, rng_seed: u64) -> Result<SocialGraph> {
    for row in &seed {
        for &p in row {
            check_prob(p)?;
        }
    }
    if power == 0 || power > 24 {
        return Err(Error::Parameter(format!("kronecker power {power} outside 1..=24")));
    }
    let n = 1usize << power;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let p = kronecker_probability(&seed, power, i, j);
            if p >= 1.0 || (p > 0.0 && rng.random::<f64>() < p) {
                edges.push((i, j));
            }
        }
    }
    Ok(SocialGraph::from_sorted(n, edges))
}

/// Barabási–Albert preferential attachment. Starts from a clique on
/// `m_attach` nodes; each later node links to `m_attach` distinct existing
/// nodes chosen proportionally to degree. Each undirected link becomes two
/// directed edges.
pub fn generate_barabasi_albert(n_users: usize, m_attach: usize, rng_seed: u64) -> Result<SocialGraph> {
    if m_attach == 0 || m_attach >= n_users {
        return Err(Error::Parameter(format!(
            "need 1 <= m_attach < n_users, got m_attach={m_attach}, n_users={n_users}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut links: Vec<(usize, usize)> = Vec::new();
    // every link endpoint appears once here, so uniform draws are degree-weighted
    let mut endpoints: Vec<usize> = Vec::new();
    for a in 0..m_attach {
        for b in (a + 1)..m_attach {
            links.push((a, b));
            endpoints.extend([a, b]);
        }
    }
    let mut targets: Vec<usize> = Vec::with_capacity(m_attach);
    for new in m_attach..n_users {
        targets.clear();
        while targets.len() < m_attach {
            let t = if endpoints.is_empty() {
                rng.random_range(0..new)
            } else {
                endpoints[rng.random_range(0..endpoints.len())]
            };
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for &t in &targets {
            links.push((t, new));
            endpoints.extend([t, new]);
        }
    }
    let mut edges: Vec<(usize, usize)> = links.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
    edges.sort_unstable();
    Ok(SocialGraph::from_sorted(n_users, edges))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronecker_zero_and_one() {
        let g = generate_kronecker([[0.0, 0.0], [0.0, 0.0]], 3, 1).unwrap();
        assert_eq!((g.n_users(), g.n_edges()), (8, 0));
        let g = generate_kronecker([[1.0, 1.0], [1.0, 1.0]], 2, 1).unwrap();
        assert_eq!((g.n_users(), g.n_edges()), (4, 12));
    }

    #[test]
    fn kronecker_core_periphery_size() {
        let g = generate_kronecker([[0.9, 0.5], [0.5, 0.3]], 9, 7).unwrap();
        assert_eq!(g.n_users(), 512);
        assert!(g.n_edges() > 0);
    }

    #[test]
    fn kronecker_rejects_bad_probability() {
        assert!(matches!(
            generate_kronecker([[1.5, 0.0], [0.0, 0.0]], 2, 0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn ba_smallest_instance() {
        let g = generate_barabasi_albert(2, 1, 3).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 0)]);
    }

    #[test]
    fn ba_edge_count_and_determinism() {
        let g = generate_barabasi_albert(512, 2, 11).unwrap();
        assert_eq!(g.n_edges(), 2 * (510 * 2 + 1));
        let a = generate_barabasi_albert(100, 3, 5).unwrap();
        let b = generate_barabasi_albert(100, 3, 5).unwrap();
        assert_eq!(a, b);
        assert!(matches!(generate_barabasi_albert(3, 3, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn ba_connected_with_min_degree() {
        for seed in 0..5 {
            let g = generate_barabasi_albert(200, 3, seed).unwrap();
            assert!(g.is_weakly_connected());
            assert!((0..200).all(|u| g.undirected_degree(u) >= 3));
        }
    }

    #[test]
    fn ba_degree_is_heavy_tailed() {
        let g = generate_barabasi_albert(512, 2, 42).unwrap();
        let max = (0..512).map(|u| g.undirected_degree(u)).max().unwrap();
        // a Poisson-like graph with mean degree 4 would essentially never reach this
        assert!(max >= 20, "max degree {max}");
    }

    #[test]
    fn neighbors_are_sorted_and_consistent() {
        let g = SocialGraph::new(4, [(3, 0), (1, 0), (2, 1), (0, 2)]).unwrap();
        assert_eq!(g.in_neighbors(0), &[1, 3]);
        assert_eq!(g.in_position(3, 0), Some(1));
        assert_eq!(g.feature_dim(3), 1);
        assert!(SocialGraph::new(2, [(0, 0)]).is_err());
        assert!(SocialGraph::new(2, [(0, 1), (0, 1)]).is_err());
    }
}
