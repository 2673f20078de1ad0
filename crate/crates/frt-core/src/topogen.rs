//! Random-growth generation of spatially embedded transmission topologies.
//!
//! Follows the minimum-spanning-tree-plus-growth model commonly used for
//! synthetic transmission grids: an initial core is spanned by an MST with a
//! few redundancy lines, then nodes are attached one by one, occasionally
//! splitting an existing line or adding redundancy edges that trade off
//! network distance against spatial distance.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{Bus, BusKind, Grid, Line, LineParams, PerUnitBase};

/// Parameters of the growth model.
///
/// `p` is the probability of a second line for a new node, `q` the probability
/// of an extra redundancy line between existing nodes per step, `r` the
/// exponent trading redundancy against line cost, and `s` the probability of
/// growing by splitting an existing line. Defaults are the customary values of
/// the model; they are configuration, not ground truth.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GrowthConfig {
    pub n_buses: usize,
    pub n0: usize,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub s: f64,
    pub rng_seed: u64,
    pub mean_line_length_km: f64,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        Self {
            n_buses: 25,
            n0: 1,
            p: 0.2,
            q: 0.3,
            r: 1.0 / 3.0,
            s: 0.1,
            rng_seed: 0,
            mean_line_length_km: 50.0,
        }
    }
}

impl GrowthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_buses < self.n0 || self.n0 < 1 {
            return Err(crate::Error::InvalidGrid(
                "growth config requires n_buses >= n0 >= 1".into(),
            ));
        }
        for (name, v) in [("p", self.p), ("q", self.q), ("s", self.s)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(crate::Error::InvalidGrid(format!(
                    "growth probability {name} = {v} outside [0,1]"
                )));
            }
        }
        Ok(())
    }
}

/// A grid skeleton: node positions and edges with lengths, no electrical data
/// and no bus kinds yet.
#[derive(Debug, Clone)]
pub struct Skeleton {
    /// Node coordinates in the (dimensionless) embedding plane.
    pub positions: Vec<(f64, f64)>,
    /// Undirected edges with line length in km.
    pub edges: Vec<(usize, usize, f64)>,
}

impl Skeleton {
    pub fn n_nodes(&self) -> usize {
        self.positions.len()
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// BFS hop distances from `src` over `adj`.
fn hop_distances(adj: &[Vec<usize>], src: usize) -> Vec<usize> {
    let mut d = vec![usize::MAX; adj.len()];
    let mut queue = std::collections::VecDeque::new();
    d[src] = 0;
    queue.push_back(src);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if d[v] == usize::MAX {
                d[v] = d[u] + 1;
                queue.push_back(v);
            }
        }
    }
    d
}

struct Builder {
    positions: Vec<(f64, f64)>,
    edges: Vec<(usize, usize)>,
    adj: Vec<Vec<usize>>,
}

impl Builder {
    fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].contains(&b)
    }

    fn add_edge(&mut self, a: usize, b: usize) {
        debug_assert!(a != b && !self.has_edge(a, b));
        self.adj[a].push(b);
        self.adj[b].push(a);
        self.edges.push((a, b));
    }

    fn add_node(&mut self, pos: (f64, f64)) -> usize {
        self.positions.push(pos);
        self.adj.push(Vec::new());
        self.positions.len() - 1
    }

    /// Partner maximizing `(hops + 1)^r / distance` among non-neighbors of `i`.
    fn best_redundancy_partner(&self, i: usize, r: f64) -> Option<usize> {
        let hops = hop_distances(&self.adj, i);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.positions.len() {
            if j == i || self.has_edge(i, j) {
                continue;
            }
            let d = dist(self.positions[i], self.positions[j]);
            if d <= 0.0 {
                continue;
            }
            let h = if hops[j] == usize::MAX { 0 } else { hops[j] };
            let f = ((h as f64) + 1.0).powf(r) / d;
            if best.map_or(true, |(_, fb)| f > fb) {
                best = Some((j, f));
            }
        }
        best.map(|(j, _)| j)
    }

    fn nearest_node(&self, pos: (f64, f64)) -> usize {
        (0..self.positions.len())
            .min_by(|&a, &b| {
                dist(pos, self.positions[a])
                    .partial_cmp(&dist(pos, self.positions[b]))
                    .unwrap()
            })
            .expect("non-empty builder")
    }
}

/// Grows a connected random topology. Deterministic for a given config.
pub fn grow_topology(cfg: &GrowthConfig) -> Result<Skeleton> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut b = Builder {
        positions: Vec::new(),
        edges: Vec::new(),
        adj: Vec::new(),
    };

    // initial core: n0 random nodes spanned by an MST
    for _ in 0..cfg.n0 {
        let pos = (rng.gen::<f64>(), rng.gen::<f64>());
        b.add_node(pos);
    }
    if cfg.n0 > 1 {
        // Prim's algorithm on Euclidean distances
        let mut in_tree = vec![false; cfg.n0];
        in_tree[0] = true;
        for _ in 1..cfg.n0 {
            let mut best: Option<(usize, usize, f64)> = None;
            for i in 0..cfg.n0 {
                if !in_tree[i] {
                    continue;
                }
                for j in 0..cfg.n0 {
                    if in_tree[j] {
                        continue;
                    }
                    let d = dist(b.positions[i], b.positions[j]);
                    if best.map_or(true, |(_, _, bd)| d < bd) {
                        best = Some((i, j, d));
                    }
                }
            }
            let (i, j, _) = best.unwrap();
            in_tree[j] = true;
            b.add_edge(i, j);
        }
        // redundancy lines in the core
        let m0 = ((cfg.n0 as f64) * (1.0 - cfg.s) * (cfg.p + cfg.q)).floor() as usize;
        for _ in 0..m0 {
            let i = rng.gen_range(0..b.positions.len());
            if let Some(j) = b.best_redundancy_partner(i, cfg.r) {
                b.add_edge(i, j);
            }
        }
    }

    // growth phase
    while b.positions.len() < cfg.n_buses {
        let do_split = rng.gen::<f64>() < cfg.s && !b.edges.is_empty();
        if do_split {
            // split a random line at its midpoint
            let e_idx = rng.gen_range(0..b.edges.len());
            let (u, v) = b.edges[e_idx];
            let mid = (
                0.5 * (b.positions[u].0 + b.positions[v].0),
                0.5 * (b.positions[u].1 + b.positions[v].1),
            );
            let w = b.add_node(mid);
            // remove u-v, add u-w and w-v
            b.edges.swap_remove(e_idx);
            b.adj[u].retain(|&x| x != v);
            b.adj[v].retain(|&x| x != u);
            b.add_edge(u, w);
            b.add_edge(w, v);
        } else {
            let pos = (rng.gen::<f64>(), rng.gen::<f64>());
            let nearest = b.nearest_node(pos);
            let w = b.add_node(pos);
            b.add_edge(w, nearest);
            if rng.gen::<f64>() < cfg.p {
                if let Some(j) = b.best_redundancy_partner(w, cfg.r) {
                    b.add_edge(w, j);
                }
            }
            if rng.gen::<f64>() < cfg.q {
                let i = rng.gen_range(0..b.positions.len());
                if let Some(j) = b.best_redundancy_partner(i, cfg.r) {
                    b.add_edge(i, j);
                }
            }
        }
    }

    // scale Euclidean lengths so the mean equals mean_line_length_km
    let raw: Vec<f64> = b
        .edges
        .iter()
        .map(|&(u, v)| dist(b.positions[u], b.positions[v]).max(1e-6))
        .collect();
    let mean = if raw.is_empty() {
        1.0
    } else {
        raw.iter().sum::<f64>() / raw.len() as f64
    };
    let scale = cfg.mean_line_length_km / mean;
    let edges = b
        .edges
        .iter()
        .zip(raw.iter())
        .map(|(&(u, v), &d)| (u, v, d * scale))
        .collect();

    Ok(Skeleton {
        positions: b.positions,
        edges,
    })
}

/// Attaches per-km electrical parameters to every skeleton edge and builds a
/// grid whose bus kinds are still placeholders (all PQ plus one slack at bus 0).
pub fn assign_line_params(
    skeleton: &Skeleton,
    template: &LineParams,
    base: &PerUnitBase,
) -> Result<Grid> {
    let lines = skeleton
        .edges
        .iter()
        .map(|&(u, v, len)| {
            let params = LineParams {
                length: len,
                ..*template
            };
            Line::new(u, v, params, base)
        })
        .collect::<Result<Vec<_>>>()?;
    let buses = (0..skeleton.n_nodes())
        .map(|id| Bus {
            id,
            kind: if id == 0 {
                BusKind::Slack
            } else {
                BusKind::PqLoad
            },
            p_set: 0.0,
            q_set: 0.0,
            v_set: if id == 0 { Some(1.0) } else { None },
        })
        .collect();
    Grid::new(buses, lines, *base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_grid;

    #[test]
    fn single_node_no_lines() {
        let cfg = GrowthConfig {
            n_buses: 1,
            ..Default::default()
        };
        let sk = grow_topology(&cfg).unwrap();
        assert_eq!(sk.n_nodes(), 1);
        assert!(sk.edges.is_empty());
    }

    #[test]
    fn deterministic_for_seed() {
        let cfg = GrowthConfig {
            n_buses: 30,
            rng_seed: 7,
            ..Default::default()
        };
        let a = grow_topology(&cfg).unwrap();
        let b = grow_topology(&cfg).unwrap();
        assert_eq!(a.edges, b.edges);
        assert_eq!(a.positions, b.positions);
    }

    #[test]
    fn connected_for_many_seeds_and_positive_lengths() {
        for seed in 0..100 {
            let cfg = GrowthConfig {
                n_buses: 24,
                rng_seed: seed,
                ..Default::default()
            };
            let sk = grow_topology(&cfg).unwrap();
            assert_eq!(sk.n_nodes(), 24);
            assert!(sk.edges.iter().all(|&(_, _, l)| l > 0.0));
            let grid =
                assign_line_params(&sk, &LineParams::standard_380kv(1.0), &PerUnitBase::transmission_380kv())
                    .unwrap();
            assert!(validate_grid(&grid).is_empty(), "seed {seed} disconnected");
        }
    }

    #[test]
    fn mean_degree_regression_anchor() {
        // Empirical statistic of the implemented model; expected band 2.2..3.2.
        let mut total_deg = 0.0;
        let mut n_total = 0.0;
        for seed in 0..50 {
            let cfg = GrowthConfig {
                n_buses: 100,
                rng_seed: 1000 + seed,
                ..Default::default()
            };
            let sk = grow_topology(&cfg).unwrap();
            total_deg += 2.0 * sk.edges.len() as f64;
            n_total += sk.n_nodes() as f64;
        }
        let mean_degree = total_deg / n_total;
        assert!(
            (2.2..=3.2).contains(&mean_degree),
            "mean degree {mean_degree} outside [2.2, 3.2]"
        );
    }

    #[test]
    fn mean_line_length_is_scaled() {
        let cfg = GrowthConfig {
            n_buses: 40,
            rng_seed: 3,
            mean_line_length_km: 50.0,
            ..Default::default()
        };
        let sk = grow_topology(&cfg).unwrap();
        let mean = sk.edges.iter().map(|e| e.2).sum::<f64>() / sk.edges.len() as f64;
        approx::assert_relative_eq!(mean, 50.0, max_relative = 1e-9);
    }

    #[test]
    fn assign_params_no_lines_is_noop() {
        let sk = Skeleton {
            positions: vec![(0.0, 0.0)],
            edges: vec![],
        };
        let g = assign_line_params(
            &sk,
            &LineParams::standard_380kv(1.0),
            &PerUnitBase::transmission_380kv(),
        )
        .unwrap();
        assert!(g.lines.is_empty());
    }

    #[test]
    fn equal_lengths_give_equal_series_admittance() {
        let sk = Skeleton {
            positions: vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)],
            edges: vec![(0, 1, 80.0), (1, 2, 80.0)],
        };
        let g = assign_line_params(
            &sk,
            &LineParams::standard_380kv(1.0),
            &PerUnitBase::transmission_380kv(),
        )
        .unwrap();
        assert_eq!(g.lines[0].y_series, g.lines[1].y_series);
    }
}
