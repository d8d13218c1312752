//! Network drops: positions on a wrapped square, clustering, large-scale
//! statistics and UL pilot assignment.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::linalg::{hermitian_sqrt, psd_repair, CMat, CVec};
use crate::rng::{Purpose, StreamKey};

pub const KMEANS_MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Shortest displacement from `a` to `b` over the 9 wrapped copies of `b`.
pub fn wraparound_displacement(a: Point, b: Point, side: f64) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for sx in [-1.0, 0.0, 1.0] {
        for sy in [-1.0, 0.0, 1.0] {
            let dx = b.x + sx * side - a.x;
            let dy = b.y + sy * side - a.y;
            let d2 = dx * dx + dy * dy;
            if d2 < best.0 {
                best = (d2, dx, dy);
            }
        }
    }
    (best.1, best.2)
}

/// Wrapped horizontal distance with the AP height added in quadrature.
pub fn wraparound_distance(a: Point, b: Point, side: f64, height: f64) -> f64 {
    let (dx, dy) = wraparound_displacement(a, b, side);
    (dx * dx + dy * dy + height * height).sqrt()
}

/// Distance-dependent path gain and Rician factor laws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LargeScaleModel {
    pub intercept_db: f64,
    pub slope_db: f64,
    pub rician_log10_intercept: f64,
    pub rician_log10_slope_per_m: f64,
}

impl LargeScaleModel {
    pub fn from_config(c: &SimConfig) -> Self {
        LargeScaleModel {
            intercept_db: c.pathloss_intercept_db,
            slope_db: c.pathloss_slope_db,
            rician_log10_intercept: c.rician_log10_intercept,
            rician_log10_slope_per_m: c.rician_log10_slope_per_m,
        }
    }

    /// Returns `(beta, rician_k)`, both linear.
    pub fn large_scale(&self, distance_m: f64) -> (f64, f64) {
        let beta_db = self.intercept_db - self.slope_db * distance_m.log10();
        let beta = 10f64.powf(beta_db / 10.0);
        let k = 10f64.powf(self.rician_log10_intercept - self.rician_log10_slope_per_m * distance_m);
        (beta, k)
    }
}

impl Default for LargeScaleModel {
    fn default() -> Self {
        Self::from_config(&SimConfig::default())
    }
}

/// Half-wavelength ULA steering vector, entry n = exp(j pi n sin(theta)).
pub fn los_steering(angle_rad: f64, n: usize) -> CVec {
    CVec::from_fn(n, |i, _| Complex64::from_polar(1.0, PI * i as f64 * angle_rad.sin()))
}

/// Gaussian local-scattering correlation (unit diagonal) for a
/// half-wavelength ULA, closed form for small angular spread.
pub fn spatial_correlation(nominal_angle_rad: f64, asd_deg: f64, n: usize) -> Result<CMat> {
    let sigma = asd_deg.to_radians();
    let (s, c) = nominal_angle_rad.sin_cos();
    let m = CMat::from_fn(n, n, |a, b| {
        let d = a as f64 - b as f64;
        let spread = (sigma * PI * d * c).powi(2) / 2.0;
        Complex64::from_polar((-spread).exp(), PI * d * s)
    });
    psd_repair(&m, 1.0)
}

#[derive(Debug, Clone)]
pub struct Clustering {
    pub cluster_of_ap: Vec<usize>,
    pub cluster_of_ue: Vec<usize>,
}

fn circular_mean(values: impl Iterator<Item = f64>, side: f64) -> Option<f64> {
    let (mut c, mut s, mut n) = (0.0, 0.0, 0usize);
    for v in values {
        let a = 2.0 * PI * v / side;
        c += a.cos();
        s += a.sin();
        n += 1;
    }
    if n == 0 || (c * c + s * s).sqrt() < 1e-12 * n as f64 {
        return None;
    }
    Some((s.atan2(c) / (2.0 * PI) * side).rem_euclid(side))
}

/// Capacity-constrained greedy assignment: every cluster ends with either
/// floor(K/L) or ceil(K/L) UEs.
fn balanced_assignment(ue_pos: &[Point], centroids: &[Point], side: f64) -> Vec<usize> {
    let k = ue_pos.len();
    let l = centroids.len();
    let base = k / l;
    let extra = k % l;
    let mut pairs = Vec::with_capacity(k * l);
    for (u, p) in ue_pos.iter().enumerate() {
        for (c, q) in centroids.iter().enumerate() {
            pairs.push((wraparound_distance(*p, *q, side, 0.0), u, c));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![usize::MAX; k];
    let mut count = vec![0usize; l];
    let mut extras_used = 0;
    for (_, u, c) in pairs {
        if out[u] != usize::MAX {
            continue;
        }
        if count[c] < base {
            out[u] = c;
            count[c] += 1;
        } else if count[c] == base && extras_used < extra {
            out[u] = c;
            count[c] += 1;
            extras_used += 1;
        }
    }
    out
}

/// Balanced k-means over UE positions on the torus, then AP association by
/// largest summed path gain towards each cluster's UEs.
///
/// `beta[m * K + k]` is the path gain between AP `m` and UE `k`.
pub fn cluster_network(
    ap_pos: &[Point],
    ue_pos: &[Point],
    num_clusters: usize,
    side: f64,
    beta: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<Clustering> {
    let m_count = ap_pos.len();
    let k_count = ue_pos.len();
    if num_clusters == 0 || num_clusters > m_count.min(k_count) {
        return Err(Error::Clustering(format!(
            "cannot form {num_clusters} clusters from {m_count} APs and {k_count} UEs"
        )));
    }

    // farthest-point initialization
    let first = rng.random_range(0..k_count);
    let mut centroids = vec![ue_pos[first]];
    while centroids.len() < num_clusters {
        let (mut best, mut best_d) = (0, -1.0);
        for (u, p) in ue_pos.iter().enumerate() {
            let d = centroids
                .iter()
                .map(|c| wraparound_distance(*p, *c, side, 0.0))
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = u;
            }
        }
        centroids.push(ue_pos[best]);
    }

    let mut cluster_of_ue = balanced_assignment(ue_pos, &centroids, side);
    for _ in 0..KMEANS_MAX_ITERATIONS {
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members = || (0..k_count).filter(|&u| cluster_of_ue[u] == c);
            let x = circular_mean(members().map(|u| ue_pos[u].x), side);
            let y = circular_mean(members().map(|u| ue_pos[u].y), side);
            if let (Some(x), Some(y)) = (x, y) {
                *centroid = Point::new(x, y);
            }
        }
        let next = balanced_assignment(ue_pos, &centroids, side);
        if next == cluster_of_ue {
            break;
        }
        cluster_of_ue = next;
    }

    let gain_to = |m: usize, c: usize, assignment: &[usize]| -> f64 {
        (0..k_count)
            .filter(|&k| assignment[k] == c)
            .map(|k| beta[m * k_count + k])
            .sum()
    };
    let mut cluster_of_ap: Vec<usize> = (0..m_count)
        .map(|m| {
            let mut best = (0, f64::NEG_INFINITY);
            for c in 0..num_clusters {
                let g = gain_to(m, c, &cluster_of_ue);
                if g > best.1 {
                    best = (c, g);
                }
            }
            best.0
        })
        .collect();

    // repair clusters left without an AP
    loop {
        let mut ap_count = vec![0usize; num_clusters];
        for &c in &cluster_of_ap {
            ap_count[c] += 1;
        }
        let Some(empty) = (0..num_clusters).find(|&c| ap_count[c] == 0) else {
            break;
        };
        let donor = (0..m_count)
            .filter(|&m| ap_count[cluster_of_ap[m]] > 1)
            .map(|m| (m, gain_to(m, empty, &cluster_of_ue)))
            .fold(None, |best: Option<(usize, f64)>, cand| match best {
                Some(b) if b.1 >= cand.1 => Some(b),
                _ => Some(cand),
            });
        match donor {
            Some((m, _)) => cluster_of_ap[m] = empty,
            None => {
                return Err(Error::Clustering(format!(
                    "cluster {empty} has no AP and no donor is available"
                )))
            }
        }
    }

    for c in 0..num_clusters {
        if !cluster_of_ue.contains(&c) {
            return Err(Error::Clustering(format!("cluster {c} has no UE")));
        }
    }
    Ok(Clustering {
        cluster_of_ap,
        cluster_of_ue,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PilotAssignment {
    /// 0-based UL pilot slot per UE.
    pub pilot_index: Vec<usize>,
    /// Pilot-sharing set of each UE (includes the UE itself), sorted.
    pub pilot_sets: Vec<Vec<usize>>,
}

/// Orthogonal pilots inside a cluster, reused across clusters. The slot order
/// within each cluster is shuffled.
pub fn assign_pilots(
    cluster_of_ue: &[usize],
    num_clusters: usize,
    tau_u: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PilotAssignment> {
    let k_count = cluster_of_ue.len();
    let mut pilot_index = vec![0usize; k_count];
    for c in 0..num_clusters {
        let mut members: Vec<usize> = (0..k_count).filter(|&k| cluster_of_ue[k] == c).collect();
        if members.len() > tau_u {
            return Err(Error::PilotCapacity {
                cluster: c,
                size: members.len(),
                tau_u,
            });
        }
        members.shuffle(rng);
        for (slot, &k) in members.iter().enumerate() {
            pilot_index[k] = slot;
        }
    }
    let pilot_sets = (0..k_count)
        .map(|k| (0..k_count).filter(|&i| pilot_index[i] == pilot_index[k]).collect())
        .collect();
    Ok(PilotAssignment {
        pilot_index,
        pilot_sets,
    })
}

/// One network drop with all large-scale quantities. Per-link data is stored
/// row-major by AP: index `m * K + k`.
#[derive(Debug, Clone)]
pub struct Topology {
    pub num_aps: usize,
    pub num_ues: usize,
    pub num_clusters: usize,
    pub antennas: usize,
    pub tau_u: usize,
    pub ap_pos: Vec<Point>,
    pub ue_pos: Vec<Point>,
    pub cluster_of_ap: Vec<usize>,
    pub cluster_of_ue: Vec<usize>,
    pub cluster_aps: Vec<Vec<usize>>,
    pub cluster_ues: Vec<Vec<usize>>,
    pub distance: Vec<f64>,
    pub angle: Vec<f64>,
    pub beta: Vec<f64>,
    pub rician_k: Vec<f64>,
    /// NLoS correlation R_mk.
    pub r_corr: Vec<CMat>,
    /// R_mk^{1/2}.
    pub r_sqrt: Vec<CMat>,
    /// LoS mean vector.
    pub h_bar: Vec<CVec>,
    /// h_bar h_bar^H + R_mk.
    pub r_bar: Vec<CMat>,
    pub pilot_index: Vec<usize>,
    pub pilot_sets: Vec<Vec<usize>>,
    /// UEs transmitting in each UL slot.
    pub slot_members: Vec<Vec<usize>>,
}

impl Topology {
    #[inline]
    pub fn idx(&self, m: usize, k: usize) -> usize {
        m * self.num_ues + k
    }

    pub fn max_cluster_ues(&self) -> usize {
        self.cluster_ues.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Builds the large-scale description of a drop from explicit positions
    /// and cluster labels. Pilots are assigned with `rng`.
    pub fn from_layout(
        config: &SimConfig,
        ap_pos: Vec<Point>,
        ue_pos: Vec<Point>,
        clustering: Clustering,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let model = LargeScaleModel::from_config(config);
        let (m_count, k_count, n) = (ap_pos.len(), ue_pos.len(), config.antennas_per_ap);
        let l = config.num_clusters;
        let mut cluster_ues = vec![Vec::new(); l];
        for (k, &c) in clustering.cluster_of_ue.iter().enumerate() {
            cluster_ues[c].push(k);
        }
        let mut cluster_aps = vec![Vec::new(); l];
        for (m, &c) in clustering.cluster_of_ap.iter().enumerate() {
            cluster_aps[c].push(m);
        }
        let max_ues = cluster_ues.iter().map(Vec::len).max().unwrap_or(0);
        let tau_u = config.tau_u.unwrap_or(max_ues);
        let pilots = assign_pilots(&clustering.cluster_of_ue, l, tau_u, rng)?;

        let links = m_count * k_count;
        let (mut distance, mut angle, mut beta, mut rician_k) = (
            Vec::with_capacity(links),
            Vec::with_capacity(links),
            Vec::with_capacity(links),
            Vec::with_capacity(links),
        );
        let (mut r_corr, mut r_sqrt, mut h_bar, mut r_bar) = (
            Vec::with_capacity(links),
            Vec::with_capacity(links),
            Vec::with_capacity(links),
            Vec::with_capacity(links),
        );
        for ap in &ap_pos {
            for ue in &ue_pos {
                let d = wraparound_distance(*ap, *ue, config.area_side_m, config.ap_height_m);
                let (dx, dy) = wraparound_displacement(*ap, *ue, config.area_side_m);
                let theta = dy.atan2(dx);
                let (b, kf) = model.large_scale(d);
                let nlos = b / (1.0 + kf);
                let unit = spatial_correlation(theta, config.asd_deg, n)?;
                let r = unit.scale(nlos);
                let root = hermitian_sqrt(&unit, 1.0)?.scale(nlos.sqrt());
                let hb = los_steering(theta, n).scale((kf * b / (1.0 + kf)).sqrt());
                let rb = &hb * hb.adjoint() + &r;
                distance.push(d);
                angle.push(theta);
                beta.push(b);
                rician_k.push(kf);
                r_corr.push(r);
                r_sqrt.push(root);
                h_bar.push(hb);
                r_bar.push(rb);
            }
        }
        let mut slot_members = vec![Vec::new(); tau_u];
        for (k, &s) in pilots.pilot_index.iter().enumerate() {
            slot_members[s].push(k);
        }
        Ok(Topology {
            num_aps: m_count,
            num_ues: k_count,
            num_clusters: l,
            antennas: n,
            tau_u,
            ap_pos,
            ue_pos,
            cluster_of_ap: clustering.cluster_of_ap,
            cluster_of_ue: clustering.cluster_of_ue,
            cluster_aps,
            cluster_ues,
            distance,
            angle,
            beta,
            rician_k,
            r_corr,
            r_sqrt,
            h_bar,
            r_bar,
            pilot_index: pilots.pilot_index,
            pilot_sets: pilots.pilot_sets,
            slot_members,
        })
    }
}

/// Random drop `drop_index` of the run described by `config`.
pub fn drop_network(config: &SimConfig, drop_index: u64) -> Result<Topology> {
    config.validate()?;
    let key = StreamKey::root(config.seed)
        .child(drop_index)
        .purpose(Purpose::Topology);
    drop_network_with(config, &mut key.rng())
}

pub fn drop_network_with(config: &SimConfig, rng: &mut ChaCha8Rng) -> Result<Topology> {
    let side = config.area_side_m;
    let uniform_point = |rng: &mut ChaCha8Rng| Point::new(rng.random_range(0.0..side), rng.random_range(0.0..side));
    let ap_pos: Vec<Point> = (0..config.num_aps).map(|_| uniform_point(rng)).collect();
    let ue_pos: Vec<Point> = (0..config.num_ues).map(|_| uniform_point(rng)).collect();

    let model = LargeScaleModel::from_config(config);
    let mut beta = Vec::with_capacity(ap_pos.len() * ue_pos.len());
    for ap in &ap_pos {
        for ue in &ue_pos {
            beta.push(
                model
                    .large_scale(wraparound_distance(*ap, *ue, side, config.ap_height_m))
                    .0,
            );
        }
    }
    let clustering = cluster_network(&ap_pos, &ue_pos, config.num_clusters, side, &beta, rng)?;
    Topology::from_layout(config, ap_pos, ue_pos, clustering, rng)
}
