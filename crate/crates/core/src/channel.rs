//! Spatially correlated Rician channels with random LoS phase and Jakes aging.
//!
//! The channel at any instant `t` of the block is tied to the anchor instant
//! `lambda` by `h[t] = rho_t h[lambda] + sqrt(1 - rho_t^2) f[t]`, where the
//! innovation `f[t]` is an independent copy of the anchor distribution drawn
//! separately for every instant.

use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::PI;

use crate::config::{SimConfig, Timeline};
use crate::error::{Error, Result};
use crate::linalg::CVec;
use crate::rng::{complex_normal, uniform_phase, Purpose, StreamKey};
use crate::topology::Topology;

const SERIES_LIMIT: f64 = 12.0;

/// Bessel function of the first kind, order zero.
///
/// Power series below |x| = 12, Hankel asymptotic expansion above.
pub fn bessel_j0(x: f64) -> f64 {
    let ax = x.abs();
    if ax < SERIES_LIMIT {
        let q = -(ax * ax) / 4.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..200 {
            term *= q / (k * k) as f64;
            sum += term;
            if term.abs() < 1e-18 * sum.abs().max(1e-300) {
                break;
            }
        }
        sum
    } else {
        // a_k = prod_{j<=k} (-(2j-1)^2) / (k! 8^k)
        let mut p = 1.0;
        let mut q = 0.0;
        let mut a = 1.0;
        let mut last = f64::INFINITY;
        for k in 1..200usize {
            let odd = (2 * k - 1) as f64;
            a *= -(odd * odd) / (8.0 * k as f64 * ax);
            if a.abs() >= last || a.abs() < 1e-18 {
                break;
            }
            last = a.abs();
            let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
            if k % 2 == 0 {
                p += sign * a;
            } else {
                q += sign * a;
            }
        }
        let phase = ax - PI / 4.0;
        (2.0 / (PI * ax)).sqrt() * (p * phase.cos() - q * phase.sin())
    }
}

/// Jakes temporal correlation between instants `t` and `lambda`.
pub fn temporal_corr(t: usize, lambda: usize, velocity_kmh: f64, carrier_hz: f64, sample_time_s: f64) -> f64 {
    let doppler = velocity_kmh / 3.6 * carrier_hz / crate::config::SPEED_OF_LIGHT;
    let gap = (t as f64 - lambda as f64).abs();
    bessel_j0(2.0 * PI * doppler * sample_time_s * gap)
}

/// Per-UE temporal correlation against the anchor for every instant of the block.
#[derive(Debug, Clone)]
pub struct RhoTable {
    lambda: usize,
    /// `[k][t]`, `t` in `0..=tau_c` (index 0 unused).
    rho: Vec<Vec<f64>>,
}

impl RhoTable {
    pub fn new(config: &SimConfig, timeline: &Timeline) -> Self {
        let rho = (0..config.num_ues)
            .map(|k| {
                (0..=timeline.tau_c)
                    .map(|t| {
                        temporal_corr(
                            t,
                            timeline.lambda,
                            config.velocity_kmh.of(k),
                            config.carrier_hz,
                            config.sample_time_s,
                        )
                    })
                    .collect()
            })
            .collect();
        RhoTable {
            lambda: timeline.lambda,
            rho,
        }
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    #[inline]
    pub fn rho(&self, k: usize, t: usize) -> f64 {
        self.rho[k][t]
    }

    #[inline]
    pub fn rho_bar(&self, k: usize, t: usize) -> f64 {
        let r = self.rho[k][t];
        (1.0 - r * r).max(0.0).sqrt()
    }
}

/// Instants (other than the anchor) at which each UE's channels are sampled.
#[derive(Debug, Clone)]
pub struct InstantPlan {
    lambda: usize,
    tau_c: usize,
    per_ue: Vec<Vec<usize>>,
    /// `[k][t]` -> position in `per_ue[k]`, or `usize::MAX`.
    lookup: Vec<Vec<usize>>,
}

impl InstantPlan {
    /// Pilot instants each UE takes part in, optionally followed by the data
    /// instants after the anchor.
    pub fn new(topology: &Topology, timeline: &Timeline, include_data: bool) -> Self {
        let per_ue: Vec<Vec<usize>> = (0..topology.num_ues)
            .map(|k| {
                let slot = topology.pilot_index[k];
                let mut ts = vec![timeline.ul_instant(slot)];
                if timeline.has_common_pilots() {
                    ts.extend((0..timeline.num_clusters).map(|c| timeline.dl_common_instant(c)));
                }
                if timeline.has_private_pilots() {
                    ts.push(timeline.dl_private_instant(slot));
                }
                if include_data {
                    ts.extend(timeline.lambda + 1..=timeline.tau_c);
                }
                ts.sort_unstable();
                ts.dedup();
                ts
            })
            .collect();
        Self::from_instants(timeline.lambda, timeline.tau_c, per_ue)
    }

    pub fn from_instants(lambda: usize, tau_c: usize, per_ue: Vec<Vec<usize>>) -> Self {
        let lookup = per_ue
            .iter()
            .map(|ts| {
                let mut l = vec![usize::MAX; tau_c + 1];
                for (i, &t) in ts.iter().enumerate() {
                    l[t] = i;
                }
                l
            })
            .collect();
        InstantPlan {
            lambda,
            tau_c,
            per_ue,
            lookup,
        }
    }

    pub fn tau_c(&self) -> usize {
        self.tau_c
    }

    pub fn instants(&self, k: usize) -> &[usize] {
        &self.per_ue[k]
    }

    #[inline]
    pub fn position(&self, k: usize, t: usize) -> Option<usize> {
        match self.lookup[k].get(t) {
            Some(&i) if i != usize::MAX => Some(i),
            _ => None,
        }
    }
}

/// Draws `h = h_bar e^{j phi} + R^{1/2} g` for one link into `out`.
fn draw_rician<R: Rng + ?Sized>(topology: &Topology, link: usize, rng: &mut R, out: &mut [Complex64]) -> f64 {
    let n = topology.antennas;
    let phi = uniform_phase(rng);
    let rot = Complex64::from_polar(1.0, phi);
    let g: Vec<Complex64> = (0..n).map(|_| complex_normal(rng)).collect();
    let hb = &topology.h_bar[link];
    let root = &topology.r_sqrt[link];
    for a in 0..n {
        let mut acc = hb[a] * rot;
        for b in 0..n {
            acc += root[(a, b)] * g[b];
        }
        out[a] = acc;
    }
    phi
}

/// Anchor channels `h_mk[lambda]` of every link, drawn in AP-major order.
pub fn sample_anchor<R: Rng + ?Sized>(topology: &Topology, rng: &mut R) -> Vec<CVec> {
    let n = topology.antennas;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    (0..topology.num_aps * topology.num_ues)
        .map(|link| {
            draw_rician(topology, link, rng, &mut buf);
            CVec::from_column_slice(&buf)
        })
        .collect()
}

/// All channel samples of one (drop, realization) trial.
#[derive(Debug, Clone)]
pub struct ChannelBlock {
    antennas: usize,
    num_aps: usize,
    num_ues: usize,
    lambda: usize,
    plan_len: Vec<usize>,
    plan_offset: Vec<usize>,
    anchor: Vec<Complex64>,
    anchor_phase: Vec<f64>,
    /// Layout: `((offset[k] + pos) * M + m) * N + a`.
    innovations: Vec<Complex64>,
    plan: InstantPlan,
    rho: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ChannelBlock {
    /// Anchor from the `Anchor` stream of `key`; innovations of link (m, k)
    /// from their own stream, in increasing instant order.
    pub fn sample(topology: &Topology, plan: &InstantPlan, rho: &RhoTable, key: StreamKey) -> Self {
        let (m_count, k_count, n) = (topology.num_aps, topology.num_ues, topology.antennas);
        let mut rng = key.purpose(Purpose::Anchor).rng();
        let mut anchor = vec![Complex64::new(0.0, 0.0); m_count * k_count * n];
        let mut anchor_phase = Vec::with_capacity(m_count * k_count);
        for link in 0..m_count * k_count {
            anchor_phase.push(draw_rician(
                topology,
                link,
                &mut rng,
                &mut anchor[link * n..(link + 1) * n],
            ));
        }

        let plan_len: Vec<usize> = (0..k_count).map(|k| plan.instants(k).len()).collect();
        let mut plan_offset = Vec::with_capacity(k_count);
        let mut total = 0;
        for &len in &plan_len {
            plan_offset.push(total);
            total += len;
        }
        let mut innovations = vec![Complex64::new(0.0, 0.0); total * m_count * n];
        let innov_key = key.purpose(Purpose::Innovation);
        for m in 0..m_count {
            for k in 0..k_count {
                let link = topology.idx(m, k);
                let mut rng = innov_key.child(link as u64).rng();
                for pos in 0..plan_len[k] {
                    let at = ((plan_offset[k] + pos) * m_count + m) * n;
                    draw_rician(topology, link, &mut rng, &mut innovations[at..at + n]);
                }
            }
        }
        let rho = (0..k_count)
            .map(|k| {
                let ts = plan.instants(k);
                (
                    ts.iter().map(|&t| rho.rho(k, t)).collect(),
                    ts.iter().map(|&t| rho.rho_bar(k, t)).collect(),
                )
            })
            .collect();
        ChannelBlock {
            antennas: n,
            num_aps: m_count,
            num_ues: k_count,
            lambda: plan.lambda,
            plan_len,
            plan_offset,
            anchor,
            anchor_phase,
            innovations,
            plan: plan.clone(),
            rho,
        }
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn plan(&self) -> &InstantPlan {
        &self.plan
    }

    pub fn anchor_phase(&self, m: usize, k: usize) -> f64 {
        self.anchor_phase[m * self.num_ues + k]
    }

    #[inline]
    pub fn anchor(&self, m: usize, k: usize) -> &[Complex64] {
        let at = (m * self.num_ues + k) * self.antennas;
        &self.anchor[at..at + self.antennas]
    }

    fn position(&self, k: usize, t: usize) -> Result<usize> {
        self.plan.position(k, t).ok_or_else(|| Error::InstantOutOfRange {
            t,
            available: format!("{} and {:?}", self.lambda, self.plan.instants(k)),
        })
    }

    /// Innovation `f_mk[t]`.
    #[inline]
    pub fn innovation(&self, m: usize, k: usize, t: usize) -> Result<&[Complex64]> {
        let pos = self.position(k, t)?;
        Ok(self.innovation_at(m, k, pos))
    }

    #[inline]
    pub(crate) fn innovation_at(&self, m: usize, k: usize, pos: usize) -> &[Complex64] {
        debug_assert!(pos < self.plan_len[k]);
        let at = ((self.plan_offset[k] + pos) * self.num_aps + m) * self.antennas;
        &self.innovations[at..at + self.antennas]
    }

    /// `(rho, rho_bar)` of UE `k` at its `pos`-th sampled instant.
    #[inline]
    pub(crate) fn rho_at(&self, k: usize, pos: usize) -> (f64, f64) {
        (self.rho[k].0[pos], self.rho[k].1[pos])
    }

    /// `h_mk[t]`; the anchor itself at `t = lambda`.
    pub fn channel_at(&self, m: usize, k: usize, t: usize) -> Result<CVec> {
        let h = self.anchor(m, k);
        if t == self.lambda {
            return Ok(CVec::from_column_slice(h));
        }
        let pos = self.position(k, t)?;
        let (r, rb) = self.rho_at(k, pos);
        let f = self.innovation_at(m, k, pos);
        Ok(CVec::from_iterator(
            self.antennas,
            h.iter().zip(f).map(|(h, f)| h * r + f * rb),
        ))
    }

    pub fn num_aps(&self) -> usize {
        self.num_aps
    }

    pub fn num_ues(&self) -> usize {
        self.num_ues
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use crate::topology::drop_network;

    /// J0(x) = (1/pi) int_0^pi cos(x sin u) du; the trapezoid rule on a
    /// periodic integrand converges geometrically.
    fn j0_integral(x: f64) -> f64 {
        let n = 2000;
        let h = PI / n as f64;
        let mut s = 0.5 * (1.0 + (x * PI.sin()).cos());
        for i in 1..n {
            s += (x * (i as f64 * h).sin()).cos();
        }
        s * h / PI
    }

    #[test]
    fn j0_reference_values() {
        assert_eq!(bessel_j0(0.0), 1.0);
        assert!((bessel_j0(1.0) - 0.765_197_686_557_966_5).abs() < 1e-12);
        assert!(bessel_j0(2.404825557695773).abs() < 1e-9);
        assert_eq!(bessel_j0(-3.3), bessel_j0(3.3));
    }

    #[test]
    fn j0_matches_integral_oracle_up_to_100() {
        let mut worst: f64 = 0.0;
        let mut x = 0.0;
        while x <= 100.0 {
            worst = worst.max((bessel_j0(x) - j0_integral(x)).abs());
            x += 0.173;
        }
        for x in [11.999, 12.0, 12.001, 50.0, 100.0] {
            worst = worst.max((bessel_j0(x) - j0_integral(x)).abs());
        }
        assert!(worst < 1e-10, "max abs error {worst:e}");
    }

    #[test]
    fn temporal_corr_examples() {
        assert_eq!(temporal_corr(7, 7, 120.0, 2e9, 66.7e-6), 1.0);
        assert_eq!(temporal_corr(1, 50, 0.0, 2e9, 66.7e-6), 1.0);
        let rho = temporal_corr(10, 20, 40.0, 2e9, 66.7e-6);
        // f_d = 74.125 Hz, argument 0.31065
        assert!((rho - 0.976_019_145_339_139_8).abs() < 1e-9, "{rho}");
    }

    #[test]
    fn rho_decreases_before_first_zero() {
        let mut prev = 2.0;
        for i in 0..=240 {
            let v = bessel_j0(i as f64 * 0.01);
            assert!(v < prev);
            prev = v;
        }
    }

    fn small_model(v: f64) -> (SimConfig, Topology, Timeline) {
        let cfg = SimConfig {
            num_aps: 4,
            num_ues: 4,
            num_clusters: 2,
            antennas_per_ap: 2,
            velocity_kmh: crate::config::Velocity::Uniform(v),
            tau_c: 20,
            ..SimConfig::default()
        };
        let topo = drop_network(&cfg, 0).unwrap();
        let tl = Timeline::new(&cfg, topo.max_cluster_ues()).unwrap();
        (cfg, topo, tl)
    }

    #[test]
    fn channel_at_anchor_and_static() {
        let (cfg, topo, tl) = small_model(0.0);
        let rho = RhoTable::new(&cfg, &tl);
        let plan = InstantPlan::new(&topo, &tl, true);
        let block = ChannelBlock::sample(&topo, &plan, &rho, StreamKey::root(3));
        let h = block.channel_at(1, 2, tl.lambda).unwrap();
        assert_eq!(h.as_slice(), block.anchor(1, 2));
        for &t in plan.instants(2) {
            assert_eq!(block.channel_at(1, 2, t).unwrap().as_slice(), block.anchor(1, 2));
        }
        // repeated reads are identical
        let t = tl.tau_c;
        assert_eq!(block.channel_at(0, 0, t).unwrap(), block.channel_at(0, 0, t).unwrap());
        assert!(matches!(
            block.channel_at(0, 0, 0),
            Err(Error::InstantOutOfRange { .. })
        ));
    }

    #[test]
    fn pure_los_keeps_magnitudes() {
        let (cfg, mut topo, _) = small_model(0.0);
        let n = cfg.antennas_per_ap;
        for r in topo.r_sqrt.iter_mut() {
            *r = crate::linalg::CMat::zeros(n, n);
        }
        let mut rng = StreamKey::root(5).rng();
        let h = sample_anchor(&topo, &mut rng);
        for (link, v) in h.iter().enumerate() {
            for a in 0..n {
                assert!((v[a].norm() - topo.h_bar[link][a].norm()).abs() < 1e-20);
            }
        }
    }
}
