//! UL pilot reception and LMMSE channel estimation at the APs.

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{ChannelBlock, RhoTable};
use crate::config::{SimConfig, Timeline};
use crate::error::{Error, Result};
use crate::linalg::{hermitize, inverse_hpd, psd_eigen, trace_product, CMat, CVec};
use crate::rng::{complex_normal, Purpose, StreamKey};
use crate::topology::Topology;

/// Drop-level UL estimation statistics.
#[derive(Debug, Clone)]
pub struct UlStatistics {
    pub antennas: usize,
    pub num_ues: usize,
    pub tau_u: usize,
    /// UL pilot power p~_u (W).
    pub pilot_power: f64,
    pub noise_power: f64,
    /// Psi per `(m, slot)`: `m * tau_u + slot`.
    pub psi: Vec<CMat>,
    /// rho between each UE's UL pilot instant and the anchor.
    pub rho_ul: Vec<f64>,
    /// `rho sqrt(p~) R_bar Psi`, the map from received pilot to estimate, per link.
    pub delta: Vec<CMat>,
    /// Estimate covariance R^_mk per link.
    pub r_hat: Vec<CMat>,
}

impl UlStatistics {
    pub fn new(config: &SimConfig, topology: &Topology, timeline: &Timeline, rho: &RhoTable) -> Result<Self> {
        let (m_count, k_count, n, tau_u) = (topology.num_aps, topology.num_ues, topology.antennas, topology.tau_u);
        let p = config.ul_pilot_w();
        let sigma2 = config.noise_w();
        let mut psi = Vec::with_capacity(m_count * tau_u);
        for m in 0..m_count {
            for slot in 0..tau_u {
                let mut cov = CMat::identity(n, n).scale(sigma2);
                for &i in &topology.slot_members[slot] {
                    cov += topology.r_bar[topology.idx(m, i)].scale(p);
                }
                psi.push(inverse_hpd(&cov)?);
            }
        }
        let rho_ul: Vec<f64> = (0..k_count)
            .map(|k| rho.rho(k, timeline.ul_instant(topology.pilot_index[k])))
            .collect();
        let mut delta = Vec::with_capacity(m_count * k_count);
        let mut r_hat = Vec::with_capacity(m_count * k_count);
        for m in 0..m_count {
            for k in 0..k_count {
                let rb = &topology.r_bar[topology.idx(m, k)];
                let ps = &psi[m * tau_u + topology.pilot_index[k]];
                let d = (rb * ps).scale(rho_ul[k] * p.sqrt());
                r_hat.push(hermitize(&(rb * ps * rb).scale(p * rho_ul[k] * rho_ul[k])));
                delta.push(d);
            }
        }
        Ok(UlStatistics {
            antennas: n,
            num_ues: k_count,
            tau_u,
            pilot_power: p,
            noise_power: sigma2,
            psi,
            rho_ul,
            delta,
            r_hat,
        })
    }

    #[inline]
    pub fn link(&self, m: usize, k: usize) -> usize {
        m * self.num_ues + k
    }

    pub fn psi(&self, m: usize, slot: usize) -> &CMat {
        &self.psi[m * self.tau_u + slot]
    }

    pub fn r_hat(&self, m: usize, k: usize) -> &CMat {
        &self.r_hat[self.link(m, k)]
    }

    pub fn delta(&self, m: usize, k: usize) -> &CMat {
        &self.delta[self.link(m, k)]
    }
}

/// Received UL pilot `y_m[t_s] = sum_{i in slot} sqrt(p~) h_mi[t_s] + n`, pilot symbol 1.
#[allow(clippy::too_many_arguments)]
pub fn receive_ul_pilot<R: Rng + ?Sized>(
    block: &ChannelBlock,
    topology: &Topology,
    timeline: &Timeline,
    m: usize,
    slot: usize,
    pilot_power: f64,
    noise_power: f64,
    rng: &mut R,
) -> Result<CVec> {
    let n = topology.antennas;
    let t = timeline.ul_instant(slot);
    let sigma = noise_power.sqrt();
    let mut y = CVec::from_fn(n, |_, _| complex_normal(rng) * sigma);
    for &i in &topology.slot_members[slot] {
        y += block.channel_at(m, i, t)?.scale(pilot_power.sqrt());
    }
    Ok(y)
}

/// LMMSE estimate `h^_mk[lambda] = Delta_mk y` and its covariance.
pub fn ul_lmmse<'a>(y: &CVec, stats: &'a UlStatistics, m: usize, k: usize) -> (CVec, &'a CMat) {
    (stats.delta(m, k) * y, stats.r_hat(m, k))
}

/// Per-trial UL estimates of every link.
#[derive(Debug, Clone)]
pub struct UlEstimate {
    antennas: usize,
    num_ues: usize,
    tau_u: usize,
    /// Received pilots, `(m * tau_u + slot) * N + a`.
    pub obs: Vec<Complex64>,
    /// `h^_mk`, `(m * K + k) * N + a`.
    pub h_hat: Vec<Complex64>,
}

impl UlEstimate {
    /// Noise comes from the `UlNoise` stream of `key`, drawn AP by AP, slot by slot.
    pub fn compute(
        block: &ChannelBlock,
        topology: &Topology,
        timeline: &Timeline,
        stats: &UlStatistics,
        key: StreamKey,
    ) -> Result<Self> {
        let (m_count, k_count, n, tau_u) = (topology.num_aps, topology.num_ues, topology.antennas, topology.tau_u);
        let mut rng = key.purpose(Purpose::UlNoise).rng();
        let mut obs = Vec::with_capacity(m_count * tau_u * n);
        let mut h_hat = vec![Complex64::new(0.0, 0.0); m_count * k_count * n];
        for m in 0..m_count {
            let base = obs.len();
            for slot in 0..tau_u {
                let y = receive_ul_pilot(
                    block,
                    topology,
                    timeline,
                    m,
                    slot,
                    stats.pilot_power,
                    stats.noise_power,
                    &mut rng,
                )?;
                obs.extend_from_slice(y.as_slice());
            }
            for k in 0..k_count {
                let slot = topology.pilot_index[k];
                let y = &obs[base + slot * n..base + (slot + 1) * n];
                let d = stats.delta(m, k);
                let out = &mut h_hat[(m * k_count + k) * n..(m * k_count + k + 1) * n];
                for a in 0..n {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for b in 0..n {
                        acc += d[(a, b)] * y[b];
                    }
                    out[a] = acc;
                }
            }
        }
        Ok(UlEstimate {
            antennas: n,
            num_ues: k_count,
            tau_u,
            obs,
            h_hat,
        })
    }

    #[inline]
    pub fn h_hat(&self, m: usize, k: usize) -> &[Complex64] {
        let at = (m * self.num_ues + k) * self.antennas;
        &self.h_hat[at..at + self.antennas]
    }

    pub fn obs(&self, m: usize, slot: usize) -> &[Complex64] {
        let at = (m * self.tau_u + slot) * self.antennas;
        &self.obs[at..at + self.antennas]
    }
}

/// `tr(Lambda_mki R^_mk)` with `Lambda_mki = R_bar_mi R_bar_mk^{-1}` for
/// pilot-sharing `i` and 0 otherwise.
///
/// For equal UL-pilot correlation of `i` and `k` this equals
/// `sqrt(p~) rho tr(Delta_mi R_bar_mk)`, the form used by the DL statistics.
pub fn lambda_coupling(topology: &Topology, stats: &UlStatistics, m: usize, k: usize, i: usize) -> Result<Complex64> {
    if topology.pilot_index[i] != topology.pilot_index[k] {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let rk = &topology.r_bar[topology.idx(m, k)];
    let scale = rk.diagonal().iter().map(|z| z.re).fold(0.0, f64::max);
    let (vals, _) = psd_eigen(rk, scale.max(f64::MIN_POSITIVE))?;
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 1e-12 * scale) {
        return Err(Error::Statistics(format!(
            "R_bar is singular for AP {m}, UE {k}; Lambda undefined"
        )));
    }
    let inv = inverse_hpd(rk)?;
    let lambda = &topology.r_bar[topology.idx(m, i)] * inv;
    Ok(trace_product(&lambda, stats.r_hat(m, k)))
}
