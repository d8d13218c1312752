//! Maximum-ratio common and private precoders with statistical normalization.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::real_trace;
use crate::topology::Topology;
use crate::ul::{UlEstimate, UlStatistics};

/// `(p_common, p_private)` of an AP serving `cluster_ue_count` UEs.
pub fn power_split(t_m: f64, p_max: f64, cluster_ue_count: usize) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&t_m) {
        return Err(Error::Config(format!("power split {t_m} outside [0, 1]")));
    }
    if cluster_ue_count == 0 {
        return Err(Error::Config("power split for a cluster without UEs".into()));
    }
    Ok(((1.0 - t_m) * p_max, t_m * p_max / cluster_ue_count as f64))
}

/// Drop-level normalization and power allocation.
#[derive(Debug, Clone)]
pub struct PrecoderStatistics {
    pub num_ues: usize,
    /// Per AP.
    pub p_common: Vec<f64>,
    /// Per AP (equal over the UEs it serves).
    pub p_private: Vec<f64>,
    /// eta^c per AP (for the AP's own cluster).
    pub eta_common: Vec<f64>,
    /// eta^p per link; zero for UEs outside the AP's cluster.
    pub eta_private: Vec<f64>,
}

impl PrecoderStatistics {
    pub fn new(topology: &Topology, ul: &UlStatistics, t_m: f64, p_max: f64) -> Result<Self> {
        let (m_count, k_count) = (topology.num_aps, topology.num_ues);
        let mut p_common = Vec::with_capacity(m_count);
        let mut p_private = Vec::with_capacity(m_count);
        let mut eta_common = Vec::with_capacity(m_count);
        let mut eta_private = vec![0.0; m_count * k_count];
        for m in 0..m_count {
            let l = topology.cluster_of_ap[m];
            let ues = &topology.cluster_ues[l];
            let (pc, pp) = power_split(t_m, p_max, ues.len())?;
            p_common.push(pc);
            p_private.push(pp);
            let mut total = 0.0;
            for &k in ues {
                let tr = real_trace(ul.r_hat(m, k));
                if !(tr > 0.0) {
                    return Err(Error::Normalization { m, k });
                }
                eta_private[m * k_count + k] = 1.0 / tr;
                total += tr;
            }
            eta_common.push(1.0 / total);
        }
        Ok(PrecoderStatistics {
            num_ues: k_count,
            p_common,
            p_private,
            eta_common,
            eta_private,
        })
    }

    /// Amplitude `sqrt(p^c eta^c)` applied to the summed estimates at AP `m`.
    #[inline]
    pub fn common_coeff(&self, m: usize) -> f64 {
        (self.p_common[m] * self.eta_common[m]).sqrt()
    }

    /// Amplitude `sqrt(p^p eta^p)` applied to `h^_mk` at AP `m`.
    #[inline]
    pub fn private_coeff(&self, m: usize, k: usize) -> f64 {
        (self.p_private[m] * self.eta_private[m * self.num_ues + k]).sqrt()
    }
}

/// `v^p_mk = sqrt(eta^p_mk) h^_mk`.
pub fn build_private_precoder(ul: &UlEstimate, stats: &PrecoderStatistics, m: usize, k: usize) -> Vec<Complex64> {
    let s = stats.eta_private[m * stats.num_ues + k].sqrt();
    ul.h_hat(m, k).iter().map(|h| h * s).collect()
}

/// `v^c_lm = sqrt(eta^c_lm) sum_{i in K_l} h^_mi` for the cluster of AP `m`.
pub fn build_common_precoder(
    ul: &UlEstimate,
    topology: &Topology,
    stats: &PrecoderStatistics,
    m: usize,
) -> Vec<Complex64> {
    let n = topology.antennas;
    let s = stats.eta_common[m].sqrt();
    let mut v = vec![Complex64::new(0.0, 0.0); n];
    for &i in &topology.cluster_ues[topology.cluster_of_ap[m]] {
        for (acc, h) in v.iter_mut().zip(ul.h_hat(m, i)) {
            *acc += h;
        }
    }
    v.iter_mut().for_each(|x| *x *= s);
    v
}

/// Per-trial precoders of every AP.
///
/// `columns[m]` holds the power-scaled transmit directions of AP `m`,
/// column-major with `N` rows: column 0 is `sqrt(p^c) v^c`, column `1 + j` is
/// `sqrt(p^p) v^p` for the `j`-th UE of the AP's cluster.
#[derive(Debug, Clone)]
pub struct PrecoderSet {
    pub antennas: usize,
    pub v_common: Vec<Vec<Complex64>>,
    /// `v_private[m][j]`, `j` indexing `cluster_ues` of the AP's cluster.
    pub v_private: Vec<Vec<Vec<Complex64>>>,
    pub columns: Vec<Vec<Complex64>>,
}

impl PrecoderSet {
    pub fn build(topology: &Topology, ul: &UlEstimate, stats: &PrecoderStatistics) -> Self {
        let n = topology.antennas;
        let mut v_common = Vec::with_capacity(topology.num_aps);
        let mut v_private = Vec::with_capacity(topology.num_aps);
        let mut columns = Vec::with_capacity(topology.num_aps);
        for m in 0..topology.num_aps {
            let ues = &topology.cluster_ues[topology.cluster_of_ap[m]];
            let vc = build_common_precoder(ul, topology, stats, m);
            let vp: Vec<Vec<Complex64>> = ues.iter().map(|&k| build_private_precoder(ul, stats, m, k)).collect();
            let mut cols = Vec::with_capacity(n * (1 + ues.len()));
            let sc = stats.p_common[m].sqrt();
            cols.extend(vc.iter().map(|x| x * sc));
            let sp = stats.p_private[m].sqrt();
            for v in &vp {
                cols.extend(v.iter().map(|x| x * sp));
            }
            v_common.push(vc);
            v_private.push(vp);
            columns.push(cols);
        }
        PrecoderSet {
            antennas: n,
            v_common,
            v_private,
            columns,
        }
    }

    /// Power-scaled column `c` of AP `m`.
    #[inline]
    pub fn column(&self, m: usize, c: usize) -> &[Complex64] {
        &self.columns[m][c * self.antennas..(c + 1) * self.antennas]
    }

    pub fn num_columns(&self, m: usize) -> usize {
        self.columns[m].len() / self.antennas
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_split_examples() {
        let (c, p) = power_split(0.05, 1.0, 4).unwrap();
        assert!((c - 0.95).abs() < 1e-15 && (p - 0.0125).abs() < 1e-15);
        assert_eq!(power_split(1.0, 2.0, 4).unwrap(), (0.0, 0.5));
        assert_eq!(power_split(0.0, 2.0, 4).unwrap(), (2.0, 0.0));
        assert!(power_split(0.5, 1.0, 0).is_err());
        assert!(power_split(1.5, 1.0, 2).is_err());
    }
}
