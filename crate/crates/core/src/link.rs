//! Data phase: SIC decoding chain, SINR term decomposition and ergodic SE.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{ChannelBlock, InstantPlan, RhoTable};
use crate::config::{Mode, SimConfig, Timeline};
use crate::dl::{
    compare_statistics, observe_dl_pilots, project_all, DlEstimate, DlObservation, DlOracle, DlStatistics,
    EffectiveChannels, OracleReport, StatsSource,
};
use crate::error::{Error, Result};
use crate::precoding::{PrecoderSet, PrecoderStatistics};
use crate::rng::{complex_normal, unit_symbol, Purpose, StreamKey};
use crate::topology::{drop_network, Topology};
use crate::ul::{UlEstimate, UlStatistics};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
/// Child coordinate separating per-realization trial streams from drop-level ones.
const TRIAL_BRANCH: u64 = 0x5452_4941_4c53;

/// Everything fixed within one network drop.
#[derive(Debug, Clone)]
pub struct DropModel {
    pub config: SimConfig,
    pub drop_index: u64,
    pub key: StreamKey,
    pub topology: Topology,
    pub timeline: Timeline,
    pub rho: RhoTable,
    pub ul: UlStatistics,
    pub precoding: PrecoderStatistics,
    pub dl: DlStatistics,
    pub pilot_plan: InstantPlan,
    pub data_plan: InstantPlan,
}

impl DropModel {
    pub fn new(config: &SimConfig, drop_index: u64) -> Result<Self> {
        let topology = drop_network(config, drop_index)?;
        Self::with_topology(config, topology, drop_index)
    }

    pub fn with_topology(config: &SimConfig, topology: Topology, drop_index: u64) -> Result<Self> {
        config.validate()?;
        let timeline = Timeline::new(config, topology.max_cluster_ues())?;
        let rho = RhoTable::new(config, &timeline);
        let ul = UlStatistics::new(config, &topology, &timeline, &rho)?;
        let precoding = PrecoderStatistics::new(&topology, &ul, config.effective_power_split(), config.p_max_w())?;
        let dl = DlStatistics::closed_form(config, &topology, &timeline, &rho, &ul, &precoding)?;
        let pilot_plan = InstantPlan::new(&topology, &timeline, false);
        let data_plan = InstantPlan::new(&topology, &timeline, true);
        Ok(DropModel {
            config: config.clone(),
            drop_index,
            key: StreamKey::root(config.seed).child(drop_index),
            topology,
            timeline,
            rho,
            ul,
            precoding,
            dl,
            pilot_plan,
            data_plan,
        })
    }

    pub fn trial_key(&self, realization: u64) -> StreamKey {
        self.key.child(TRIAL_BRANCH).child(realization)
    }

    /// Full trial including data instants.
    pub fn realization(&self, realization: u64) -> Result<Realization<'_>> {
        Realization::new(self, self.trial_key(realization), &self.data_plan)
    }

    /// Trial restricted to the training phase, keyed separately from the data trials.
    pub fn training_trial(&self, sample: u64) -> Result<Realization<'_>> {
        Realization::new(self, self.key.purpose(Purpose::Oracle).child(sample), &self.pilot_plan)
    }

    /// Sample statistics of the DL effective channels over `samples` trials.
    /// Estimates inside the report use the model's current statistics.
    pub fn dl_oracle(&self, samples: usize) -> Result<OracleReport> {
        if samples < crate::dl::ORACLE_BATCHES {
            return Err(Error::Config(format!(
                "oracle needs at least {} samples",
                crate::dl::ORACLE_BATCHES
            )));
        }
        let mut oracle = DlOracle::new(self.topology.num_ues, self.topology.num_clusters);
        let chunk = 256;
        let mut start = 0;
        while start < samples {
            let end = (start + chunk).min(samples);
            let trials: Vec<Realization> = (start..end)
                .into_par_iter()
                .map(|s| self.training_trial(s as u64))
                .collect::<Result<_>>()?;
            for (offset, tr) in trials.iter().enumerate() {
                oracle.push(start + offset, &tr.anchor, &tr.obs, &tr.dl);
            }
            start = end;
        }
        Ok(oracle.finish())
    }

    /// Replaces the closed-form DL statistics with oracle estimates.
    pub fn use_oracle_statistics(&mut self, report: &OracleReport) {
        self.dl = DlStatistics::from_oracle(report, &self.timeline);
    }
}

/// One channel/noise realization of a drop.
#[derive(Debug, Clone)]
pub struct Realization<'a> {
    pub model: &'a DropModel,
    pub key: StreamKey,
    pub block: ChannelBlock,
    pub ul: UlEstimate,
    pub precoders: PrecoderSet,
    pub anchor: EffectiveChannels,
    pub obs: DlObservation,
    pub dl: DlEstimate,
}

/// Desired term and the five distortion terms of one decoded stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamTerms {
    pub desired: Complex64,
    /// Estimation error, aging, interference, residual MCI / private signals, noise.
    pub distortion: [Complex64; 5],
}

impl StreamTerms {
    pub fn total(&self) -> Complex64 {
        self.desired + self.distortion.iter().sum::<Complex64>()
    }
}

/// Term decompositions of UE `ue` at instant `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinrTerms {
    pub ue: usize,
    pub t: usize,
    /// Absent without a common stream (SDMA).
    pub common: Option<StreamTerms>,
    pub private: StreamTerms,
    /// Signal the common stream is decoded from (after removing estimated
    /// common streams of other clusters).
    pub y_common: Complex64,
    /// Signal the private stream is decoded from.
    pub y_private: Complex64,
    /// Raw received signal.
    pub y: Complex64,
}

/// `|N|^2 / sum |D_i|^2`.
pub fn sinr(terms: &StreamTerms) -> Result<f64> {
    let den: f64 = terms.distortion.iter().map(|d| d.norm_sqr()).sum();
    if !(den > 0.0) {
        return Err(Error::Numeric("SINR denominator is zero".into()));
    }
    Ok(terms.desired.norm_sqr() / den)
}

struct Scratch {
    z_common: Vec<Complex64>,
    z_private: Vec<Complex64>,
    x_common: Vec<Complex64>,
    x_private: Vec<Complex64>,
    noise: Vec<Complex64>,
}

impl<'a> Realization<'a> {
    pub fn new(model: &'a DropModel, key: StreamKey, plan: &InstantPlan) -> Result<Self> {
        let topo = &model.topology;
        let block = ChannelBlock::sample(topo, plan, &model.rho, key);
        let ul = UlEstimate::compute(&block, topo, &model.timeline, &model.ul, key)?;
        let precoders = PrecoderSet::build(topo, &ul, &model.precoding);
        let anchor = EffectiveChannels::at_anchor(&block, topo, &precoders);
        let obs = observe_dl_pilots(
            &block,
            topo,
            &model.timeline,
            &precoders,
            &anchor,
            model.config.noise_w(),
            key,
        )?;
        let dl = DlEstimate::compute(&model.dl, &obs);
        Ok(Realization {
            model,
            key,
            block,
            ul,
            precoders,
            anchor,
            obs,
            dl,
        })
    }

    fn scratch(&self) -> Scratch {
        let (k, l) = (self.model.topology.num_ues, self.model.topology.num_clusters);
        Scratch {
            z_common: vec![ZERO; l],
            z_private: vec![ZERO; k],
            x_common: vec![ZERO; l],
            x_private: vec![ZERO; k],
            noise: vec![ZERO; k],
        }
    }

    /// Symbols of every stream and receiver noise of every UE at `t`.
    fn draw_instant(&self, t: usize, s: &mut Scratch) {
        let mut rng = self.key.purpose(Purpose::Symbols).child(t as u64).rng();
        for x in s.x_common.iter_mut().chain(s.x_private.iter_mut()) {
            *x = unit_symbol(&mut rng);
        }
        let sigma = self.model.config.noise_w().sqrt();
        let mut rng = self.key.purpose(Purpose::DataNoise).child(t as u64).rng();
        for n in s.noise.iter_mut() {
            *n = complex_normal(&mut rng) * sigma;
        }
    }

    fn terms_for(&self, k: usize, t: usize, s: &mut Scratch) -> Result<SinrTerms> {
        let model = self.model;
        let topo = &model.topology;
        let l = topo.cluster_of_ue[k];
        let (rho, rho_bar) = if t == self.block.lambda() {
            s.z_common.iter_mut().for_each(|z| *z = ZERO);
            s.z_private.iter_mut().for_each(|z| *z = ZERO);
            (1.0, 0.0)
        } else {
            let pos = self
                .block
                .plan()
                .position(k, t)
                .ok_or_else(|| Error::InstantOutOfRange {
                    t,
                    available: format!("data instants {:?}", model.timeline.data_instants()),
                })?;
            project_all(
                topo,
                &self.precoders,
                |m| self.block.innovation_at(m, k, pos),
                &mut s.z_common,
                &mut s.z_private,
            );
            self.block.rho_at(k, pos)
        };
        let a_c = |c: usize| self.anchor.common(k, c) * rho + s.z_common[c] * rho_bar;
        let a_p = |j: usize| self.anchor.private(k, j) * rho + s.z_private[j] * rho_bar;

        let mut y = s.noise[k];
        for c in 0..topo.num_clusters {
            y += a_c(c) * s.x_common[c];
        }
        let mut all_private = ZERO;
        let mut other_private = ZERO;
        for j in 0..topo.num_ues {
            let v = a_p(j) * s.x_private[j];
            all_private += v;
            if j != k {
                other_private += v;
            }
        }
        y += all_private;

        let has_common = model.config.mode != Mode::Sdma;
        let mut residual_mci = ZERO;
        let mut sic_common = ZERO;
        if has_common {
            for c in (0..topo.num_clusters).filter(|&c| c != l) {
                let est = self.dl.common(k, c);
                residual_mci += (a_c(c) - est) * s.x_common[c];
                sic_common += est * s.x_common[c];
            }
        }
        let y_common = y - sic_common;
        let common = has_common.then(|| {
            let est = self.dl.common(k, l);
            let x = s.x_common[l];
            StreamTerms {
                desired: est * x * rho,
                distortion: [
                    (self.anchor.common(k, l) - est) * x * rho,
                    s.z_common[l] * x * rho_bar,
                    residual_mci,
                    all_private,
                    s.noise[k],
                ],
            }
        });
        let y_private = if has_common {
            y_common - a_c(l) * s.x_common[l]
        } else {
            y
        };
        let est = self.dl.a_hat_private[k];
        let x = s.x_private[k];
        let private = StreamTerms {
            desired: est * x * rho,
            distortion: [
                (self.anchor.private(k, k) - est) * x * rho,
                s.z_private[k] * x * rho_bar,
                other_private,
                residual_mci,
                s.noise[k],
            ],
        };
        Ok(SinrTerms {
            ue: k,
            t,
            common,
            private,
            y_common,
            y_private,
            y,
        })
    }

    /// SINR term decompositions of every UE at data instant `t`.
    pub fn simulate_instant(&self, t: usize) -> Result<Vec<SinrTerms>> {
        let mut s = self.scratch();
        self.draw_instant(t, &mut s);
        (0..self.model.topology.num_ues)
            .map(|k| self.terms_for(k, t, &mut s))
            .collect()
    }

    /// `log2(1 + SINR)` of every (UE, data instant): `(common, private)`,
    /// each laid out `[k * T + (t - lambda)]`.
    pub fn instant_se(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let tl = &self.model.timeline;
        let k_count = self.model.topology.num_ues;
        let t_count = tl.num_data_instants();
        let mut common = vec![0.0; k_count * t_count];
        let mut private = vec![0.0; k_count * t_count];
        let mut s = self.scratch();
        for (ti, t) in tl.data_instants().enumerate() {
            self.draw_instant(t, &mut s);
            for k in 0..k_count {
                let terms = self.terms_for(k, t, &mut s)?;
                if let Some(c) = &terms.common {
                    common[k * t_count + ti] = sinr(c)?.ln_1p() / std::f64::consts::LN_2;
                }
                private[k * t_count + ti] = sinr(&terms.private)?.ln_1p() / std::f64::consts::LN_2;
            }
        }
        Ok((common, private))
    }
}

/// Time average over the block: `(1 / tau_c) sum_t x[t]`.
pub fn block_average(per_instant: &[f64], tau_c: usize) -> f64 {
    per_instant.iter().sum::<f64>() / tau_c as f64
}

/// SE of one drop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropSe {
    pub drop: u64,
    pub se_sum: f64,
    pub se_common: f64,
    pub se_private: f64,
    pub se_common_per_cluster: Vec<f64>,
    /// Block-averaged common SE each UE could decode at.
    pub se_common_per_ue: Vec<f64>,
    pub se_private_per_ue: Vec<f64>,
    pub stats_source: StatsSource,
}

/// Combines per-(UE, instant) mean SE into the drop's SE. The common SE of a
/// cluster at each instant is the minimum over its UEs of their mean SE.
pub fn drop_se(topology: &Topology, tau_c: usize, t_count: usize, common_mean: &[f64], private_mean: &[f64]) -> DropSe {
    let k_count = topology.num_ues;
    let row = |v: &[f64], k: usize| v[k * t_count..(k + 1) * t_count].to_vec();
    let se_common_per_cluster: Vec<f64> = topology
        .cluster_ues
        .iter()
        .map(|ues| {
            let per_t: Vec<f64> = (0..t_count)
                .map(|ti| {
                    ues.iter()
                        .map(|&k| common_mean[k * t_count + ti])
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            if ues.is_empty() {
                0.0
            } else {
                block_average(&per_t, tau_c)
            }
        })
        .collect();
    let se_common_per_ue: Vec<f64> = (0..k_count)
        .map(|k| block_average(&row(common_mean, k), tau_c))
        .collect();
    let se_private_per_ue: Vec<f64> = (0..k_count)
        .map(|k| block_average(&row(private_mean, k), tau_c))
        .collect();
    let se_common: f64 = se_common_per_cluster.iter().sum();
    let se_private: f64 = se_private_per_ue.iter().sum();
    DropSe {
        drop: 0,
        se_sum: se_common + se_private,
        se_common,
        se_private,
        se_common_per_cluster,
        se_common_per_ue,
        se_private_per_ue,
        stats_source: StatsSource::ClosedForm,
    }
}

/// What to do when verified DL statistics disagree with the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MismatchPolicy {
    #[default]
    Fail,
    /// Continue with oracle-estimated statistics and flag the drop.
    Fallback,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the ambient rayon pool.
    pub threads: Option<usize>,
    /// Verify each drop's closed-form DL statistics against this many oracle trials.
    pub verify_samples: Option<usize>,
    pub on_mismatch: MismatchPolicy,
}

/// Mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Ergodic SE averaged over drops.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeReport {
    pub mode: Mode,
    pub config_hash: String,
    pub drops: usize,
    pub realizations: usize,
    pub tau_c: usize,
    pub se_sum: f64,
    pub se_sum_stderr: f64,
    pub se_common: f64,
    pub se_common_stderr: f64,
    pub se_private: f64,
    pub se_private_stderr: f64,
    pub se_common_per_cluster: Vec<f64>,
    pub se_common_per_cluster_stderr: Vec<f64>,
    pub se_private_per_ue: Vec<f64>,
    pub se_private_per_ue_stderr: Vec<f64>,
    /// `bandwidth * se_sum` in bit/s.
    pub sum_throughput_bps: f64,
    pub per_drop: Vec<DropSe>,
    /// Drops whose closed-form statistics were replaced by oracle estimates.
    pub stats_flags: Vec<String>,
}

impl SeReport {
    fn from_drops(config: &SimConfig, per_drop: Vec<DropSe>, stats_flags: Vec<String>) -> Self {
        let col = |f: &dyn Fn(&DropSe) -> f64| mean_stderr(&per_drop.iter().map(f).collect::<Vec<_>>());
        let per_entity = |len: usize, f: &dyn Fn(&DropSe, usize) -> f64| {
            let (mut m, mut s) = (Vec::with_capacity(len), Vec::with_capacity(len));
            for i in 0..len {
                let (a, b) = mean_stderr(&per_drop.iter().map(|d| f(d, i)).collect::<Vec<_>>());
                m.push(a);
                s.push(b);
            }
            (m, s)
        };
        let (se_sum, se_sum_stderr) = col(&|d| d.se_sum);
        let (se_common, se_common_stderr) = col(&|d| d.se_common);
        let (se_private, se_private_stderr) = col(&|d| d.se_private);
        let (cc, ccs) = per_entity(config.num_clusters, &|d, i| d.se_common_per_cluster[i]);
        let (pu, pus) = per_entity(config.num_ues, &|d, i| d.se_private_per_ue[i]);
        SeReport {
            mode: config.mode,
            config_hash: config.hash_hex(),
            drops: per_drop.len(),
            realizations: config.realizations,
            tau_c: config.tau_c,
            se_sum,
            se_sum_stderr,
            se_common,
            se_common_stderr,
            se_private,
            se_private_stderr,
            se_common_per_cluster: cc,
            se_common_per_cluster_stderr: ccs,
            se_private_per_ue: pu,
            se_private_per_ue_stderr: pus,
            sum_throughput_bps: se_sum * config.bandwidth_hz,
            per_drop,
            stats_flags,
        }
    }
}

/// Mean and standard error of the per-drop difference `a - b` of sum SE.
/// Both runs must use the same seed and drop count.
pub fn paired_difference(a: &SeReport, b: &SeReport) -> Result<(f64, f64)> {
    if a.per_drop.len() != b.per_drop.len() {
        return Err(Error::Config("paired runs differ in drop count".into()));
    }
    let diff: Vec<f64> = a
        .per_drop
        .iter()
        .zip(&b.per_drop)
        .map(|(x, y)| x.se_sum - y.se_sum)
        .collect();
    Ok(mean_stderr(&diff))
}

/// SE of a single drop, averaged over `config.realizations` trials.
pub fn drop_ergodic_se(model: &DropModel) -> Result<DropSe> {
    let tl = &model.timeline;
    let (k_count, t_count) = (model.topology.num_ues, tl.num_data_instants());
    let per_trial: Vec<(Vec<f64>, Vec<f64>)> = (0..model.config.realizations as u64)
        .into_par_iter()
        .map(|r| model.realization(r)?.instant_se())
        .collect::<Result<_>>()?;
    let mut common = vec![0.0; k_count * t_count];
    let mut private = vec![0.0; k_count * t_count];
    for (c, p) in &per_trial {
        common.iter_mut().zip(c).for_each(|(acc, v)| *acc += v);
        private.iter_mut().zip(p).for_each(|(acc, v)| *acc += v);
    }
    let n = per_trial.len() as f64;
    common.iter_mut().for_each(|v| *v /= n);
    private.iter_mut().for_each(|v| *v /= n);
    let mut se = drop_se(&model.topology, tl.tau_c, t_count, &common, &private);
    se.drop = model.drop_index;
    se.stats_source = model.dl.source;
    Ok(se)
}

/// Monte Carlo ergodic SE over `config.drops` drops.
pub fn ergodic_se(config: &SimConfig, options: &RunOptions) -> Result<SeReport> {
    config.validate()?;
    if config.drops == 0 || config.realizations == 0 {
        return Err(Error::Config("drops and realizations must be at least 1".into()));
    }
    with_threads(options.threads, || {
        let mut per_drop = Vec::with_capacity(config.drops);
        let mut flags = Vec::new();
        for d in 0..config.drops as u64 {
            let mut model = DropModel::new(config, d)?;
            if let Some(samples) = options.verify_samples {
                let report = model.dl_oracle(samples)?;
                let cmp = compare_statistics(&model.dl, &report);
                if let Some(bad) = cmp.iter().find(|c| !c.pass) {
                    match options.on_mismatch {
                        MismatchPolicy::Fail => {
                            return Err(Error::StatsMismatch {
                                name: format!("drop {d}: {}", bad.name),
                                closed: bad.closed,
                                oracle: bad.oracle,
                                rel: bad.rel,
                            })
                        }
                        MismatchPolicy::Fallback => {
                            flags.push(format!(
                                "drop {d}: {} closed {:.6e} oracle {:.6e}; oracle statistics used",
                                bad.name, bad.closed, bad.oracle
                            ));
                            model.use_oracle_statistics(&report);
                        }
                    }
                }
            }
            per_drop.push(drop_ergodic_se(&model)?);
        }
        Ok(SeReport::from_drops(config, per_drop, flags))
    })
}

/// Runs `f` inside a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?
            .install(f),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SimConfig {
        SimConfig {
            num_aps: 4,
            antennas_per_ap: 2,
            num_ues: 4,
            num_clusters: 2,
            tau_c: 24,
            drops: 2,
            realizations: 4,
            ..SimConfig::default()
        }
    }

    #[test]
    fn reconstruction_identity() {
        let model = DropModel::new(&tiny(), 0).unwrap();
        let r = model.realization(0).unwrap();
        for t in model.timeline.data_instants() {
            for s in r.simulate_instant(t).unwrap() {
                let c = s.common.unwrap();
                assert!((c.total() - s.y_common).norm() <= 1e-10 * s.y_common.norm());
                assert!((s.private.total() - s.y_private).norm() <= 1e-10 * s.y_private.norm());
            }
        }
    }

    #[test]
    fn sinr_examples() {
        let z = StreamTerms {
            desired: ZERO,
            distortion: [ZERO, ZERO, ZERO, ZERO, Complex64::new(0.5, 0.0)],
        };
        assert_eq!(sinr(&z).unwrap(), 0.0);
        let one = StreamTerms {
            desired: Complex64::new(0.0, 0.5),
            ..z
        };
        assert!((sinr(&one).unwrap() - 1.0).abs() < 1e-15);
        let zero_den = StreamTerms {
            desired: Complex64::new(1.0, 0.0),
            distortion: [ZERO; 5],
        };
        assert!(sinr(&zero_den).is_err());
    }

    #[test]
    fn block_average_weight() {
        let per_t = vec![2.0; 30];
        assert_eq!(block_average(&per_t, 40), 1.5);
        assert_eq!(block_average(&per_t, 80), 0.75);
    }

    #[test]
    fn cluster_common_se_is_min_of_members() {
        let model = DropModel::new(&tiny(), 1).unwrap();
        let se = drop_ergodic_se(&model).unwrap();
        for (l, ues) in model.topology.cluster_ues.iter().enumerate() {
            for &k in ues {
                assert!(se.se_common_per_cluster[l] <= se.se_common_per_ue[k] + 1e-15);
            }
        }
        let recomposed: f64 = se.se_common_per_cluster.iter().sum::<f64>() + se.se_private_per_ue.iter().sum::<f64>();
        assert!((recomposed - se.se_sum).abs() < 1e-12);
    }

    #[test]
    fn zero_trials_rejected() {
        let cfg = SimConfig {
            realizations: 0,
            ..tiny()
        };
        assert!(matches!(
            ergodic_se(&cfg, &RunOptions::default()),
            Err(Error::Config(_))
        ));
    }
}
