//! DL training: effective channels, pilot observations and the scalar LMMSE
//! estimators of the common and private effective channels.
//!
//! Each effective channel is a sum `a = sum_(m,i) c_mi h_mk^H Delta_mi y_m[s_i]`
//! of AP-side precoder projections. Its first and second moments have exact
//! closed forms in terms of the UL statistics:
//!
//! * mean: `sum c_mi [s_i = s_k] sqrt(p~) rho_k tr(Delta_mi R_bar_mk)`
//! * variance at the anchor: `sum c_mi^2 (tr(R^_mi R_bar_mk) - [s_i = s_k] p~ rho_k^2 |h_bar^H Delta_mi h_bar|^2)`
//! * variance of the aging innovation projection: `sum c_mi^2 tr(R^_mi R_bar_mk)`
//!
//! Terms belonging to different APs, or to different pilot slots at one AP,
//! are uncorrelated, so the sums are exact.

use num_complex::Complex64;

use crate::channel::{ChannelBlock, RhoTable};
use crate::config::{SimConfig, Timeline};
use crate::error::{Error, Result};
use crate::linalg::{dotc, quad_form, trace_product};
use crate::precoding::{PrecoderSet, PrecoderStatistics};
use crate::rng::{complex_normal, Purpose, StreamKey};
use crate::topology::Topology;
use crate::ul::UlStatistics;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Which precoded stream an effective channel refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    /// Common stream of a cluster.
    Common(usize),
    /// Private stream of a UE.
    Private(usize),
}

/// Column of AP `m`'s precoder matrix carrying `kind`, if AP `m` transmits it.
pub fn column_of(topology: &Topology, m: usize, kind: StreamKind) -> Option<usize> {
    let l = topology.cluster_of_ap[m];
    match kind {
        StreamKind::Common(c) => (c == l).then_some(0),
        StreamKind::Private(i) => topology.cluster_ues[l].iter().position(|&u| u == i).map(|p| p + 1),
    }
}

/// `a[t] = sum_m h_mk[t]^H (power-scaled precoder of `kind` at AP m)` from the
/// channel at instant `t`.
pub fn effective_channel(
    block: &ChannelBlock,
    precoders: &PrecoderSet,
    topology: &Topology,
    k: usize,
    t: usize,
    kind: StreamKind,
) -> Result<Complex64> {
    let mut acc = ZERO;
    for m in 0..topology.num_aps {
        if let Some(c) = column_of(topology, m, kind) {
            let h = block.channel_at(m, k, t)?;
            acc += dotc(h.as_slice(), precoders.column(m, c));
        }
    }
    Ok(acc)
}

/// Effective channels of every stream towards every UE at one instant (or
/// projections of the innovations, depending on the source vectors).
#[derive(Debug, Clone)]
pub struct EffectiveChannels {
    pub num_clusters: usize,
    pub num_ues: usize,
    /// `[k * L + l]`.
    pub common: Vec<Complex64>,
    /// `[k * K + j]`.
    pub private: Vec<Complex64>,
}

impl EffectiveChannels {
    fn zeros(num_clusters: usize, num_ues: usize) -> Self {
        EffectiveChannels {
            num_clusters,
            num_ues,
            common: vec![ZERO; num_ues * num_clusters],
            private: vec![ZERO; num_ues * num_ues],
        }
    }

    /// Anchor effective channels `a[lambda]`.
    pub fn at_anchor(block: &ChannelBlock, topology: &Topology, precoders: &PrecoderSet) -> Self {
        let mut out = Self::zeros(topology.num_clusters, topology.num_ues);
        for k in 0..topology.num_ues {
            let (c, p) = out.split_ue(k);
            project_all(topology, precoders, |m| block.anchor(m, k), c, p);
        }
        out
    }

    fn split_ue(&mut self, k: usize) -> (&mut [Complex64], &mut [Complex64]) {
        let (l, kk) = (self.num_clusters, self.num_ues);
        (
            &mut self.common[k * l..(k + 1) * l],
            &mut self.private[k * kk..(k + 1) * kk],
        )
    }

    #[inline]
    pub fn common(&self, k: usize, l: usize) -> Complex64 {
        self.common[k * self.num_clusters + l]
    }

    #[inline]
    pub fn private(&self, k: usize, j: usize) -> Complex64 {
        self.private[k * self.num_ues + j]
    }
}

/// Accumulates `x_m^H columns_m` over all APs into per-cluster common and
/// per-UE private slots.
#[inline]
pub(crate) fn project_all<'a>(
    topology: &Topology,
    precoders: &PrecoderSet,
    source: impl Fn(usize) -> &'a [Complex64],
    common: &mut [Complex64],
    private: &mut [Complex64],
) {
    common.iter_mut().for_each(|x| *x = ZERO);
    private.iter_mut().for_each(|x| *x = ZERO);
    let n = precoders.antennas;
    for m in 0..topology.num_aps {
        let x = source(m);
        let l = topology.cluster_of_ap[m];
        let cols = &precoders.columns[m];
        common[l] += dotc(x, &cols[..n]);
        for (j, &ue) in topology.cluster_ues[l].iter().enumerate() {
            private[ue] += dotc(x, &cols[(j + 1) * n..(j + 2) * n]);
        }
    }
}

/// Projection `sum_{m transmitting kind} x_m^H column` for a single stream.
fn project_stream<'a>(
    topology: &Topology,
    precoders: &PrecoderSet,
    source: impl Fn(usize) -> &'a [Complex64],
    kind: StreamKind,
) -> Complex64 {
    let cluster = match kind {
        StreamKind::Common(l) => l,
        StreamKind::Private(i) => topology.cluster_of_ue[i],
    };
    let mut acc = ZERO;
    for &m in &topology.cluster_aps[cluster] {
        if let Some(c) = column_of(topology, m, kind) {
            acc += dotc(source(m), precoders.column(m, c));
        }
    }
    acc
}

/// Received DL pilot observations of every UE.
#[derive(Debug, Clone)]
pub struct DlObservation {
    /// `y^c_{lk}[t~_l]` at `[k * L + l]`; empty without common pilots.
    pub y_common: Vec<Complex64>,
    /// `y^p_k[t~_k]`; empty without private pilots.
    pub y_private: Vec<Complex64>,
}

/// DL common pilot of cluster `l` seen by UE `k`: `a^c_lk[t~_l] + n` (pilot symbol 1).
pub fn receive_dl_common_pilot(a_at_pilot: Complex64, noise: Complex64) -> Complex64 {
    a_at_pilot + noise
}

/// DL private pilot seen by UE `k`: its own private channel plus the private
/// channels of every pilot-sharing UE (other clusters), plus noise.
pub fn receive_dl_private_pilot(a_at_pilot: &[Complex64], noise: Complex64) -> Complex64 {
    a_at_pilot.iter().sum::<Complex64>() + noise
}

/// Simulates both DL training sub-phases for one trial.
pub fn observe_dl_pilots(
    block: &ChannelBlock,
    topology: &Topology,
    timeline: &Timeline,
    precoders: &PrecoderSet,
    anchor: &EffectiveChannels,
    noise_power: f64,
    key: StreamKey,
) -> Result<DlObservation> {
    let sigma = noise_power.sqrt();
    let (k_count, l_count) = (topology.num_ues, topology.num_clusters);
    let mut y_common = Vec::new();
    if timeline.has_common_pilots() {
        let mut rng = key.purpose(Purpose::DlCommonNoise).rng();
        y_common.reserve(k_count * l_count);
        for k in 0..k_count {
            for l in 0..l_count {
                let t = timeline.dl_common_instant(l);
                let pos = block.plan().position(k, t).ok_or(Error::InstantOutOfRange {
                    t,
                    available: "DL common pilot instants".into(),
                })?;
                let (r, rb) = block.rho_at(k, pos);
                let z = project_stream(
                    topology,
                    precoders,
                    |m| block.innovation_at(m, k, pos),
                    StreamKind::Common(l),
                );
                let a = anchor.common(k, l) * r + z * rb;
                y_common.push(receive_dl_common_pilot(a, complex_normal(&mut rng) * sigma));
            }
        }
    }
    let mut y_private = Vec::new();
    if timeline.has_private_pilots() {
        let mut rng = key.purpose(Purpose::DlPrivateNoise).rng();
        y_private.reserve(k_count);
        let mut parts = Vec::new();
        for k in 0..k_count {
            let t = timeline.dl_private_instant(topology.pilot_index[k]);
            let pos = block.plan().position(k, t).ok_or(Error::InstantOutOfRange {
                t,
                available: "DL private pilot instants".into(),
            })?;
            let (r, rb) = block.rho_at(k, pos);
            parts.clear();
            for &i in &topology.pilot_sets[k] {
                let z = project_stream(
                    topology,
                    precoders,
                    |m| block.innovation_at(m, k, pos),
                    StreamKind::Private(i),
                );
                parts.push(anchor.private(k, i) * r + z * rb);
            }
            y_private.push(receive_dl_private_pilot(&parts, complex_normal(&mut rng) * sigma));
        }
    }
    Ok(DlObservation { y_common, y_private })
}

/// First and second order statistics of one effective channel and its pilot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarStats {
    /// Prior mean of the channel at the anchor.
    pub mean: Complex64,
    /// Mean of the pilot observation.
    pub y_mean: Complex64,
    /// Covariance between the channel and the observation.
    pub theta: f64,
    /// Variance of the observation.
    pub psi: f64,
    /// Variance of the channel.
    pub r: f64,
    /// Variance of the estimate.
    pub r_hat: f64,
    /// Estimation error variance.
    pub r_tilde: f64,
}

impl ScalarStats {
    /// Statistics of a channel with no pilot: the estimate is the prior mean.
    pub fn without_pilot(mean: Complex64, r: f64) -> Self {
        ScalarStats {
            mean,
            y_mean: ZERO,
            theta: 0.0,
            psi: 0.0,
            r,
            r_hat: 0.0,
            r_tilde: r,
        }
    }

    fn with_pilot(mean: Complex64, y_mean: Complex64, theta: f64, psi: f64, r: f64) -> Result<Self> {
        if !(psi > 0.0) {
            return Err(Error::Statistics(format!(
                "pilot variance psi = {psi:e} is not positive"
            )));
        }
        let r_hat = theta * theta / psi;
        Ok(ScalarStats {
            mean,
            y_mean,
            theta,
            psi,
            r,
            r_hat,
            r_tilde: r - r_hat,
        })
    }

    pub fn has_pilot(&self) -> bool {
        self.psi > 0.0
    }

    /// Scalar LMMSE estimate `mean + theta / psi (y - y_mean)`.
    pub fn lmmse(&self, y: Complex64) -> Complex64 {
        if self.psi > 0.0 {
            self.mean + (y - self.y_mean) * (self.theta / self.psi)
        } else {
            self.mean
        }
    }
}

/// LMMSE estimate of a common effective channel.
pub fn dl_common_lmmse(y: Complex64, stats: &ScalarStats) -> Complex64 {
    stats.lmmse(y)
}

/// LMMSE estimate of a UE's own private effective channel.
pub fn dl_private_lmmse(y: Complex64, stats: &ScalarStats) -> Complex64 {
    stats.lmmse(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsSource {
    ClosedForm,
    MonteCarlo,
}

/// Drop-level statistics of all estimated effective channels.
#[derive(Debug, Clone)]
pub struct DlStatistics {
    pub num_clusters: usize,
    /// `[k * L + l]`.
    pub common: Vec<ScalarStats>,
    /// Own private channel of each UE.
    pub private: Vec<ScalarStats>,
    pub source: StatsSource,
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    mean: Complex64,
    var_anchor: f64,
    var_innov: f64,
}

struct MomentContext<'a> {
    topology: &'a Topology,
    ul: &'a UlStatistics,
}

impl MomentContext<'_> {
    /// Moments seen by UE `k` of `sum_{(m, i, c)} c h_mk^H Delta_mi y_m[s_i]`.
    fn moments(&self, k: usize, terms: impl Iterator<Item = (usize, usize, f64)>) -> Moments {
        let t = self.topology;
        let sp = self.ul.pilot_power.sqrt();
        let rho = self.ul.rho_ul[k];
        let mut out = Moments::default();
        for (m, i, c) in terms {
            if c == 0.0 {
                continue;
            }
            let link_k = t.idx(m, k);
            let rb = &t.r_bar[link_k];
            let tr = trace_product(self.ul.r_hat(m, i), rb).re;
            let mut var = tr;
            if t.pilot_index[i] == t.pilot_index[k] {
                let d = self.ul.delta(m, i);
                out.mean += trace_product(d, rb) * (c * sp * rho);
                let hb = &t.h_bar[link_k];
                var -= self.ul.pilot_power * rho * rho * quad_form(hb, d, hb).norm_sqr();
            }
            out.var_anchor += c * c * var;
            out.var_innov += c * c * tr;
        }
        out.var_anchor = out.var_anchor.max(0.0);
        out
    }
}

impl DlStatistics {
    /// Exact closed-form statistics for the drop.
    pub fn closed_form(
        config: &SimConfig,
        topology: &Topology,
        timeline: &Timeline,
        rho: &RhoTable,
        ul: &UlStatistics,
        precoding: &PrecoderStatistics,
    ) -> Result<Self> {
        let ctx = MomentContext { topology, ul };
        let sigma2 = config.noise_w();
        let (k_count, l_count) = (topology.num_ues, topology.num_clusters);
        let private_terms = |i: usize| {
            let l = topology.cluster_of_ue[i];
            topology.cluster_aps[l]
                .iter()
                .map(move |&m| (m, i, precoding.private_coeff(m, i)))
        };
        let mut common = Vec::with_capacity(k_count * l_count);
        let mut private = Vec::with_capacity(k_count);
        for k in 0..k_count {
            for l in 0..l_count {
                let terms = topology.cluster_aps[l].iter().flat_map(|&m| {
                    let c = precoding.common_coeff(m);
                    topology.cluster_ues[l].iter().map(move |&i| (m, i, c))
                });
                let mo = ctx.moments(k, terms);
                common.push(if timeline.has_common_pilots() {
                    let t = timeline.dl_common_instant(l);
                    let (r, rb) = (rho.rho(k, t), rho.rho_bar(k, t));
                    ScalarStats::with_pilot(
                        mo.mean,
                        mo.mean * r,
                        r * mo.var_anchor,
                        r * r * mo.var_anchor + rb * rb * mo.var_innov + sigma2,
                        mo.var_anchor,
                    )?
                } else {
                    ScalarStats::without_pilot(mo.mean, mo.var_anchor)
                });
            }
            let own = ctx.moments(k, private_terms(k));
            private.push(if timeline.has_private_pilots() {
                let t = timeline.dl_private_instant(topology.pilot_index[k]);
                let (r, rb) = (rho.rho(k, t), rho.rho_bar(k, t));
                let mut y_mean = ZERO;
                let mut psi = sigma2;
                for &i in &topology.pilot_sets[k] {
                    let mo = if i == k { own } else { ctx.moments(k, private_terms(i)) };
                    y_mean += mo.mean * r;
                    psi += r * r * mo.var_anchor + rb * rb * mo.var_innov;
                }
                ScalarStats::with_pilot(own.mean, y_mean, r * own.var_anchor, psi, own.var_anchor)?
            } else {
                ScalarStats::without_pilot(own.mean, own.var_anchor)
            });
        }
        Ok(DlStatistics {
            num_clusters: l_count,
            common,
            private,
            source: StatsSource::ClosedForm,
        })
    }

    #[inline]
    pub fn common(&self, k: usize, l: usize) -> &ScalarStats {
        &self.common[k * self.num_clusters + l]
    }

    #[inline]
    pub fn private(&self, k: usize) -> &ScalarStats {
        &self.private[k]
    }

    /// Statistics estimated from an oracle run, used when the closed forms
    /// are not trusted.
    pub fn from_oracle(report: &OracleReport, timeline: &Timeline) -> Self {
        let convert = |e: &EmpiricalStats, pilot: bool| {
            if pilot && e.psi > 0.0 {
                let theta = e.theta.re;
                let r_hat = theta * theta / e.psi;
                ScalarStats {
                    mean: e.mean,
                    y_mean: e.y_mean,
                    theta,
                    psi: e.psi,
                    r: e.r,
                    r_hat,
                    r_tilde: e.r - r_hat,
                }
            } else {
                ScalarStats::without_pilot(e.mean, e.r)
            }
        };
        DlStatistics {
            num_clusters: report.num_clusters,
            common: report
                .common
                .iter()
                .map(|e| convert(e, timeline.has_common_pilots()))
                .collect(),
            private: report
                .private
                .iter()
                .map(|e| convert(e, timeline.has_private_pilots()))
                .collect(),
            source: StatsSource::MonteCarlo,
        }
    }
}

/// Per-trial DL estimates `a^[lambda]`.
#[derive(Debug, Clone)]
pub struct DlEstimate {
    pub num_clusters: usize,
    /// `[k * L + l]`, including other clusters' common channels.
    pub a_hat_common: Vec<Complex64>,
    pub a_hat_private: Vec<Complex64>,
}

impl DlEstimate {
    /// Without pilots of a kind, the estimate is the statistical mean.
    pub fn compute(stats: &DlStatistics, obs: &DlObservation) -> Self {
        let a_hat_common = stats
            .common
            .iter()
            .enumerate()
            .map(|(idx, s)| match obs.y_common.get(idx) {
                Some(&y) => dl_common_lmmse(y, s),
                None => s.mean,
            })
            .collect();
        let a_hat_private = stats
            .private
            .iter()
            .enumerate()
            .map(|(k, s)| match obs.y_private.get(k) {
                Some(&y) => dl_private_lmmse(y, s),
                None => s.mean,
            })
            .collect();
        DlEstimate {
            num_clusters: stats.num_clusters,
            a_hat_common,
            a_hat_private,
        }
    }

    #[inline]
    pub fn common(&self, k: usize, l: usize) -> Complex64 {
        self.a_hat_common[k * self.num_clusters + l]
    }
}

/// Running moments of one (channel, observation, estimate) triple, split
/// into batches for standard errors.
#[derive(Debug, Clone, Default)]
struct Moments2 {
    n: f64,
    a: Complex64,
    y: Complex64,
    aa: f64,
    yy: f64,
    ay: Complex64,
    err2: f64,
    est_err: Complex64,
    ee: f64,
    e: Complex64,
}

impl Moments2 {
    fn push(&mut self, a: Complex64, y: Complex64, est: Complex64) {
        self.n += 1.0;
        self.a += a;
        self.y += y;
        self.aa += a.norm_sqr();
        self.yy += y.norm_sqr();
        self.ay += a * y.conj();
        let err = a - est;
        self.err2 += err.norm_sqr();
        self.est_err += est * err.conj();
        self.e += est;
        self.ee += est.norm_sqr();
    }

    fn finish(&self) -> EmpiricalStats {
        let n = self.n;
        let mean = self.a / n;
        let y_mean = self.y / n;
        let e_mean = self.e / n;
        EmpiricalStats {
            mean,
            y_mean,
            theta: self.ay / n - mean * y_mean.conj(),
            psi: self.yy / n - y_mean.norm_sqr(),
            r: self.aa / n - mean.norm_sqr(),
            second_moment: self.aa / n,
            y_second_moment: self.yy / n,
            r_hat: self.ee / n - e_mean.norm_sqr(),
            r_tilde: self.err2 / n,
            orthogonality: self.est_err / n,
        }
    }
}

/// Sample statistics of one effective channel from an oracle run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalStats {
    pub mean: Complex64,
    pub y_mean: Complex64,
    pub theta: Complex64,
    pub psi: f64,
    pub r: f64,
    pub second_moment: f64,
    pub y_second_moment: f64,
    /// Variance of the estimate produced with the reference statistics.
    pub r_hat: f64,
    /// Mean squared error of that estimate.
    pub r_tilde: f64,
    /// `E[a^ (a - a^)^*]`.
    pub orthogonality: Complex64,
}

/// Sample statistics with batch-means standard errors.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub num_clusters: usize,
    pub samples: usize,
    pub common: Vec<EmpiricalStats>,
    pub private: Vec<EmpiricalStats>,
    pub common_se: Vec<EmpiricalStats>,
    pub private_se: Vec<EmpiricalStats>,
}

/// Accumulates anchor channels, pilot observations and reference estimates
/// over independent trials of one drop.
#[derive(Debug, Clone)]
pub struct DlOracle {
    num_clusters: usize,
    batches: usize,
    /// `[batch][index]`.
    common: Vec<Vec<Moments2>>,
    private: Vec<Vec<Moments2>>,
    count: usize,
}

pub const ORACLE_BATCHES: usize = 20;

impl DlOracle {
    pub fn new(num_ues: usize, num_clusters: usize) -> Self {
        DlOracle {
            num_clusters,
            batches: ORACLE_BATCHES,
            common: vec![vec![Moments2::default(); num_ues * num_clusters]; ORACLE_BATCHES],
            private: vec![vec![Moments2::default(); num_ues]; ORACLE_BATCHES],
            count: 0,
        }
    }

    /// Adds trial number `trial`; missing observations count as zero.
    pub fn push(&mut self, trial: usize, anchor: &EffectiveChannels, obs: &DlObservation, est: &DlEstimate) {
        let b = trial % self.batches;
        let k_count = anchor.num_ues;
        for k in 0..k_count {
            for l in 0..self.num_clusters {
                let idx = k * self.num_clusters + l;
                let y = obs.y_common.get(idx).copied().unwrap_or(ZERO);
                self.common[b][idx].push(anchor.common(k, l), y, est.a_hat_common[idx]);
            }
            let y = obs.y_private.get(k).copied().unwrap_or(ZERO);
            self.private[b][k].push(anchor.private(k, k), y, est.a_hat_private[k]);
        }
        self.count += 1;
    }

    pub fn finish(&self) -> OracleReport {
        let combine = |per_batch: &Vec<Vec<Moments2>>| {
            let len = per_batch[0].len();
            let mut total = Vec::with_capacity(len);
            let mut se = Vec::with_capacity(len);
            for idx in 0..len {
                let mut all = Moments2::default();
                let batch_stats: Vec<EmpiricalStats> = per_batch
                    .iter()
                    .map(|b| {
                        let m = &b[idx];
                        all.n += m.n;
                        all.a += m.a;
                        all.y += m.y;
                        all.aa += m.aa;
                        all.yy += m.yy;
                        all.ay += m.ay;
                        all.err2 += m.err2;
                        all.est_err += m.est_err;
                        all.e += m.e;
                        all.ee += m.ee;
                        m.finish()
                    })
                    .collect();
                total.push(all.finish());
                se.push(batch_standard_error(&batch_stats));
            }
            (total, se)
        };
        let (common, common_se) = combine(&self.common);
        let (private, private_se) = combine(&self.private);
        OracleReport {
            num_clusters: self.num_clusters,
            samples: self.count,
            common,
            private,
            common_se,
            private_se,
        }
    }
}

fn batch_standard_error(b: &[EmpiricalStats]) -> EmpiricalStats {
    let n = b.len() as f64;
    let real = |f: &dyn Fn(&EmpiricalStats) -> f64| {
        let mean = b.iter().map(f).sum::<f64>() / n;
        let var = b.iter().map(|s| (f(s) - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    let cplx = |f: &dyn Fn(&EmpiricalStats) -> Complex64| {
        let mean = b.iter().map(f).sum::<Complex64>() / n;
        let var = b.iter().map(|s| (f(s) - mean).norm_sqr()).sum::<f64>() / (n - 1.0);
        Complex64::new((var / n).sqrt(), 0.0)
    };
    EmpiricalStats {
        mean: cplx(&|s| s.mean),
        y_mean: cplx(&|s| s.y_mean),
        theta: cplx(&|s| s.theta),
        psi: real(&|s| s.psi),
        r: real(&|s| s.r),
        second_moment: real(&|s| s.second_moment),
        y_second_moment: real(&|s| s.y_second_moment),
        r_hat: real(&|s| s.r_hat),
        r_tilde: real(&|s| s.r_tilde),
        orthogonality: cplx(&|s| s.orthogonality),
    }
}

/// One closed-form vs. oracle comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct StatComparison {
    pub name: String,
    pub closed: f64,
    pub oracle: f64,
    /// Oracle standard error.
    pub oracle_se: f64,
    /// Scale of the dominant term the statistic belongs to.
    pub scale: f64,
    pub rel: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Relative tolerance for statistics and the looser one for small terms.
pub const STATS_TOLERANCE: f64 = 0.02;
pub const SMALL_TERM_TOLERANCE: f64 = 0.05;
/// Terms below this fraction of their dominant term are "small".
pub const SMALL_TERM_FRACTION: f64 = 0.01;
/// Sampling-noise allowance (in oracle standard errors) for small terms.
pub const SMALL_TERM_SIGMAS: f64 = 4.0;

/// Compares a closed-form value against an oracle estimate.
///
/// The error is taken relative to `max(|closed|, 0.01 scale)`. Terms above
/// 1% of their dominant term must agree within 2%; smaller terms within 5%,
/// or within `SMALL_TERM_SIGMAS` oracle standard errors, since a statistic
/// that is exactly zero cannot be resolved to a relative tolerance by
/// sampling.
pub fn compare_scalar(name: String, closed: f64, oracle: f64, oracle_se: f64, scale: f64) -> StatComparison {
    let small = closed.abs() < SMALL_TERM_FRACTION * scale;
    let tolerance = if small { SMALL_TERM_TOLERANCE } else { STATS_TOLERANCE };
    let denom = closed.abs().max(SMALL_TERM_FRACTION * scale).max(f64::MIN_POSITIVE);
    let diff = (oracle - closed).abs();
    let rel = diff / denom;
    let pass = rel <= tolerance || (small && diff <= SMALL_TERM_SIGMAS * oracle_se);
    StatComparison {
        name,
        closed,
        oracle,
        oracle_se,
        scale,
        rel,
        tolerance,
        pass,
    }
}

/// Compares every closed-form scalar with the oracle run.
pub fn compare_statistics(closed: &DlStatistics, report: &OracleReport) -> Vec<StatComparison> {
    let mut out = Vec::new();
    let mut push_family = |label: String, s: &ScalarStats, e: &EmpiricalStats, se: &EmpiricalStats| {
        let scale_a = e.second_moment.max(s.r + s.mean.norm_sqr());
        let amp = scale_a.sqrt();
        out.push(compare_scalar(
            format!("{label}.mean.re"),
            s.mean.re,
            e.mean.re,
            se.mean.re,
            amp,
        ));
        out.push(compare_scalar(
            format!("{label}.mean.im"),
            s.mean.im,
            e.mean.im,
            se.mean.re,
            amp,
        ));
        out.push(compare_scalar(format!("{label}.r"), s.r, e.r, se.r, scale_a));
        if s.has_pilot() {
            let scale_y = e.y_second_moment.max(s.psi + s.y_mean.norm_sqr());
            let amp_y = scale_y.sqrt();
            out.push(compare_scalar(
                format!("{label}.y_mean.re"),
                s.y_mean.re,
                e.y_mean.re,
                se.y_mean.re,
                amp_y,
            ));
            out.push(compare_scalar(
                format!("{label}.y_mean.im"),
                s.y_mean.im,
                e.y_mean.im,
                se.y_mean.re,
                amp_y,
            ));
            let scale_ay = (scale_a * scale_y).sqrt();
            out.push(compare_scalar(
                format!("{label}.theta"),
                s.theta,
                e.theta.re,
                se.theta.re,
                scale_ay,
            ));
            out.push(compare_scalar(
                format!("{label}.theta.im"),
                0.0,
                e.theta.im,
                se.theta.re,
                scale_ay,
            ));
            out.push(compare_scalar(format!("{label}.psi"), s.psi, e.psi, se.psi, scale_y));
        }
        out.push(compare_scalar(
            format!("{label}.r_hat"),
            s.r_hat,
            e.r_hat,
            se.r_hat,
            scale_a,
        ));
        out.push(compare_scalar(
            format!("{label}.r_tilde"),
            s.r_tilde,
            e.r_tilde,
            se.r_tilde,
            scale_a,
        ));
    };
    let l_count = closed.num_clusters;
    for (idx, s) in closed.common.iter().enumerate() {
        let label = format!("common[k={},l={}]", idx / l_count, idx % l_count);
        push_family(label, s, &report.common[idx], &report.common_se[idx]);
    }
    for (k, s) in closed.private.iter().enumerate() {
        push_family(format!("private[k={k}]"), s, &report.private[k], &report.private_se[k]);
    }
    out
}

/// Fails with the worst offending statistic when any comparison fails.
pub fn verify_statistics(closed: &DlStatistics, report: &OracleReport) -> Result<Vec<StatComparison>> {
    let cmp = compare_statistics(closed, report);
    if let Some(bad) = cmp
        .iter()
        .filter(|c| !c.pass)
        .max_by(|a, b| (a.rel / a.tolerance).total_cmp(&(b.rel / b.tolerance)))
    {
        return Err(Error::StatsMismatch {
            name: bad.name.clone(),
            closed: bad.closed,
            oracle: bad.oracle,
            rel: bad.rel,
        });
    }
    Ok(cmp)
}
