//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 1, 2 and 6-8 check the implementation and abort the run on
//! failure. Criteria 3-5 check figure trends produced by the model; their
//! failures are reported but only abort when `CF_RSMA_STRICT_ACCEPTANCE=1`.
//! Set `CF_RSMA_ACCEPTANCE_ONLY=1,6` to run a subset.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use cf_rsma::dl::{compare_statistics, DlOracle, OracleReport};
use cf_rsma::experiment::{csv_string, run_sweep, Axis, Preset, SweepResult, SweepSpec};
use cf_rsma::link::{ergodic_se, paired_difference, DropModel, RunOptions, SeReport};
use cf_rsma::{Mode, SimConfig, Velocity};

type CMat = DMatrix<Complex64>;

const ORACLE_TRIALS: usize = 2_000_000;
const ORACLE_LIMIT: Duration = Duration::from_secs(300);
const FIG_A_LIMIT: Duration = Duration::from_secs(20 * 60);
const REL_TOL: f64 = 0.02;
const ORTHO_TOL: f64 = 0.02;
const NORM_TOL: f64 = 0.01;
const SEPARATION_SIGMAS: f64 = 3.0;
const RECONSTRUCTION_TOL: f64 = 1e-10;
const RECONSTRUCTION_INSTANTS: usize = 1000;

struct Outcome {
    id: u32,
    pass: bool,
    binding: bool,
}

fn report(id: u32, name: &str, pass: bool, detail: &str) -> bool {
    println!(
        "criterion {id} [{}] {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

fn small_instance() -> SimConfig {
    SimConfig {
        num_aps: 4,
        antennas_per_ap: 2,
        num_ues: 4,
        num_clusters: 2,
        velocity_kmh: Velocity::Uniform(40.0),
        ..SimConfig::default()
    }
}

/// Sample UL moments of every link: `E[h^ h^^H]`, `E[h^ h~^H]` and the
/// squared norm of the common precoder sum per AP.
struct UlMoments {
    hh: Vec<CMat>,
    he: Vec<CMat>,
    common_norm: Vec<f64>,
    n: f64,
}

struct OracleRun {
    model: DropModel,
    dl: OracleReport,
    ul: UlMoments,
    elapsed: Duration,
}

fn run_oracle(samples: usize) -> OracleRun {
    let start = Instant::now();
    let model = DropModel::new(&small_instance(), 0).expect("small instance");
    let topo = &model.topology;
    let (m_count, k_count, n) = (topo.num_aps, topo.num_ues, topo.antennas);
    let mut dl = DlOracle::new(k_count, topo.num_clusters);
    let zero = CMat::zeros(n, n);
    let mut ul = UlMoments {
        hh: vec![zero.clone(); m_count * k_count],
        he: vec![zero; m_count * k_count],
        common_norm: vec![0.0; m_count],
        n: 0.0,
    };
    let chunk = 512;
    let mut begin = 0;
    while begin < samples {
        let end = (begin + chunk).min(samples);
        let trials: Vec<_> = (begin..end)
            .into_par_iter()
            .map(|s| model.training_trial(s as u64).expect("trial"))
            .collect();
        for (off, tr) in trials.iter().enumerate() {
            dl.push(begin + off, &tr.anchor, &tr.obs, &tr.dl);
            for m in 0..m_count {
                let mut sum = vec![Complex64::new(0.0, 0.0); n];
                for k in 0..k_count {
                    let h_hat = tr.ul.h_hat(m, k);
                    let h = tr.block.anchor(m, k);
                    let acc_hh = &mut ul.hh[m * k_count + k];
                    let acc_he = &mut ul.he[m * k_count + k];
                    for a in 0..n {
                        for b in 0..n {
                            acc_hh[(a, b)] += h_hat[a] * h_hat[b].conj();
                            acc_he[(a, b)] += h_hat[a] * (h[b] - h_hat[b]).conj();
                        }
                    }
                    if topo.cluster_of_ue[k] == topo.cluster_of_ap[m] {
                        sum.iter_mut().zip(h_hat).for_each(|(s, h)| *s += h);
                    }
                }
                ul.common_norm[m] += sum.iter().map(|z| z.norm_sqr()).sum::<f64>();
            }
            ul.n += 1.0;
        }
        begin = end;
    }
    for m in ul.hh.iter_mut().chain(ul.he.iter_mut()) {
        *m /= Complex64::new(ul.n, 0.0);
    }
    ul.common_norm.iter_mut().for_each(|v| *v /= ul.n);
    OracleRun {
        dl: dl.finish(),
        model,
        ul,
        elapsed: start.elapsed(),
    }
}

fn criterion_1(run: &OracleRun) -> bool {
    let model = &run.model;
    let topo = &model.topology;
    let k_count = topo.num_ues;
    let cmp = compare_statistics(&model.dl, &run.dl);
    let dl_fail = cmp.iter().filter(|c| !c.pass).count();
    let worst = cmp
        .iter()
        .max_by(|a, b| (a.rel / a.tolerance).total_cmp(&(b.rel / b.tolerance)))
        .map(|c| {
            let note = if c.pass && c.rel > c.tolerance {
                format!(
                    ", small term within {:.1} se",
                    (c.oracle - c.closed).abs() / c.oracle_se
                )
            } else {
                String::new()
            };
            format!("{} rel {:.4} (tol {}{note})", c.name, c.rel, c.tolerance)
        })
        .unwrap_or_default();

    let mut r_hat_worst: f64 = 0.0;
    for m in 0..topo.num_aps {
        for k in 0..k_count {
            let cf = model.ul.r_hat(m, k);
            let mc = &run.ul.hh[m * k_count + k];
            r_hat_worst = r_hat_worst.max((mc - cf).norm() / cf.norm());
        }
    }

    // eta compared through the precoder norms it is meant to normalize.
    let mut eta_worst: f64 = 0.0;
    for m in 0..topo.num_aps {
        let l = topo.cluster_of_ap[m];
        for &k in &topo.cluster_ues[l] {
            let tr = run.ul.hh[m * k_count + k].trace().re;
            let eta = model.precoding.eta_private[m * k_count + k];
            eta_worst = eta_worst.max((eta * tr - 1.0).abs());
        }
        let norm = model.precoding.eta_common[m] * run.ul.common_norm[m];
        eta_worst = eta_worst.max((norm - 1.0).abs());
    }

    let pass = dl_fail == 0 && r_hat_worst <= REL_TOL && eta_worst <= NORM_TOL && run.elapsed < ORACLE_LIMIT;
    report(
        1,
        "covariance-oracle equivalence",
        pass,
        &format!(
            "{} DL comparisons, {dl_fail} failed, worst {worst}; R^ worst rel {r_hat_worst:.2e}; \
             E|v|^2 worst |dev| {eta_worst:.2e} (tol {NORM_TOL}); {} trials in {:.1}s (limit {}s)",
            cmp.len(),
            run.dl.samples,
            run.elapsed.as_secs_f64(),
            ORACLE_LIMIT.as_secs()
        ),
    )
}

fn criterion_2(run: &OracleRun) -> bool {
    let model = &run.model;
    let topo = &model.topology;
    let k_count = topo.num_ues;
    let mut ul_worst: f64 = 0.0;
    for m in 0..topo.num_aps {
        for k in 0..k_count {
            let cf = model.ul.r_hat(m, k);
            ul_worst = ul_worst.max(run.ul.he[m * k_count + k].norm() / cf.norm());
        }
    }
    let l_count = topo.num_clusters;
    let mut common_worst: f64 = 0.0;
    for (idx, e) in run.dl.common.iter().enumerate() {
        let s = model.dl.common(idx / l_count, idx % l_count);
        common_worst = common_worst.max(e.orthogonality.norm() / s.r);
    }
    let mut private_worst: f64 = 0.0;
    for (k, e) in run.dl.private.iter().enumerate() {
        private_worst = private_worst.max(e.orthogonality.norm() / model.dl.private(k).r);
    }
    let pass = ul_worst < ORTHO_TOL && common_worst < ORTHO_TOL && private_worst < ORTHO_TOL;
    report(
        2,
        "LMMSE orthogonality",
        pass,
        &format!(
            "max |E[est err^H]| / r: UL {ul_worst:.2e}, DL common {common_worst:.2e}, \
             DL private {private_worst:.2e} (tol {ORTHO_TOL})"
        ),
    )
}

fn full_run(mut base: SimConfig) -> SimConfig {
    base.drops = 50;
    base.realizations = 100;
    base
}

fn sweep(preset: Preset, base: SimConfig, axes: Vec<(Axis, Vec<f64>)>, modes: Vec<Mode>) -> SweepResult {
    let spec = SweepSpec {
        preset,
        base,
        axes,
        modes,
    };
    run_sweep(&spec, &RunOptions::default(), false).expect("sweep")
}

fn get<'a>(result: &'a SweepResult, mode: Mode, values: &[(Axis, f64)]) -> &'a SeReport {
    result.find(mode, values).expect("sweep point")
}

/// Paired separation `(hi - lo) / se` of two reports.
fn separation(hi: &SeReport, lo: &SeReport) -> (f64, f64) {
    let (d, se) = paired_difference(hi, lo).expect("paired");
    (d, d / se)
}

fn criterion_3() -> bool {
    let start = Instant::now();
    let base = full_run(SweepSpec::preset_base(Preset::FigA));
    let ks = [16.0, 32.0];
    let ls = [1.0, 4.0, 8.0];
    let result = sweep(
        Preset::FigA,
        base,
        vec![(Axis::K, ks.to_vec()), (Axis::L, ls.to_vec())],
        vec![Mode::RsmaDlPilots, Mode::RsmaNoDlPilots],
    );
    let elapsed = start.elapsed();
    let mut pass = elapsed < FIG_A_LIMIT;
    let mut lines = Vec::new();
    for &k in &ks {
        for (mode, sign) in [(Mode::RsmaDlPilots, 1.0), (Mode::RsmaNoDlPilots, -1.0)] {
            let se: Vec<&SeReport> = ls
                .iter()
                .map(|&l| get(&result, mode, &[(Axis::K, k), (Axis::L, l)]))
                .collect();
            let mut parts = vec![format!(
                "{mode} K={k}: SE {}",
                se.iter()
                    .map(|r| format!("{:.3}", r.se_sum))
                    .collect::<Vec<_>>()
                    .join(" / ")
            )];
            for w in se.windows(2) {
                let (d, z) = separation(w[1], w[0]);
                let ok = sign * z > SEPARATION_SIGMAS;
                pass &= ok;
                parts.push(format!("step {d:+.3} ({z:+.1} se){}", if ok { "" } else { " x" }));
            }
            lines.push(parts.join(", "));
        }
    }
    let ok = report(
        3,
        "sum SE rises with L with DL pilots and falls without",
        pass,
        &format!("{:.0}s (limit {}s)", elapsed.as_secs_f64(), FIG_A_LIMIT.as_secs()),
    );
    for l in lines {
        println!("    {l}");
    }
    ok
}

fn criterion_4() -> bool {
    let mut base = full_run(SweepSpec::preset_base(Preset::FigB));
    base.num_ues = 16;
    base.p_max_dbm = 30.0;
    base.velocity_kmh = Velocity::Uniform(100.0);
    let ls = [1.0, 2.0, 4.0, 8.0];
    let result = sweep(
        Preset::FigB,
        base,
        vec![(Axis::L, ls.to_vec())],
        vec![Mode::RsmaDlPilots, Mode::Sdma],
    );
    let mut crossover = None;
    let mut z_at = Vec::new();
    let mut lines = Vec::new();
    for &l in &ls {
        let rsma = get(&result, Mode::RsmaDlPilots, &[(Axis::L, l)]);
        let sdma = get(&result, Mode::Sdma, &[(Axis::L, l)]);
        let (d, z) = separation(rsma, sdma);
        if d > 0.0 && crossover.is_none() {
            crossover = Some(l);
        }
        z_at.push(z);
        lines.push(format!(
            "L={l}: RSMA {:.3} SDMA {:.3} diff {d:+.3} ({z:+.1} se)",
            rsma.se_sum, sdma.se_sum
        ));
    }
    let pass = z_at[0] < -SEPARATION_SIGMAS && z_at[ls.len() - 1] > SEPARATION_SIGMAS;
    let ok = report(
        4,
        "RSMA-SDMA sign flips from L=1 to L=8 at v=100 km/h",
        pass,
        &format!(
            "crossover L {}",
            crossover.map_or("none in {1,2,4,8}".to_string(), |l| format!("{l}"))
        ),
    );
    for l in lines {
        println!("    {l}");
    }
    ok
}

fn criterion_5() -> bool {
    let base = full_run(SweepSpec::preset_base(Preset::FigC));
    let (axes, modes) = SweepSpec::preset_axes(Preset::FigC);
    let taus = axes
        .iter()
        .find(|(a, _)| *a == Axis::TauC)
        .expect("tau_c axis")
        .1
        .clone();
    let vs = [20.0, 60.0, 100.0];
    let result = sweep(
        Preset::FigC,
        base,
        vec![(Axis::TauC, taus.clone()), (Axis::Velocity, vs.to_vec())],
        modes,
    );
    let mut largest = Vec::new();
    let mut lines = Vec::new();
    for &v in &vs {
        let mut best = None;
        let mut diffs = Vec::new();
        for &tau in &taus {
            let key = [(Axis::TauC, tau), (Axis::Velocity, v)];
            let d = get(&result, Mode::RsmaDlPilots, &key).se_sum - get(&result, Mode::Sdma, &key).se_sum;
            if d >= 0.0 {
                best = Some(tau);
            }
            diffs.push(format!("{tau}:{d:+.3}"));
        }
        lines.push(format!("v={v}: RSMA-SDMA {}", diffs.join(" ")));
        largest.push(best);
    }
    // A velocity without any qualifying tau_c counts as 0. When no velocity
    // has one the trend is not exhibited at all and the criterion fails.
    let as_num: Vec<f64> = largest.iter().map(|b| b.unwrap_or(0.0)).collect();
    let vacuous = largest.iter().all(Option::is_none);
    let pass = !vacuous && as_num.windows(2).all(|w| w[1] <= w[0]);
    let ok = report(
        5,
        "largest tau_c with RSMA >= SDMA is non-increasing in v",
        pass,
        &format!(
            "largest tau_c per v {{20,60,100}}: {}{}",
            largest
                .iter()
                .map(|b| b.map_or("none".to_string(), |t| format!("{t}")))
                .collect::<Vec<_>>()
                .join(", "),
            if vacuous {
                " (RSMA never reaches SDMA, so there is no trend to check)"
            } else {
                ""
            }
        ),
    );
    for l in lines {
        println!("    {l}");
    }
    ok
}

fn reduction_config() -> SimConfig {
    SimConfig {
        num_aps: 8,
        antennas_per_ap: 2,
        num_ues: 8,
        num_clusters: 2,
        tau_c: 40,
        drops: 3,
        realizations: 6,
        ..SimConfig::default()
    }
}

fn criterion_6() -> bool {
    let base = reduction_config();
    let sdma = ergodic_se(
        &SimConfig {
            mode: Mode::Sdma,
            ..base.clone()
        },
        &RunOptions::default(),
    )
    .expect("sdma");
    let rsma = ergodic_se(
        &SimConfig {
            mode: Mode::RsmaDlPilots,
            power_split: 1.0,
            ..base.clone()
        },
        &RunOptions::default(),
    )
    .expect("rsma t=1");
    let bits = |r: &SeReport| {
        let mut v = vec![r.se_sum.to_bits(), r.se_private.to_bits(), r.se_common.to_bits()];
        for d in &r.per_drop {
            v.push(d.se_sum.to_bits());
            v.extend(d.se_private_per_ue.iter().map(|x| x.to_bits()));
        }
        v
    };
    let identical = bits(&sdma) == bits(&rsma);

    let mut d2_max: f64 = 0.0;
    let mut d2_checked = 0usize;
    for mode in [Mode::RsmaDlPilots, Mode::RsmaNoDlPilots, Mode::Sdma] {
        let cfg = SimConfig {
            mode,
            velocity_kmh: Velocity::Uniform(0.0),
            ..base.clone()
        };
        let model = DropModel::new(&cfg, 0).expect("drop");
        for r in 0..3 {
            let real = model.realization(r).expect("realization");
            for t in model.timeline.data_instants() {
                for s in real.simulate_instant(t).expect("instant") {
                    let mut vals = vec![s.private.distortion[1]];
                    vals.extend(s.common.map(|c| c.distortion[1]));
                    for z in vals {
                        d2_max = d2_max.max(z.norm());
                        d2_checked += 1;
                    }
                }
            }
        }
    }

    let mut mci_max: f64 = 0.0;
    let mut mci_checked = 0usize;
    for mode in [Mode::RsmaDlPilots, Mode::RsmaNoDlPilots, Mode::Sdma] {
        let cfg = SimConfig {
            mode,
            num_clusters: 1,
            ..base.clone()
        };
        let model = DropModel::new(&cfg, 0).expect("drop");
        for r in 0..3 {
            let real = model.realization(r).expect("realization");
            for t in model.timeline.data_instants() {
                for s in real.simulate_instant(t).expect("instant") {
                    let mut vals = vec![s.private.distortion[3]];
                    vals.extend(s.common.map(|c| c.distortion[2]));
                    for z in vals {
                        mci_max = mci_max.max(z.norm());
                        mci_checked += 1;
                    }
                }
            }
        }
    }
    let pass = identical && d2_max == 0.0 && mci_max == 0.0;
    report(
        6,
        "exact reductions",
        pass,
        &format!(
            "SDMA vs RSMA(t_m=1) bit-identical: {identical}; v=0 max |D2| {d2_max:e} over {d2_checked} terms; \
             L=1 max |MCI| {mci_max:e} over {mci_checked} terms"
        ),
    )
}

fn criterion_7() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let modes = [Mode::RsmaDlPilots, Mode::RsmaNoDlPilots, Mode::Sdma];
    while checked < RECONSTRUCTION_INSTANTS {
        let cfg = SimConfig {
            mode: modes[rng.random_range(0..modes.len())],
            num_clusters: rng.random_range(1..=4),
            velocity_kmh: Velocity::Uniform(rng.random_range(0.0..150.0)),
            seed: rng.random(),
            ..reduction_config()
        };
        let model = DropModel::new(&cfg, rng.random_range(0..100)).expect("drop");
        let real = model.realization(rng.random_range(0..1000)).expect("realization");
        let data: Vec<usize> = model.timeline.data_instants().collect();
        for _ in 0..10 {
            let t = data[rng.random_range(0..data.len())];
            let terms = real.simulate_instant(t).expect("instant");
            let s = &terms[rng.random_range(0..terms.len())];
            if let Some(c) = &s.common {
                worst = worst.max((c.total() - s.y_common).norm() / s.y_common.norm());
            }
            worst = worst.max((s.private.total() - s.y_private).norm() / s.y_private.norm());
            checked += 1;
        }
    }
    report(
        7,
        "reconstruction identity",
        worst <= RECONSTRUCTION_TOL,
        &format!("worst relative error {worst:.2e} over {checked} instants (tol {RECONSTRUCTION_TOL:e})"),
    )
}

fn criterion_8() -> bool {
    let base = SimConfig {
        drops: 3,
        realizations: 5,
        tau_c: 40,
        ..reduction_config()
    };
    let spec = SweepSpec {
        preset: Preset::Custom,
        base,
        axes: vec![(Axis::L, vec![1.0, 2.0]), (Axis::Velocity, vec![0.0, 80.0])],
        modes: vec![Mode::RsmaDlPilots, Mode::RsmaNoDlPilots, Mode::Sdma],
    };
    let mut outputs = Vec::new();
    for threads in [1, 4, 16] {
        for parallel_points in [false, true] {
            let options = RunOptions {
                threads: Some(threads),
                ..RunOptions::default()
            };
            let result = run_sweep(&spec, &options, parallel_points).expect("sweep");
            outputs.push(csv_string(&result.rows()).expect("csv"));
        }
    }
    let identical = outputs.windows(2).all(|w| w[0] == w[1]);
    report(
        8,
        "determinism across worker threads",
        identical,
        &format!(
            "{} runs over 1/4/16 threads, {} CSV bytes each",
            outputs.len(),
            outputs[0].len()
        ),
    )
}

fn selected() -> Option<Vec<u32>> {
    std::env::var("CF_RSMA_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|p| p.trim().parse().ok()).collect())
}

fn main() {
    // `cargo test -- --list` and filters are not supported by this runner.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let strict = std::env::var("CF_RSMA_STRICT_ACCEPTANCE").is_ok_and(|v| v == "1");
    let only = selected();
    let want = |id: u32| only.as_ref().is_none_or(|v| v.contains(&id));
    let mut outcomes = Vec::new();

    if want(1) || want(2) {
        let run = run_oracle(ORACLE_TRIALS);
        if want(1) {
            outcomes.push(Outcome {
                id: 1,
                pass: criterion_1(&run),
                binding: true,
            });
        }
        if want(2) {
            outcomes.push(Outcome {
                id: 2,
                pass: criterion_2(&run),
                binding: true,
            });
        }
    }
    let trend: [(u32, fn() -> bool); 3] = [(3, criterion_3), (4, criterion_4), (5, criterion_5)];
    for (id, f) in trend {
        if want(id) {
            outcomes.push(Outcome {
                id,
                pass: f(),
                binding: strict,
            });
        }
    }
    let exact: [(u32, fn() -> bool); 3] = [(6, criterion_6), (7, criterion_7), (8, criterion_8)];
    for (id, f) in exact {
        if want(id) {
            outcomes.push(Outcome {
                id,
                pass: f(),
                binding: true,
            });
        }
    }

    let failed: Vec<String> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id.to_string()).collect();
    let fatal = outcomes.iter().any(|o| !o.pass && o.binding);
    println!(
        "acceptance: {}/{} criteria passed{}",
        outcomes.len() - failed.len(),
        outcomes.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failed: {}", failed.join(", "))
        }
    );
    if fatal {
        std::process::exit(1);
    }
}
