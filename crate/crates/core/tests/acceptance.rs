//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::process::{Command, ExitCode};
use std::time::Instant;

use common::*;
use demoscore::baselines::normalize_loss_weights;
use demoscore::curator::{compute_threshold, step_loss, ClassifierKind, CurationResult, QualityClassifier};
use demoscore::datamodel::{MixtureEntry, RolloutSet, Source, Trajectory};
use demoscore::envsim::StrategyTag;
use demoscore::numcore::RngStream;
use demoscore::pipeline::{
    run_calibration, run_method_on, run_variant_on, ExperimentConfig, InitialStage, Method, ReplicateResult,
    Variant, CLASSIFIER_SIZES,
};
use demoscore::policy::{wilson_interval, SuccessStats, Z_90};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn progress(msg: &str) {
    eprintln!("[acceptance] {msg}");
}

fn mixture(wide: usize) -> Vec<MixtureEntry> {
    vec![
        MixtureEntry {
            tag: StrategyTag::WideA,
            count: wide,
        },
        MixtureEntry {
            tag: StrategyTag::NarrowB,
            count: 100 - wide,
        },
    ]
}

fn config(wide: usize) -> ExperimentConfig {
    ExperimentConfig {
        mixture: mixture(wide),
        seeds: SEEDS.to_vec(),
        ..ExperimentConfig::default()
    }
}

fn pooled(reps: &[ReplicateResult]) -> SuccessStats {
    SuccessStats::pooled(&reps.iter().map(|r| r.final_stats).collect::<Vec<_>>())
}

fn fmt(s: &SuccessStats) -> String {
    format!("{:.3} [{:.3}, {:.3}]", s.p_hat, s.lo, s.hi)
}

fn criterion_1() -> Verdict {
    let mut worst_bce = 0.0f64;
    let mut worst_mdn = 0.0f64;
    for case in 0..100 {
        worst_bce = worst_bce.max(mlp_bce_case(case));
        worst_mdn = worst_mdn.max(mdn_nll_case(case));
    }
    verdict(
        worst_bce < 1e-4 && worst_mdn < 1e-4,
        format!("max relative error MLP-BCE {worst_bce:.2e}, MDN-NLL {worst_mdn:.2e} over 100 cases each"),
    )
}

fn unit_traj(states: Vec<f64>) -> Trajectory {
    Trajectory {
        id: format!("t{}", states.len()),
        source: Source::Demo {
            tag: StrategyTag::WideA,
        },
        seed: 0,
        outcome: 1.0,
        actions: vec![[0.0, 0.0]; states.len()],
        states: states.into_iter().map(|x| vec![x]).collect(),
    }
}

fn criterion_2() -> Verdict {
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let mut clf = QualityClassifier::constant(0.5, ClassifierKind::Step, 1).unwrap();
    clf.mlp.layers_mut()[0].weight.set(0, 0, 1.0);
    let mut rng = RngStream::new(2024);
    let mut worst = BTreeMap::new();
    let mut note = |k: &str, e: f64| {
        let w = worst.entry(k.to_string()).or_insert(0.0f64);
        *w = w.max(e);
    };

    let set = RolloutSet {
        env: Default::default(),
        checkpoint: 1,
        trajectories: vec![unit_traj(vec![0.0, 0.0]), unit_traj(vec![logit(1.0 - 1e-13)])],
    };
    note("threshold", (compute_threshold(&clf, &set).unwrap() - 2.0 / 3.0).abs());

    for _ in 0..200 {
        let n = 1 + rng.below(30);
        let ps: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.01, 0.99)).collect();
        let y = rng.below(2) as f64;
        let t = unit_traj(ps.iter().map(|&p| logit(p)).collect());
        note("step_loss", (step_loss(&clf, &t, y).unwrap() - oracle_step_loss(&ps, y)).abs());

        let sets: Vec<Vec<f64>> = (0..1 + rng.below(6))
            .map(|_| (0..1 + rng.below(20)).map(|_| rng.uniform_in(0.01, 0.99)).collect())
            .collect();
        let rs = RolloutSet {
            env: Default::default(),
            checkpoint: 1,
            trajectories: sets.iter().map(|ps| unit_traj(ps.iter().map(|&p| logit(p)).collect())).collect(),
        };
        note("threshold", (compute_threshold(&clf, &rs).unwrap() - oracle_threshold(&sets)).abs());

        let total = 1 + rng.below(1000);
        let k = rng.below(total + 1) as f64;
        let (lo, hi) = wilson_interval(k, total, Z_90);
        let (olo, ohi) = oracle_wilson(k, total as f64, Z_90);
        note("wilson", (lo - olo).abs().max((hi - ohi).abs()));

        let losses: Vec<f64> = (0..1 + rng.below(20)).map(|_| rng.uniform_in(-3.0, 10.0)).collect();
        let got = normalize_loss_weights(&losses).unwrap().weights;
        for (a, b) in got.iter().zip(oracle_loss_weights(&losses)) {
            note("loss_weights", (a - b).abs());
        }
    }
    // the documented two-episode case
    let w = normalize_loss_weights(&[1.0, 2.0]).unwrap().weights;
    note("loss_weights", (w[0] - 0.5 / 0.25).abs().max(w[1].abs()));

    let pass = worst.values().all(|&e| e <= 1e-10);
    let detail = worst
        .iter()
        .map(|(k, e)| format!("{k} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(pass, format!("max absolute deviation: {detail}"))
}

fn criterion_3() -> Verdict {
    let cal = run_calibration(&config(50)).unwrap();
    let rates = |tag: StrategyTag| {
        cal.policies
            .iter()
            .filter(|p| p.tag == tag)
            .map(|p| format!("{:.2}", p.success))
            .collect::<Vec<_>>()
            .join(" ")
    };
    verdict(
        cal.passed(),
        format!(
            "demonstrators WideA {:.3} NarrowB {:.3}; pure-WideA policy {}; pure-NarrowB policy {}",
            cal.demonstrators.wide_rate,
            cal.demonstrators.narrow_rate,
            rates(StrategyTag::WideA),
            rates(StrategyTag::NarrowB)
        ),
    )
}

/// Replicates of one method or variant, with the seconds they took.
#[derive(Default)]
struct Cell {
    reps: Vec<ReplicateResult>,
    seconds: f64,
}

#[derive(Default)]
struct Mixture {
    stage_seconds: f64,
    cells: BTreeMap<String, Cell>,
}

impl Mixture {
    fn push(&mut self, key: &str, r: ReplicateResult, secs: f64) {
        let c = self.cells.entry(key.to_string()).or_default();
        c.reps.push(r);
        c.seconds += secs;
    }

    fn reps(&self, key: &str) -> &[ReplicateResult] {
        &self.cells[key].reps
    }

    fn curations(&self) -> impl Iterator<Item = &CurationResult> {
        self.cells.values().flat_map(|c| c.reps.iter()).filter_map(|r| r.curation.as_ref())
    }
}

fn method_key(m: Method) -> String {
    m.name().to_string()
}

fn run_mixture(wide: usize, methods: &[Method], variants: &[Variant]) -> Mixture {
    let cfg = config(wide);
    let mut mix = Mixture::default();
    for &seed in &SEEDS {
        let t = Instant::now();
        let stage = InitialStage::run(&cfg, seed, cfg.curation.rollouts_per_checkpoint, None).unwrap();
        mix.stage_seconds += t.elapsed().as_secs_f64();
        for &m in methods {
            let t = Instant::now();
            let r = run_method_on(&stage, &cfg, m).unwrap();
            progress(&format!("{} seed {seed} {}: {:.3}", cfg.mixture_label(), m.name(), r.final_stats.p_hat));
            mix.push(&method_key(m), r, t.elapsed().as_secs_f64());
        }
        for v in variants {
            let t = Instant::now();
            let r = run_variant_on(&stage, &cfg, v).unwrap();
            progress(&format!("{} seed {seed} {}: {:.3}", cfg.mixture_label(), v.name(), r.final_stats.p_hat));
            mix.push(&v.name(), r, t.elapsed().as_secs_f64());
        }
    }
    mix
}

fn tag_counts(r: &ReplicateResult, tag: StrategyTag) -> (usize, usize, f64) {
    r.composition
        .iter()
        .find(|c| c.tag == tag)
        .map_or((0, 0, f64::NAN), |c| (c.kept, c.discarded, c.mean_score))
}

fn criterion_4(m: &Mixture) -> (Verdict, f64) {
    let ds = pooled(m.reps("demo_score"));
    let base = pooled(m.reps("base"));
    let margin = ds.p_hat - base.p_hat;
    let secs = m.stage_seconds + m.cells["demo_score"].seconds + m.cells["base"].seconds;
    (
        verdict(
            margin >= 0.15 && ds.disjoint_from(&base) && secs < 1800.0,
            format!("demo_score {} vs base {}, margin {margin:.3}", fmt(&ds), fmt(&base)),
        ),
        secs,
    )
}

fn criterion_5(m: &Mixture) -> Verdict {
    let mut good = 0;
    let mut per_seed = Vec::new();
    for r in m.reps("demo_score") {
        let (wk, wd, _) = tag_counts(r, StrategyTag::WideA);
        let (nk, nd, _) = tag_counts(r, StrategyTag::NarrowB);
        let wide_kept = wk as f64 / (wk + wd) as f64;
        let narrow_discarded = nd as f64 / (nk + nd) as f64;
        if wide_kept >= 0.8 && narrow_discarded >= 0.8 {
            good += 1;
        }
        per_seed.push(format!("{wide_kept:.2}/{narrow_discarded:.2}"));
    }
    verdict(
        good >= 4,
        format!(
            "{good}/5 seeds pass; WideA kept / NarrowB discarded per seed: {}",
            per_seed.join(" ")
        ),
    )
}

/// Spearman correlation with average ranks for ties.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for k in i..=j {
                r[idx[k]] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn criterion_6(mixes: &[(usize, &Mixture)]) -> Verdict {
    let mut all_seeds = true;
    let mut narrow = Vec::new();
    let mut discarded = Vec::new();
    let mut parts = Vec::new();
    for (wide, m) in mixes {
        let ds = m.reps("demo_score");
        let base = m.reps("base");
        let wins = ds
            .iter()
            .zip(base)
            .filter(|(d, b)| d.final_stats.p_hat >= b.final_stats.p_hat)
            .count();
        let mean_disc =
            ds.iter().map(|r| r.curation.as_ref().unwrap().discarded.len() as f64).sum::<f64>() / ds.len() as f64;
        if *wide != 50 {
            all_seeds &= wins == ds.len();
            parts.push(format!(
                "WideA{wide}: demo_score >= base in {wins}/{} seeds ({:.3} vs {:.3})",
                ds.len(),
                pooled(ds).p_hat,
                pooled(base).p_hat
            ));
        }
        narrow.push((100 - wide) as f64);
        discarded.push(mean_disc);
    }
    let rho = spearman(&narrow, &discarded);
    let disc: Vec<String> = narrow
        .iter()
        .zip(&discarded)
        .map(|(n, d)| format!("NarrowB{n}:{d:.1}"))
        .collect();
    verdict(
        all_seeds && rho == 1.0,
        format!("{}; mean discarded {} (Spearman {rho:.2})", parts.join("; "), disc.join(" ")),
    )
}

fn criterion_7(m: &Mixture) -> Verdict {
    let mean = |k: &str| pooled(m.reps(k)).p_hat;
    let ds = mean("demo_score");
    let others = ["auto_il", "rcp", "loss_weighting"];
    let pass = others.iter().all(|k| ds >= mean(k)) && mean("auto_il") >= mean("base");
    verdict(
        pass,
        format!(
            "demo_score {ds:.3}, auto_il {:.3}, rcp {:.3}, loss_weighting {:.3}, base {:.3}",
            mean("auto_il"),
            mean("rcp"),
            mean("loss_weighting"),
            mean("base")
        ),
    )
}

fn criterion_8(m: &Mixture) -> Verdict {
    let base = pooled(m.reps("base")).p_hat;
    let m50 = pooled(m.reps("demo_score")).p_hat - base;
    let m10 = pooled(m.reps("rollouts_10")).p_hat - base;
    verdict(
        m50 - m10 <= 0.10,
        format!("margin over base with 50 rollouts {m50:.3}, with 10 rollouts {m10:.3}, degradation {:.3}", m50 - m10),
    )
}

fn score_gap(reps: &[ReplicateResult]) -> f64 {
    let mean = |tag| reps.iter().map(|r| tag_counts(r, tag).2).sum::<f64>() / reps.len() as f64;
    mean(StrategyTag::WideA) - mean(StrategyTag::NarrowB)
}

fn criterion_9(m: &Mixture) -> Verdict {
    let orig = pooled(m.reps("demo_score")).p_hat;
    let nocv = pooled(m.reps("no_cv")).p_hat;
    let (g_orig, g_nocv) = (score_gap(m.reps("demo_score")), score_gap(m.reps("no_cv")));
    verdict(
        nocv < orig || g_nocv < g_orig,
        format!("final success original {orig:.3} vs no_cv {nocv:.3}; WideA-NarrowB score gap original {g_orig:.3} vs no_cv {g_nocv:.3}"),
    )
}

fn criterion_10(mixes: &[&Mixture]) -> Verdict {
    let mut n = 0;
    let mut bad = 0;
    for c in mixes.iter().flat_map(|m| m.curations()) {
        n += 1;
        if !c.selection_is_optimal() {
            bad += 1;
        }
    }
    verdict(
        bad == 0 && n > 0,
        format!("{n} curation runs checked, {bad} with a non-minimal chosen validation loss"),
    )
}

fn criterion_11() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("config.json");
    let cfg = ExperimentConfig {
        seeds: vec![0],
        ..config(50)
    };
    std::fs::write(&cfg_path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let run = Command::new(env!("CARGO_BIN_EXE_demoscore"))
            .args(["run", "--config", cfg_path.to_str().unwrap(), "--method", "demo_score"])
            .args(["--out", out.to_str().unwrap()])
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        if !run.status.success() {
            return verdict(
                false,
                format!("demoscore run exited with {}: {}", run.status, String::from_utf8_lossy(&run.stderr)),
            );
        }
        let read = |f: &str| std::fs::read(out.join(f)).unwrap();
        outputs.push((read("seed-0/demo_score-original/curation.json"), read("summary.csv")));
    }
    verdict(
        outputs[0] == outputs[1],
        format!(
            "curation.json identical: {}, summary.csv identical: {}",
            outputs[0].0 == outputs[1].0,
            outputs[0].1 == outputs[1].1
        ),
    )
}

fn criterion_12(m: &Mixture, variants: &[Variant]) -> Verdict {
    let orig = pooled(m.reps("demo_score")).p_hat;
    let mut pass = true;
    let mut parts = Vec::new();
    for v in variants {
        let key = v.name();
        let p = pooled(m.reps(&key)).p_hat;
        pass &= m.reps(&key).len() == SEEDS.len() && (p - orig).abs() <= 0.25;
        parts.push(format!("{key} {p:.3}"));
    }
    verdict(pass, format!("original {orig:.3}; {}", parts.join(", ")))
}

fn main() -> ExitCode {
    let mut lines: Vec<(usize, &str, Verdict, f64)> = Vec::new();
    let timed = |id: usize, name: &'static str, budget: f64, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let mut v = f();
        let secs = t.elapsed().as_secs_f64();
        if secs > budget {
            v.pass = false;
            v.detail.push_str(&format!("; over the {budget:.0} s budget"));
        }
        progress(&format!("criterion {id} done"));
        (id, name, v, secs)
    };

    lines.push(timed(1, "gradient checks", 10.0, &mut criterion_1));
    lines.push(timed(2, "formula oracles", 5.0, &mut criterion_2));
    lines.push(timed(3, "environment calibration", 600.0, &mut criterion_3));
    lines.push(timed(11, "determinism", f64::INFINITY, &mut criterion_11));

    let shape_variants: Vec<Variant> = [Variant::Chunk, Variant::Trajectory, Variant::Plateau, Variant::NoReg]
        .into_iter()
        .chain(CLASSIFIER_SIZES.iter().map(|h| Variant::ClassifierSize(h.to_vec())))
        .collect();
    let mut variants = vec![Variant::Rollouts(10), Variant::NoCv];
    variants.extend(shape_variants.iter().cloned());

    let t = Instant::now();
    let main_mix = run_mixture(50, &Method::ALL, &variants);
    let main_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let lopsided = [80, 20].map(|w| run_mixture(w, &[Method::Base, Method::DemoScore], &[]));
    let lop_secs = t.elapsed().as_secs_f64();

    let (v4, s4) = criterion_4(&main_mix);
    lines.push((4, "headline margin", v4, s4));
    lines.push((5, "filter fidelity", criterion_5(&main_mix), 0.0));
    lines.push((
        6,
        "lopsided mixtures",
        criterion_6(&[(80, &lopsided[0]), (50, &main_mix), (20, &lopsided[1])]),
        lop_secs,
    ));
    lines.push((7, "method ordering", criterion_7(&main_mix), 0.0));
    lines.push((8, "rollout budget", criterion_8(&main_mix), main_mix.cells["rollouts_10"].seconds));
    lines.push((9, "cross-validation", criterion_9(&main_mix), main_mix.cells["no_cv"].seconds));
    lines.push((10, "selection invariant", criterion_10(&[&main_mix, &lopsided[0], &lopsided[1]]), 0.0));
    let s12: f64 = shape_variants.iter().map(|v| main_mix.cells[&v.name()].seconds).sum();
    lines.push((12, "variant totality", criterion_12(&main_mix, &shape_variants), s12));
    progress(&format!("mixture runs took {:.0} s", main_secs + lop_secs));

    lines.sort_by_key(|l| l.0);
    let mut failed = 0;
    for (id, name, v, secs) in &lines {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!v.pass);
        println!("criterion {id:>2} {tag} {name}: {} ({secs:.1} s)", v.detail);
    }
    println!("{} of {} criteria passed", lines.len() - failed, lines.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
