//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.
//!
//! Criteria 6 and 7 run the full synthetic pipeline (configs/synthetic.json)
//! eleven and two times respectively.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use domsel::adapt::{self, AdaptConfig, Variant};
use domsel::corpus::UnigramStats;
use domsel::downstream::success_labels;
use domsel::meta::{loto_ranker_splits, loto_splits, multi_sort};
use domsel::ngram_lm::{KnConfig, TrigramLm};
use domsel::pipeline::{run_pipeline, Mode, PipelineConfig, Target, Workspace};
use domsel::report::{crp, top_n, true_ordering};
use domsel::simfeat::{kl_divergence, renyi_divergence, UnigramDistribution};
use domsel::synth::{domain_name, mixture_overlap};
use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_chacha::ChaCha8Rng;

const SYNTHETIC_CONFIG: &str = include_str!("../../../configs/synthetic.json");

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

// ---- 1 -----------------------------------------------------------------

fn criterion_1() -> Outcome {
    let truth = names(&["StackOverflow", "AskUbuntu", "Apple", "Unix", "MRPC", "SuperUser", "SICK", "Math", "PAWS", "Quora"]);
    let pred = names(&["StackOverflow", "Math", "Apple", "SuperUser", "Unix", "AskUbuntu", "SICK", "MRPC", "PAWS", "Quora"]);
    let got = [
        crp(&pred, &truth).unwrap(),
        top_n(&pred, &truth, 1).unwrap(),
        top_n(&pred, &truth, 3).unwrap(),
        top_n(&pred, &truth, 5).unwrap(),
    ];
    let want = [0.5, 1.0, 2.0 / 3.0, 3.0 / 5.0];
    outcome(got == want, format!("CRP/Top1/Top3/Top5 = {got:?}, expected {want:?}"))
}

// ---- 2 -----------------------------------------------------------------

fn criterion_2() -> Outcome {
    let domains: Vec<String> = (0..11).map(|i| format!("d{i:02}")).collect();
    let p = loto_splits(&domains).unwrap();
    let r = loto_ranker_splits(&domains).unwrap();
    let p_ok = p.len() == 11 && p.iter().all(|s| s.train.len() == 100 && s.test.len() == 10);
    let r_ok = r.len() == 11 && r.iter().all(|s| s.train.len() == 450 && s.test.len() == 45);
    let shape = |v: Vec<(usize, usize)>| {
        let mut v = v;
        v.dedup();
        v
    };
    outcome(
        p_ok && r_ok,
        format!(
            "predictor {} splits {:?}, ranker {} splits {:?}",
            p.len(),
            shape(p.iter().map(|s| (s.train.len(), s.test.len())).collect()),
            r.len(),
            shape(r.iter().map(|s| (s.train.len(), s.test.len())).collect()),
        ),
    )
}

// ---- 3 -----------------------------------------------------------------
//
// Oracle: the expected reconstruction loss under feature dropout is written
// out term by term per sample and minimized by heavy-ball gradient descent.
// For one sample x (bias 1 appended, never dropped), keep probability
// q_j = 1 - p, the corrupted input z has
//   E[z_j] = q_j x_j,  E[z_j z_k] = q_j q_k x_j x_k (j != k),  E[z_j^2] = q_j x_j^2.

struct Moments {
    d: usize,
    /// Σ_i E[z_i z_iᵀ], (d+1)×(d+1)
    q: Vec<Vec<f64>>,
    /// Σ_i x_i E[z_i]ᵀ, d×(d+1)
    p: Vec<Vec<f64>>,
}

fn keep(d: usize, j: usize, p: f64) -> f64 {
    if j == d {
        1.0
    } else {
        1.0 - p
    }
}

fn expected_moments(cols: &[Vec<f64>], p: f64) -> Moments {
    let d = cols[0].len();
    let mut q = vec![vec![0.0; d + 1]; d + 1];
    let mut pm = vec![vec![0.0; d + 1]; d];
    for x in cols {
        let xb: Vec<f64> = x.iter().copied().chain([1.0]).collect();
        for j in 0..=d {
            for k in 0..=d {
                q[j][k] += if j == k {
                    keep(d, j, p) * xb[j] * xb[j]
                } else {
                    keep(d, j, p) * keep(d, k, p) * xb[j] * xb[k]
                };
            }
        }
        for i in 0..d {
            for j in 0..=d {
                pm[i][j] += x[i] * keep(d, j, p) * xb[j];
            }
        }
    }
    Moments { d, q, p: pm }
}

/// Domain regularizer terms, summed over target samples: for a = Wᵀu,
/// E(R - aᵀz)^2 = (R - aᵀE[z])^2 + Σ_j a_j^2 q_j (1 - q_j) x_j^2.
struct Regularizer {
    u: Vec<f64>,
    target: Vec<Vec<f64>>,
    p: f64,
    lambda: f64,
    r: f64,
}

/// Gradient of the (sum) objective at `w` (d×(d+1), row-major nested).
fn gradient(m: &Moments, reg: Option<&Regularizer>, w: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = m.d;
    let mut g = vec![vec![0.0; d + 1]; d];
    for i in 0..d {
        for k in 0..=d {
            let wq: f64 = (0..=d).map(|j| w[i][j] * m.q[j][k]).sum();
            g[i][k] = 2.0 * (wq - m.p[i][k]);
        }
    }
    if let Some(r) = reg {
        let a: Vec<f64> = (0..=d).map(|j| (0..d).map(|i| w[i][j] * r.u[i]).sum()).collect();
        for x in &r.target {
            let xb: Vec<f64> = x.iter().copied().chain([1.0]).collect();
            let mu: Vec<f64> = (0..=d).map(|j| keep(d, j, r.p) * xb[j]).collect();
            let var: Vec<f64> = (0..=d).map(|j| keep(d, j, r.p) * (1.0 - keep(d, j, r.p)) * xb[j] * xb[j]).collect();
            let resid = r.r - (0..=d).map(|j| a[j] * mu[j]).sum::<f64>();
            for i in 0..d {
                for j in 0..=d {
                    g[i][j] += r.lambda * (-2.0 * resid * r.u[i] * mu[j] + 2.0 * r.u[i] * a[j] * var[j]);
                }
            }
        }
    }
    g
}

fn frob(a: &[Vec<f64>]) -> f64 {
    a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

fn minimize(m: &Moments, steps_limit: usize) -> Vec<Vec<f64>> {
    let d = m.d;
    // Gershgorin bound on the largest eigenvalue of Q gives a safe step.
    let lmax = m.q.iter().map(|row| row.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let step = 1.0 / (2.0 * lmax);
    let beta = 0.9;
    let mut w = vec![vec![0.0; d + 1]; d];
    let mut vel = vec![vec![0.0; d + 1]; d];
    let scale = frob(&m.p).max(1.0);
    for _ in 0..steps_limit {
        let g = gradient(m, None, &w);
        if frob(&g) < 1e-11 * scale {
            break;
        }
        for i in 0..d {
            for j in 0..=d {
                vel[i][j] = beta * vel[i][j] - step * g[i][j];
                w[i][j] += vel[i][j];
            }
        }
    }
    w
}

fn to_nested(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn criterion_3() -> Outcome {
    let mut worst_gd = 0.0f64;
    let mut worst_stat = 0.0f64;
    let mut worst_eq = 0.0f64;
    let mut worst_ridge = 0.0f64;
    for inst in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + inst);
        let d = 2 + (inst as usize % 7);
        let n = 50;
        let p = if inst % 2 == 0 { 0.3 } else { 0.6 };
        let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                (0..d)
                    .map(|i| {
                        let z: f64 = rng.random_range(-1.5..1.5);
                        if j >= n / 2 {
                            z + shift[i]
                        } else {
                            z
                        }
                    })
                    .collect()
            })
            .collect();
        let x = DMatrix::from_fn(d, n, |i, j| cols[j][i]);
        let xs = x.columns(0, n / 2).into_owned();
        let xt = x.columns(n / 2, n - n / 2).into_owned();

        // mSDA closed form vs gradient descent.
        let w = to_nested(&adapt::msda_layer(&x, p).unwrap());
        let moments = expected_moments(&cols, p);
        let w_gd = minimize(&moments, 200_000);
        let diff: Vec<Vec<f64>> = w.iter().zip(&w_gd).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect();
        worst_gd = worst_gd.max(frob(&diff));

        // mSDAR: gradient of the regularized objective vanishes at the
        // closed form, normalized per sample.
        let cfg = AdaptConfig {
            dropout_p: p,
            lambda: 0.5 + inst as f64 * 0.1,
            reg_target: 1.0,
            ..AdaptConfig::msdar()
        };
        let layer = adapt::msdar_layer(&xs, &xt, &cfg).unwrap();
        let u: Vec<f64> = layer.domain_classifier.iter().copied().collect();
        let reg = Regularizer {
            u: u.clone(),
            target: cols[n / 2..].to_vec(),
            p,
            lambda: cfg.lambda,
            r: cfg.reg_target,
        };
        let g = gradient(&moments, Some(&reg), &to_nested(&layer.w));
        worst_stat = worst_stat.max(frob(&g) / n as f64);

        // u solves the ridge normal equations (X Xᵀ + 1e-3 I) u = X y.
        for i in 0..d {
            let lhs: f64 = (0..d).map(|k| (cols.iter().map(|c| c[i] * c[k]).sum::<f64>() + if i == k { 1e-3 } else { 0.0 }) * u[k]).sum();
            let rhs: f64 = cols[..n / 2].iter().map(|c| c[i]).sum();
            worst_ridge = worst_ridge.max((lhs - rhs).abs());
        }

        // λ = 0 reduces to mSDA on the pooled data.
        let zero = adapt::msdar_layer(&xs, &xt, &AdaptConfig { lambda: 0.0, ..cfg }).unwrap();
        worst_eq = worst_eq.max((zero.w - adapt::msda_layer(&x, p).unwrap()).abs().max());
    }
    outcome(
        worst_gd < 1e-3 && worst_stat < 1e-6 && worst_eq < 1e-9 && worst_ridge < 1e-8,
        format!(
            "max ‖W - W_gd‖_F = {worst_gd:.2e} (< 1e-3), mSDAR stationarity = {worst_stat:.2e} (< 1e-6), \
             |mSDAR(λ=0) - mSDA| = {worst_eq:.2e} (< 1e-9), ridge residual = {worst_ridge:.2e}"
        ),
    )
}

// ---- 4 -----------------------------------------------------------------

fn stats(counts: BTreeMap<String, u64>) -> UnigramStats {
    let total_tokens = counts.values().sum();
    UnigramStats {
        counts,
        total_tokens,
        example_count: 1,
        avg_tokens_per_example: 0.0,
    }
}

/// Token counts of `tokens` draws from `weights` over words `w0..`.
fn sample_counts(rng: &mut ChaCha8Rng, weights: &[f64], tokens: usize) -> UnigramStats {
    let dist = WeightedIndex::new(weights).unwrap();
    let mut counts = BTreeMap::new();
    for _ in 0..tokens {
        *counts.entry(format!("w{}", dist.sample(rng))).or_insert(0) += 1;
    }
    stats(counts)
}

/// The gap between Rényi of order 0.99 and KL grows roughly like 0.01·KL, so
/// the 0.02-bit bound is a statement about related corpora. Pairs are drawn
/// as corpus samples from a shared Zipfian vocabulary, the second one from
/// a log-normally perturbed copy (strength up to 1).
fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut identical_ok = true;
    let mut non_negative = true;
    let mut max_gap = 0.0f64;
    let mut max_kl = 0.0f64;
    for _ in 0..100 {
        let vocab = rng.random_range(20..200usize);
        let zipf: Vec<f64> = (1..=vocab).map(|r| 1.0 / r as f64).collect();
        let sigma = rng.random_range(0.0..1.0);
        let normal = Normal::new(0.0, sigma).unwrap();
        let shifted: Vec<f64> = zipf.iter().map(|w| w * f64::exp(normal.sample(&mut rng))).collect();
        let a = sample_counts(&mut rng, &zipf, 2000);
        let b = sample_counts(&mut rng, &shifted, 2000);
        let (p, q) = UnigramDistribution::smoothed_pair(&a, &b, 0.5).unwrap();
        identical_ok &= kl_divergence(&p, &p).unwrap() == 0.0 && renyi_divergence(&p, &p, 0.99).unwrap() == 0.0;
        let kl = kl_divergence(&p, &q).unwrap();
        let renyi = renyi_divergence(&p, &q, 0.99).unwrap();
        non_negative &= kl >= 0.0 && renyi >= 0.0;
        max_gap = max_gap.max((renyi - kl).abs());
        max_kl = max_kl.max(kl);
    }
    // Reported only: two unrelated count tables, where the exact gap exceeds
    // the bound whatever the implementation.
    let mut unrelated = BTreeMap::new();
    let mut other = BTreeMap::new();
    for i in 0..100 {
        unrelated.insert(format!("w{i}"), rng.random_range(1..50u64));
        other.insert(format!("w{}", i + 70), rng.random_range(1..50u64));
    }
    let (p, q) = UnigramDistribution::smoothed_pair(&stats(unrelated), &stats(other), 0.5).unwrap();
    let far_kl = kl_divergence(&p, &q).unwrap();
    let far_gap = (renyi_divergence(&p, &q, 0.99).unwrap() - far_kl).abs();
    outcome(
        identical_ok && non_negative && max_gap < 0.02,
        format!(
            "self-divergence exactly 0: {identical_ok}; non-negative: {non_negative}; max |Rényi - KL| = {max_gap:.4} bits (< 0.02) \
             with KL up to {max_kl:.2} bits; unrelated tables (not asserted): KL {far_kl:.2}, gap {far_gap:.4}"
        ),
    )
}

// ---- 5 -----------------------------------------------------------------

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vocab: Vec<String> = (0..30).map(|i| format!("v{i}")).collect();
    let text = |rng: &mut ChaCha8Rng, words: &[String]| {
        let len = rng.random_range(3..10);
        (0..len).map(|_| words[rng.random_range(0..words.len())].clone()).collect::<Vec<_>>()
    };
    let train: Vec<Vec<String>> = (0..200).map(|_| text(&mut rng, &vocab)).collect();
    let lm = TrigramLm::train(&train, KnConfig::default()).unwrap();
    let predictable: Vec<String> = lm.predictable().map(str::to_string).collect();
    let mut histories: Vec<String> = lm.vocab().to_vec();
    histories.push("<s>".into());
    histories.push("never-seen".into());
    let mut worst = 0.0f64;
    for h1 in &histories {
        for h2 in &histories {
            let s: f64 = predictable.iter().map(|w| lm.prob(h1, h2, w)).sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    let unseen = lm.prob("v1", "v3", "v5");
    let own = lm.perplexity_texts(&train).unwrap();
    let other_vocab: Vec<String> = (0..30).map(|i| format!("x{i}")).collect();
    let disjoint: Vec<Vec<String>> = (0..50).map(|_| text(&mut rng, &other_vocab)).collect();
    let foreign = lm.perplexity_texts(&disjoint).unwrap();
    outcome(
        worst < 1e-6 && unseen > 0.0 && own < foreign && lm.vocab().len() <= 50,
        format!(
            "vocab {}; max |Σ p - 1| = {worst:.2e} over {} histories; unseen trigram p = {unseen:.3e}; PPL own {own:.2} < disjoint {foreign:.2}",
            lm.vocab().len(),
            histories.len() * histories.len()
        ),
    )
}

// ---- 6 and 7 -----------------------------------------------------------

struct SeedMetrics {
    /// variant → mode → (mean CRP, mean Top1) over targets
    ordering: BTreeMap<(Variant, Mode), (f64, f64)>,
    /// variant → (source, target) → normalized F1
    normalized: BTreeMap<Variant, BTreeMap<(String, String), f64>>,
}

fn seed_metrics(ws_dir: &Path, cfg: &PipelineConfig) -> SeedMetrics {
    let ws = Workspace::open(ws_dir).unwrap();
    let mut ordering = BTreeMap::new();
    let mut normalized = BTreeMap::new();
    for v in cfg.variants() {
        let (m, mm) = ws.load_matrix(v).unwrap();
        let labels = success_labels(&m, mm.threshold).unwrap();
        let mut norm = BTreeMap::new();
        for s in &m.domains {
            for t in m.domains.iter().filter(|t| *t != s) {
                let key = (s.clone(), t.clone());
                norm.insert(key.clone(), labels.normalized[&key]);
            }
        }
        normalized.insert(v, norm);
        for mode in Mode::ALL {
            let orderings = ws.load_orderings(v, mode).unwrap();
            let (mut c, mut t1) = (0.0, 0.0);
            for o in &orderings {
                let truth = true_ordering(&m, &o.target).unwrap().ranked_sources;
                c += crp(&o.ranked_sources, &truth).unwrap();
                t1 += top_n(&o.ranked_sources, &truth, 1).unwrap();
            }
            let k = orderings.len() as f64;
            ordering.insert((v, mode), (c / k, t1 / k));
        }
    }
    SeedMetrics { ordering, normalized }
}

fn csv_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_6(scratch: &Path) -> (Outcome, PathBuf) {
    let base = PipelineConfig::from_json(SYNTHETIC_CONFIG).unwrap();
    let spec = base.synthetic.clone().unwrap();
    let mixtures = spec.topic_mixtures().unwrap();
    let mut per_seed = Vec::new();
    for seed in 1..=10u64 {
        let mut cfg = base.clone();
        cfg.apply_seed(seed);
        let dir = scratch.join(format!("seed_{seed}"));
        if let Err(e) = run_pipeline(&dir, &cfg, &Target::default(), 1) {
            return (outcome(false, format!("pipeline failed for seed {seed}: {e}")), dir);
        }
        per_seed.push(seed_metrics(&dir, &cfg));
    }

    // (a) overlap split at the median of the ordered pairs' mixture overlap.
    let mut overlaps: Vec<((String, String), f64)> = Vec::new();
    for s in 0..spec.domains {
        for t in 0..spec.domains {
            if s != t {
                overlaps.push(((domain_name(s), domain_name(t)), mixture_overlap(&mixtures[s], &mixtures[t])));
            }
        }
    }
    let mut sorted: Vec<f64> = overlaps.iter().map(|o| o.1).collect();
    sorted.sort_by(f64::total_cmp);
    let median = (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) / 2.0;

    let mut lines = Vec::new();
    let mut ok = true;
    for v in base.variants() {
        let (mut hi, mut lo, mut nh, mut nl) = (0.0, 0.0, 0usize, 0usize);
        for m in &per_seed {
            for (pair, ov) in &overlaps {
                let x = m.normalized[&v][pair];
                if *ov > median {
                    hi += x;
                    nh += 1;
                } else {
                    lo += x;
                    nl += 1;
                }
            }
        }
        let (hi, lo) = (hi / nh as f64, lo / nl as f64);
        let mean = |mode: Mode, k: usize| {
            per_seed
                .iter()
                .map(|m| {
                    let x = m.ordering[&(v, mode)];
                    if k == 0 {
                        x.0
                    } else {
                        x.1
                    }
                })
                .sum::<f64>()
                / per_seed.len() as f64
        };
        let (p_crp, p_top1) = (mean(Mode::Predictor, 0), mean(Mode::Predictor, 1));
        let (r_crp, r_top1) = (mean(Mode::Ranker, 0), mean(Mode::Ranker, 1));
        let random_top1 = 1.0 / (spec.domains - 1) as f64;
        let a = hi > lo;
        let b = p_top1 > random_top1 && r_top1 > random_top1;
        let c = r_crp >= p_crp || (r_crp - p_crp).abs() <= 0.05;
        ok &= a && b && c;
        lines.push(format!(
            "{v}: (a) normalized F1 high-overlap {hi:.3} vs low {lo:.3} [{}]; (b) Top1 predictor {p_top1:.3}, ranker {r_top1:.3} vs random {random_top1:.3} [{}]; (c) CRP ranker {r_crp:.3} vs predictor {p_crp:.3} [{}]",
            pf(a),
            pf(b),
            pf(c)
        ));
    }
    (outcome(ok, lines.join("\n    ")), scratch.join("seed_1"))
}

fn criterion_7(scratch: &Path, reference: &Path, budget: Duration) -> Outcome {
    let mut cfg = PipelineConfig::from_json(SYNTHETIC_CONFIG).unwrap();
    cfg.apply_seed(1);
    let want = csv_files(reference);
    let mut lines = Vec::new();
    let mut ok = !want.is_empty();
    for jobs in [1usize, 4] {
        let dir = scratch.join(format!("rerun_jobs_{jobs}"));
        if let Err(e) = run_pipeline(&dir, &cfg, &Target::default(), jobs) {
            return outcome(false, format!("pipeline failed with --jobs {jobs}: {e}"));
        }
        let got = csv_files(&dir);
        let differing: Vec<_> = want.keys().filter(|k| got.get(*k) != want.get(*k)).collect();
        let same = got.len() == want.len() && differing.is_empty();
        ok &= same;
        lines.push(format!("--jobs {jobs}: {} CSV files, identical = {same} {:?}", got.len(), differing));
    }
    lines.push(format!("budget {:.1}s", budget.as_secs_f64()));
    outcome(ok, lines.join("; "))
}

// ---- 8 -----------------------------------------------------------------

fn criterion_8() -> Outcome {
    let truth: Vec<u32> = vec![0, 1, 2, 3, 4];
    let mut recovered = 0;
    for trial in 0..100u64 {
        let mut noise = ChaCha8Rng::seed_from_u64(80_000 + trial);
        let ranked = multi_sort(&truth, |a, b| (a < b) ^ noise.random_bool(0.1), 15, trial).unwrap();
        if ranked.iter().map(|r| r.0).collect::<Vec<_>>() == truth {
            recovered += 1;
        }
    }
    let consistent = (0..100u64).all(|seed| {
        multi_sort(&truth, |a, b| a < b, 15, seed).unwrap().iter().map(|r| r.0).collect::<Vec<_>>() == truth
    });
    outcome(
        recovered >= 80 && consistent,
        format!("noisy comparator recovered {recovered}/100 (>= 80); consistent comparator exact for all seeds: {consistent}"),
    )
}

fn pf(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn report(n: usize, o: &Outcome, took: Duration, limit: Duration) -> bool {
    let in_time = took <= limit;
    let passed = o.passed && in_time;
    println!(
        "{} criterion {n}: {}\n    runtime {:.2}s (limit {:.0}s{})",
        pf(passed),
        o.detail,
        took.as_secs_f64(),
        limit.as_secs_f64(),
        if in_time { "" } else { ", EXCEEDED" }
    );
    passed
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn main() {
    // `cargo test -- --list` and filters: run everything regardless, but stay
    // quiet for listing.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    // ACCEPTANCE_ONLY=4,8 runs a subset (7 implies 6).
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n) || (n == 6 && o.contains(&7)));
    let scratch = tempfile::tempdir().unwrap();
    let mut all = true;
    let secs = Duration::from_secs;
    let simple: [(usize, fn() -> Outcome, u64); 6] = [
        (1, criterion_1, 1),
        (2, criterion_2, 1),
        (3, criterion_3, 30),
        (4, criterion_4, 5),
        (5, criterion_5, 10),
        (8, criterion_8, 5),
    ];
    for (n, f, limit) in simple.iter().filter(|c| c.0 < 6) {
        if wanted(*n) {
            let (o, t) = timed(f);
            all &= report(*n, &o, t, secs(*limit));
        }
    }
    if wanted(6) {
        let ((o, reference), t6) = timed(|| criterion_6(scratch.path()));
        all &= report(6, &o, t6, secs(15 * 60));
        if wanted(7) {
            let budget = 2 * t6;
            let (o, t) = timed(|| criterion_7(scratch.path(), &reference, budget));
            all &= report(7, &o, t, budget);
        }
    }
    let (n, f, limit) = simple[5];
    if wanted(n) {
        let (o, t) = timed(f);
        all &= report(n, &o, t, secs(limit));
    }

    if all {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: FAILED");
        std::process::exit(1);
    }
}
