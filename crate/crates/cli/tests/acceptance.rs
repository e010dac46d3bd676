//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints one PASS or FAIL line; exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use flustack_cli::{execute, Command, Study};
use flustack_core::components::{
    test_phase_predictions, trajectories_to_target_density, Component, KdeComponent, SarComponent,
    TrajectorySample,
};
use flustack_core::dist::{clamp_display, log_score, MAX_SEASON_WEEKS};
use flustack_core::ensemble::{
    apply_models, boost_fit, dem_fit, loss_grad_hess, stacking_loss, train_model, training_tables,
    EnsembleModel, FeatureVector, ModelWeights, Scheme, TableRow, TrainConfig, TrainOptions,
    TrainingTable,
};
use flustack_core::evaluation::{read_scores, write_scores, ScoreRow, ScoreTable};
use flustack_core::season::{onset_week, peak, synthesize_seasons, GeneratorConfig, Template};
use flustack_core::{BinnedDensity, ComponentId, DataSplit, Outcome, Season, Target};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// Gradient correctness

fn gradient_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let rows = 20;
    let step = 1e-5;
    let mut worst_g: f64 = 0.0;
    let mut worst_h: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    for instance in 0..100 {
        let m = 2 + instance % 3;
        let rho: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..m).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let f: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..m).map(|_| rng.random_range(0.001..1.0)).collect())
            .collect();
        let (g, h) = loss_grad_hess(&rho, &f).map_err(err)?;
        for t in 0..rows {
            worst_sum = worst_sum.max(g[t].iter().sum::<f64>().abs());
            for c in 0..m {
                let shifted = |delta: f64| {
                    let mut r = rho.clone();
                    r[t][c] += delta;
                    r
                };
                // The mean loss scales each row's contribution by 1/rows.
                let fd = rows as f64
                    * (stacking_loss(&shifted(step), &f).map_err(err)?
                        - stacking_loss(&shifted(-step), &f).map_err(err)?)
                    / (2.0 * step);
                let fd_h = (loss_grad_hess(&shifted(step), &f).map_err(err)?.0[t][c]
                    - loss_grad_hess(&shifted(-step), &f).map_err(err)?.0[t][c])
                    / (2.0 * step);
                let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
                worst_g = worst_g.max(rel(g[t][c], fd));
                worst_h = worst_h.max(rel(h[t][c], fd_h));
            }
        }
    }
    ensure(worst_g < 1e-6, || format!("gradient relative error {worst_g:.2e}"))?;
    ensure(worst_h < 1e-6, || format!("hessian relative error {worst_h:.2e}"))?;
    ensure(worst_sum < 1e-12, || format!("gradient row sum {worst_sum:.2e}"))?;
    Ok(format!(
        "max rel err g {worst_g:.1e}, h {worst_h:.1e}; max |row sum| {worst_sum:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// EW equivalence

fn small_generator(regions: usize, seasons: usize, seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        regions,
        seasons,
        first_season: 2003,
        template: Template {
            baseline: 0.8,
            peak_week: 16.0,
            height: 4.0,
            width: 3.0,
        },
        noise_sd: 0.1,
        seed,
        peak_shift_sd: 3.0,
        height_log_sd: 0.3,
        onset_threshold: 2.0,
    }
}

fn ew_equivalence() -> Check {
    let data = synthesize_seasons(&small_generator(2, 6, 11)).map_err(err)?;
    let split = DataSplit::last_n_test(data.keys().map(|(_, s)| *s), 2).map_err(err)?;
    let components: Vec<Box<dyn Component>> = vec![
        Box::new(KdeComponent { samples: 200 }),
        Box::new(SarComponent { order: 2, samples: 200 }),
    ];
    let set = test_phase_predictions(&components, &data, &split, &Target::ALL, 5).map_err(err)?;
    let ids = vec![ComponentId::new("kde"), ComponentId::new("sar")];
    let unc = vec![ComponentId::new("sar")];
    let start = Instant::now();
    let tables = training_tables(&set, &data, &ids, &unc).map_err(err)?;
    let mut models = Vec::new();
    for table in &tables {
        let layout = Scheme::Fw.layout(&unc).unwrap();
        let config = TrainConfig { iterations: 0, ..Default::default() };
        let field = boost_fit(&table.stacking_rows(&layout).map_err(err)?, &config).map_err(err)?;
        let base = EnsembleModel {
            scheme: Scheme::Ew,
            region: table.region.clone(),
            target: table.target,
            components: ids.clone(),
            weights: ModelWeights::Equal,
        };
        models.push(EnsembleModel {
            scheme: Scheme::Fw,
            weights: ModelWeights::Feature { layout, field, config },
            ..base.clone()
        });
        models.push(base);
    }
    let applied = apply_models(&models, &set, &data).map_err(err)?;
    type Slot = (String, Season, u32, Target);
    let mut by_slot: BTreeMap<Slot, Vec<(&ComponentId, &BinnedDensity)>> = BTreeMap::new();
    for (key, d) in applied.predictions.densities() {
        by_slot
            .entry((key.region.clone(), key.season, key.season_week, key.target))
            .or_default()
            .push((&key.component, d));
    }
    let mut compared = 0;
    for (slot, ds) in &by_slot {
        ensure(ds.len() == 2, || format!("slot {slot:?} has {} ensemble densities", ds.len()))?;
        let same = ds[0].1.probs().iter().zip(ds[1].1.probs()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, || format!("slot {slot:?} differs between {} and {}", ds[0].0, ds[1].0))?;
        compared += 1;
    }
    ensure(compared > 0, || "no keys compared".into())?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), || format!("fit and comparison took {elapsed:?}"))?;
    Ok(format!("{compared} keys bitwise equal; fit+apply {:.2}s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------------------
// dEM correctness

/// Discretized normal over the 34 peak-week bins.
fn bump(center: f64, sd: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=MAX_SEASON_WEEKS)
        .map(|w| (-0.5 * ((w as f64 - center) / sd).powi(2)).exp() + 1e-3)
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

fn loglik(table: &[Vec<f64>], w: &[f64]) -> f64 {
    table.iter().map(|r| r.iter().zip(w).map(|(f, w)| f * w).sum::<f64>().ln()).sum()
}

fn dem_correctness() -> Check {
    let truth = [0.6, 0.3, 0.1];
    let comps = [bump(8.0, 3.0), bump(17.0, 3.0), bump(26.0, 3.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let table: Vec<Vec<f64>> = (0..10_000)
        .map(|_| {
            let u: f64 = rng.random();
            let k = if u < truth[0] { 0 } else if u < truth[0] + truth[1] { 1 } else { 2 };
            let v: f64 = rng.random();
            let mut acc = 0.0;
            let bin = comps[k].iter().position(|p| {
                acc += p;
                v < acc
            });
            let bin = bin.unwrap_or(comps[k].len() - 1);
            comps.iter().map(|c| c[bin]).collect()
        })
        .collect();
    let start = Instant::now();
    let fit = dem_fit(&table, 1e-12, 100_000).map_err(err)?;
    let fit_time = start.elapsed();
    ensure(fit_time < Duration::from_secs(10), || format!("fit took {fit_time:?}"))?;
    for (w, t) in fit.weights.iter().zip(truth) {
        ensure((w - t).abs() <= 0.02, || format!("weights {:?} vs {truth:?}", fit.weights))?;
    }
    let drops = fit.log_likelihood.windows(2).filter(|p| p[1] < p[0]).count();
    ensure(drops == 0, || format!("log-likelihood decreased {drops} times"))?;

    // Simplex grid oracle on a subsample.
    let sub: Vec<Vec<f64>> = table[..100].to_vec();
    let sub_fit = dem_fit(&sub, 1e-14, 100_000).map_err(err)?;
    let n = 1000;
    let mut best = (f64::NEG_INFINITY, [0.0; 3]);
    for i in 0..=n {
        for j in 0..=(n - i) {
            let w = [i as f64 / n as f64, j as f64 / n as f64, (n - i - j) as f64 / n as f64];
            let ll = loglik(&sub, &w);
            if ll > best.0 {
                best = (ll, w);
            }
        }
    }
    let sub_ll = loglik(&sub, &sub_fit.weights);
    ensure(sub_ll >= best.0 - 1e-9, || format!("EM loglik {sub_ll} below grid optimum {}", best.0))?;
    for (a, b) in sub_fit.weights.iter().zip(best.1) {
        ensure((a - b).abs() <= 0.005, || format!("subsample EM {:?} vs grid {:?}", sub_fit.weights, best.1))?;
    }
    Ok(format!(
        "weights ({:.4}, {:.4}, {:.4}) after {} iterations in {:.3}s; subsample matches grid optimum ({:.3}, {:.3}, {:.3})",
        fit.weights[0], fit.weights[1], fit.weights[2], fit.iterations, fit_time.as_secs_f64(), best.1[0], best.1[1], best.1[2]
    ))
}

// ---------------------------------------------------------------------------
// Regime construction shared by the next criteria

const COMPONENTS: [&str; 2] = ["a", "b"];

/// Component A is sharp at the truth in weeks 1-10, component B afterwards.
/// `noise_sd` is the log-scale noise on each density value.
fn regime_table(rng: &mut ChaCha8Rng, seasons: std::ops::Range<i32>, noise_sd: f64) -> TrainingTable {
    let noise = Normal::new(0.0, noise_sd.max(1e-300)).unwrap();
    let mut rows = Vec::new();
    for s in seasons {
        for week in 1..=33u32 {
            let (a, b) = if week <= 10 { (0.4, 0.05) } else { (0.05, 0.4) };
            let jitter = |rng: &mut ChaCha8Rng, v: f64| {
                let e = if noise_sd > 0.0 { noise.sample(rng) } else { 0.0 };
                (v * f64::exp(e)).min(1.0)
            };
            let densities = vec![jitter(rng, a), jitter(rng, b)];
            let uncertainty = COMPONENTS
                .iter()
                .map(|c| (ComponentId::new(*c), rng.random_range(1..30)))
                .collect();
            rows.push(TableRow {
                season: Season::starting(s),
                season_week: week,
                features: FeatureVector {
                    season_week: week,
                    uncertainty,
                    current_wili: Some(rng.random_range(0.5..6.0)),
                },
                densities,
            });
        }
    }
    TrainingTable {
        region: "Synthetic".into(),
        target: Target::PeakWeek,
        components: COMPONENTS.iter().map(|c| ComponentId::new(*c)).collect(),
        rows,
    }
}

fn held_out_mean_log_score(model: &EnsembleModel, test: &TrainingTable) -> Result<f64, String> {
    let mut total = 0.0;
    for r in &test.rows {
        let w = model.predict_weights(&r.features).map_err(err)?;
        total += w.iter().zip(&r.densities).map(|(w, f)| w * f).sum::<f64>().ln();
    }
    Ok(total / test.rows.len() as f64)
}

fn weight_at(model: &EnsembleModel, week: u32, component: usize) -> Result<f64, String> {
    let x = FeatureVector {
        season_week: week,
        uncertainty: BTreeMap::new(),
        current_wili: None,
    };
    Ok(model.predict_weights(&x).map_err(err)?[component])
}

fn regime_tracking() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let train = regime_table(&mut rng, 2000..2008, 0.3);
    let test = regime_table(&mut rng, 2008..2010, 0.3);
    let options = TrainOptions::default();
    let fw = train_model(Scheme::FwRegW, &train, &[], &options).map_err(err)?.model;
    let cw = train_model(Scheme::Cw, &train, &[], &options).map_err(err)?.model;
    let (w5, w20) = (weight_at(&fw, 5, 1)?, weight_at(&fw, 20, 1)?);
    ensure(w20 > w5, || format!("B weight at week 20 ({w20:.3}) not above week 5 ({w5:.3})"))?;
    let (fw_score, cw_score) = (held_out_mean_log_score(&fw, &test)?, held_out_mean_log_score(&cw, &test)?);
    ensure(fw_score >= cw_score, || format!("FW-reg-w {fw_score:.4} < CW {cw_score:.4}"))?;
    let chosen = match &fw.weights {
        ModelWeights::Feature { config, .. } => *config,
        _ => unreachable!(),
    };
    Ok(format!(
        "B weight {w5:.3} at week 5 -> {w20:.3} at week 20; held-out mean log score FW-reg-w {fw_score:.4} vs CW {cw_score:.4} (B={}, lambda_leaf={}, lambda_value={})",
        chosen.iterations, chosen.lambda_leaf, chosen.lambda_value
    ))
}

// ---------------------------------------------------------------------------
// Regularization benefit

fn eq3_loss(model: &EnsembleModel, test: &TrainingTable) -> Result<f64, String> {
    let mut rows_rho = Vec::new();
    let mut rows_f = Vec::new();
    let layout = match &model.weights {
        ModelWeights::Feature { layout, .. } => layout.clone(),
        _ => return Err("expected a feature-weighted model".into()),
    };
    for r in test.stacking_rows(&layout).map_err(err)? {
        let ModelWeights::Feature { field, .. } = &model.weights else { unreachable!() };
        rows_rho.push(field.latent(&r.features).map_err(err)?);
        rows_f.push(r.densities);
    }
    stacking_loss(&rows_rho, &rows_f).map_err(err)
}

fn regularization_benefit() -> Check {
    let mut wins = 0;
    let mut details = Vec::new();
    for replicate in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + replicate);
        let train = regime_table(&mut rng, 2000..2005, 1.0);
        let test = regime_table(&mut rng, 2005..2008, 1.0);
        let options = TrainOptions::default();
        let regularized = train_model(Scheme::FwRegW, &train, &[], &options).map_err(err)?.model;
        let layout = Scheme::FwRegW.layout(&[]).unwrap();
        let config = TrainConfig {
            iterations: 300,
            lambda_leaf: 0.0,
            lambda_value: 0.0,
            ..options.base
        };
        let field = boost_fit(&train.stacking_rows(&layout).map_err(err)?, &config).map_err(err)?;
        let unpenalized = EnsembleModel {
            weights: ModelWeights::Feature { layout, field, config },
            ..regularized.clone()
        };
        let (reg, plain) = (eq3_loss(&regularized, &test)?, eq3_loss(&unpenalized, &test)?);
        if reg <= plain {
            wins += 1;
        }
        details.push(format!("{reg:.4}/{plain:.4}"));
    }
    ensure(wins >= 4, || format!("regularized loss lower in {wins}/5 replicates ({})", details.join(", ")))?;
    Ok(format!("regularized <= unpenalized in {wins}/5 replicates (held-out loss {})", details.join(", ")))
}

// ---------------------------------------------------------------------------
// Target extraction oracle

fn brute_onset(values: &[f64], threshold: f64) -> Option<u32> {
    for start in 0..values.len() {
        if start + 3 > values.len() {
            break;
        }
        let mut all = true;
        for v in &values[start..start + 3] {
            if *v < threshold {
                all = false;
            }
        }
        if all {
            return Some(start as u32 + 1);
        }
    }
    None
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

fn brute_peak(values: &[f64]) -> (f64, Vec<u32>) {
    let mut best = f64::NEG_INFINITY;
    for v in values {
        if round1(*v) > best {
            best = round1(*v);
        }
    }
    let mut weeks = Vec::new();
    for (i, v) in values.iter().enumerate() {
        if round1(*v) == best {
            weeks.push(i as u32 + 1);
        }
    }
    (best, weeks)
}

fn brute_incidence_bin(v: f64) -> usize {
    if v < 0.05 {
        return 0;
    }
    if v >= 13.05 {
        return 131;
    }
    let mut k = 1;
    while !(v >= k as f64 / 10.0 - 0.05 && v < k as f64 / 10.0 + 0.05) {
        k += 1;
    }
    k
}

fn random_series(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let peak_week = rng.random_range(1.0..len as f64);
    let height = rng.random_range(0.0..8.0);
    (1..=len)
        .map(|w| {
            let base = 0.5 + height * (-0.5 * ((w as f64 - peak_week) / 3.0).powi(2)).exp();
            // Coarse values make rounding ties common.
            let v: f64 = base + rng.random_range(-0.3..0.3);
            (v.max(0.0) * 20.0).round() / 20.0
        })
        .collect()
}

fn target_extraction() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut ties = 0;
    for _ in 0..1000 {
        let len = if rng.random_bool(0.2) { 34 } else { 33 };
        let series = random_series(&mut rng, len);
        let threshold = rng.random_range(0.5..4.0);
        ensure(onset_week(&series, threshold) == brute_onset(&series, threshold), || {
            format!("onset mismatch on {series:?}")
        })?;
        let got = peak(&series).map_err(err)?;
        ensure(got == brute_peak(&series), || format!("peak mismatch on {series:?}"))?;
        if got.1.len() > 1 {
            ties += 1;
        }
    }
    let mut max_diff: f64 = 0.0;
    for _ in 0..200 {
        let len = if rng.random_bool(0.2) { 34u32 } else { 33 };
        let prefix_len = rng.random_range(0..len as usize - 2);
        let full = random_series(&mut rng, len as usize);
        let prefix = &full[..prefix_len];
        let n = rng.random_range(1..=100);
        let width = len as usize - prefix_len;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| random_series(&mut rng, len as usize)[prefix_len..].to_vec()).collect();
        let sample = TrajectorySample::new(n, width, rows.concat()).map_err(err)?;
        let threshold = rng.random_range(0.5..4.0);
        for target in Target::ALL {
            let density = trajectories_to_target_density(&sample, prefix, len, target, Some(threshold)).map_err(err)?;
            let mut expected = vec![0.0; target.scheme().len()];
            for row in &rows {
                let spliced: Vec<f64> = prefix.iter().chain(row).copied().collect();
                match target {
                    Target::OnsetWeek => {
                        let bin = brute_onset(&spliced, threshold).map_or(34, |w| w as usize - 1);
                        expected[bin] += 1.0 / n as f64;
                    }
                    Target::PeakWeek => {
                        let (_, weeks) = brute_peak(&spliced);
                        for w in &weeks {
                            expected[*w as usize - 1] += 1.0 / (n * weeks.len()) as f64;
                        }
                    }
                    Target::PeakIncidence => {
                        expected[brute_incidence_bin(brute_peak(&spliced).0)] += 1.0 / n as f64;
                    }
                }
            }
            for (a, b) in density.probs().iter().zip(&expected) {
                max_diff = max_diff.max((a - b).abs());
                // Only the summation order of fractional shares may differ.
                ensure((a - b).abs() <= 1e-12, || format!("{target} density differs: {a} vs {b}"))?;
            }
            let support_matches = density.probs().iter().zip(&expected).all(|(a, b)| (*a > 0.0) == (*b > 0.0));
            ensure(support_matches, || format!("{target} support differs"))?;
        }
    }
    Ok(format!(
        "1000 series agree ({ties} with tied peaks); 200 samples x 3 targets agree, max |diff| {max_diff:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// Scoring fidelity

fn scoring_fidelity() -> Check {
    let scheme = Target::PeakWeek.scheme();
    for i in 0..scheme.len() {
        let one_hot = BinnedDensity::point_mass(Target::PeakWeek, i).map_err(err)?;
        let hit = Outcome::peak_week([i as u32 + 1]).map_err(err)?;
        ensure(log_score(&one_hot, &hit).map_err(err)? == 0.0, || "one-hot hit is not ln 1".into())?;
    }
    for target in Target::ALL {
        let u = BinnedDensity::uniform(target);
        let outcome = match target {
            Target::OnsetWeek => Outcome::onset(Some(4)),
            Target::PeakWeek => Outcome::peak_week([12]).map_err(err)?,
            Target::PeakIncidence => Outcome::peak_incidence(3.27).map_err(err)?,
        };
        let expected = (1.0 / target.scheme().len() as f64).ln();
        let got = log_score(&u, &outcome).map_err(err)?;
        ensure((got - expected).abs() < 1e-12, || format!("{target} uniform: {got} vs {expected}"))?;
    }
    let mut probs = vec![0.0; 34];
    probs[9] = 0.2;
    probs[10] = 0.3;
    probs[20] = 0.5;
    let d = BinnedDensity::new(Target::PeakWeek, probs).map_err(err)?;
    let tie = log_score(&d, &Outcome::peak_week([10, 11]).map_err(err)?).map_err(err)?;
    ensure((tie - 0.5f64.ln()).abs() < 1e-15, || format!("tie score {tie}"))?;
    let zero = log_score(&d, &Outcome::peak_week([1]).map_err(err)?).map_err(err)?;
    ensure(zero == f64::NEG_INFINITY, || format!("zero-probability score {zero}"))?;
    ensure(clamp_display(zero) == -15.0, || "display clamp is not -15".into())?;

    let table = ScoreTable {
        rows: vec![ScoreRow {
            model: "m".into(),
            region: "r".into(),
            season: Season::starting(2010),
            season_week: 3,
            target: Target::PeakWeek,
            log_score: zero,
            before_target: true,
        }],
    };
    let mut buf = Vec::new();
    write_scores(&table, &mut buf).map_err(err)?;
    let text = String::from_utf8(buf.clone()).map_err(err)?;
    let line = text.lines().nth(1).unwrap_or_default().to_string();
    ensure(line.ends_with(",-15,true,true"), || format!("exported row {line:?}"))?;
    let back = read_scores(buf.as_slice()).map_err(err)?;
    ensure(back.rows[0].log_score == f64::NEG_INFINITY, || "flag not restored on read".into())?;
    Ok(format!("one-hot, uniform and tie scores exact; -inf exported as {line:?}"))
}

// ---------------------------------------------------------------------------
// Determinism of the full pipeline

const STUDY: &str = r#"
seed = 99
output = "out"

[data]
wili = "data/wili.csv"
thresholds = "data/thresholds.csv"

[simulate]
regions = 2
seasons = 7
first_season = 2008
noise_sd = 0.12
seed = 3
peak_shift_sd = 2.5
height_log_sd = 0.3

[simulate.template]
peak_week = 16.0
height = 4.0

[split]
test_last = 2

[components.kde]
samples = 300

[components.sar]
samples = 300

[ensemble]
schemes = ["ew", "cw", "fw", "fw-reg-w", "fw-reg-wu", "fw-reg-wui"]
uncertainty_components = ["sar"]

[ensemble.train]
fw_iterations = 30

[ensemble.train.grid]
iterations = [5, 30]
lambda_leaf = [0.0, 1.0]
lambda_value = [0.0, 1.0]
"#;

fn run_study(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    std::fs::write(dir.join("study.toml"), STUDY).map_err(err)?;
    let study = Study::load(&dir.join("study.toml"), None, None).map_err(err)?;
    execute(Command::Simulate, &study).map_err(err)?;
    execute(Command::All, &study).map_err(err)?;
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(err)? {
            let path = entry.map_err(err)?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv" || e == "json") {
                let rel = path.strip_prefix(dir).map_err(err)?.display().to_string();
                files.insert(rel, std::fs::read(&path).map_err(err)?);
            }
        }
    }
    Ok(files)
}

fn determinism() -> Check {
    let a = tempfile::tempdir().map_err(err)?;
    let b = tempfile::tempdir().map_err(err)?;
    let first = run_study(a.path())?;
    let second = run_study(b.path())?;
    ensure(first.keys().eq(second.keys()), || "runs produced different file sets".into())?;
    for (name, bytes) in &first {
        ensure(second[name] == *bytes, || format!("{name} differs between runs"))?;
    }
    let csvs = first.keys().filter(|k| k.ends_with(".csv")).count();
    for required in ["out/figures/scores.csv", "out/figures/rankings.csv", "out/figures/weights.csv"] {
        ensure(first.contains_key(required), || format!("{required} missing"))?;
    }
    Ok(format!("{csvs} CSV and {} JSON artifacts byte-identical", first.len() - csvs))
}

// ---------------------------------------------------------------------------
// Serialization round trip

fn serialization_round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let table = regime_table(&mut rng, 2000..2006, 0.3);
    let unc: Vec<ComponentId> = COMPONENTS.iter().map(|c| ComponentId::new(*c)).collect();
    let model = train_model(Scheme::Fw, &table, &unc, &TrainOptions::default()).map_err(err)?.model;
    let dir = tempfile::tempdir().map_err(err)?;
    let path = dir.path().join("fw.json");
    model.save(&path).map_err(err)?;
    let loaded = EnsembleModel::load(&path).map_err(err)?;
    ensure(loaded == model, || "reloaded model differs structurally".into())?;
    for _ in 0..1000 {
        let x = FeatureVector {
            season_week: rng.random_range(1..=34),
            uncertainty: unc.iter().map(|c| (c.clone(), rng.random_range(1..=132))).collect(),
            current_wili: Some(rng.random_range(0.0..10.0)),
        };
        let (a, b) = (model.predict_weights(&x).map_err(err)?, loaded.predict_weights(&x).map_err(err)?);
        ensure(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()), || format!("weights differ at {x:?}"))?;
    }
    let trees = match &model.weights {
        ModelWeights::Feature { field, .. } => field.iterations(),
        _ => 0,
    };
    Ok(format!("1000 feature vectors bitwise equal after reload ({trees} iterations per component)"))
}

// ---------------------------------------------------------------------------

type Criterion = (&'static str, Duration, fn() -> Check);

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient correctness", Duration::from_secs(5), gradient_correctness),
        ("EW equivalence", Duration::from_secs(60), ew_equivalence),
        ("dEM correctness", Duration::from_secs(60), dem_correctness),
        ("regime tracking", Duration::from_secs(60), regime_tracking),
        ("regularization benefit", Duration::from_secs(300), regularization_benefit),
        ("target extraction oracle", Duration::from_secs(10), target_extraction),
        ("scoring fidelity", Duration::from_secs(1), scoring_fidelity),
        ("determinism", Duration::from_secs(120), determinism),
        ("serialization round-trip", Duration::from_secs(60), serialization_round_trip),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let result = result.and_then(|detail| {
            if elapsed <= budget {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {:.1}s, budget {:.0}s", elapsed.as_secs_f64(), budget.as_secs_f64()))
            }
        });
        match result {
            Ok(detail) => println!("PASS  {name} [{:.2}s]: {detail}", elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} [{:.2}s]: {why}", elapsed.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

