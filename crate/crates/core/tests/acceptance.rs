//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero on any FAIL.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use goalfactor::corex::{assign_factors, fit, gaussianize, total_correlation_gaussian, FitConfig, Moments};
use goalfactor::corpus_store::{Document, Split};
use goalfactor::evalharness::{
    decision_tree_probe, hit_at_k_recommendation, majority_baseline, BaselineTask, LabeledRepresentation, Similarity,
    TreeParams,
};
use goalfactor::linker::embedding::TableEmbedder;
use goalfactor::linker::encoder::{batch_loss_and_grad, train_head, Head, PairSet, TrainConfig};
use goalfactor::linker::{binarize, materialize_matrix, score, CompatibilityMatrix, Encoder};
use goalfactor::proposer::{Property, PropertyPool};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

fn central_difference(params: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

// 1 ---------------------------------------------------------------------------

fn gradient_correctness() -> Outcome {
    let mut worst_contrastive: f64 = 0.0;
    let mut worst_corex: f64 = 0.0;
    let instances = 25;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);

        // contrastive: K ≤ 8 candidates, small dims, random masks
        let k = rng.gen_range(2..=8);
        let d_in = rng.gen_range(2..=6);
        let d_out = rng.gen_range(2..=6);
        let params: Vec<f64> = (0..d_out * d_in + d_out).map(|_| 0.5 * gauss(&mut rng)).collect();
        let docs: Vec<Vec<f64>> = (0..k).map(|_| (0..d_in).map(|_| gauss(&mut rng)).collect()).collect();
        let props: Vec<Vec<f64>> = (0..k).map(|_| (0..d_in).map(|_| gauss(&mut rng)).collect()).collect();
        let excluded: Vec<Vec<usize>> = (0..k)
            .map(|r| (0..k).filter(|&l| l != r && rng.gen_bool(0.2)).collect())
            .collect();
        let dr: Vec<&[f64]> = docs.iter().map(Vec::as_slice).collect();
        let pr: Vec<&[f64]> = props.iter().map(Vec::as_slice).collect();
        let (_, analytic) = batch_loss_and_grad(&params, &dr, &pr, &excluded);
        let numeric = central_difference(&params, |p| batch_loss_and_grad(p, &dr, &pr, &excluded).0);
        worst_contrastive = worst_contrastive.max(rel_err(&analytic, &numeric));

        // CorEx: N ≤ 32, P ≤ 8, m ≤ 3
        let n = rng.gen_range(8..=32);
        let p = rng.gen_range(2..=8);
        let m = rng.gen_range(1..=3.min(p));
        let data = Array2::from_shape_fn((n, p), |_| gauss(&mut rng));
        let w = Array2::from_shape_fn((m, p), |_| 0.5 * gauss(&mut rng));
        let moments = Moments::new(data.view(), 1.0);
        let (_, grad) = moments.loss_and_grad(&w);
        let flat: Vec<f64> = w.iter().cloned().collect();
        let numeric = central_difference(&flat, |v| {
            let wv = Array2::from_shape_vec((m, p), v.to_vec()).unwrap();
            moments.loss(&wv)
        });
        let analytic: Vec<f64> = grad.iter().cloned().collect();
        worst_corex = worst_corex.max(rel_err(&analytic, &numeric));
    }
    check(
        worst_contrastive < 1e-4 && worst_corex < 1e-4,
        format!(
            "{instances} instances each; worst rel err contrastive {worst_contrastive:.2e}, corex {worst_corex:.2e} (< 1e-4)"
        ),
    )
}

// 2 ---------------------------------------------------------------------------

fn tc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let indep = Array2::from_shape_fn((10_000, 4), |_| gauss(&mut rng));
    let tc0 = total_correlation_gaussian(indep.view()).unwrap();
    let mut ok = tc0.abs() <= 0.01;
    let mut detail = format!("independent {tc0:.4}");
    for rho in [0.3f64, 0.5, 0.8] {
        let expected = -0.5 * (1.0 - rho * rho).ln();
        let n = 10_000;
        let sample = Array2::from_shape_fn((n, 2), |_| 0.0);
        let mut sample = sample;
        for i in 0..n {
            let a = gauss(&mut rng);
            let b = gauss(&mut rng);
            sample[[i, 0]] = a;
            sample[[i, 1]] = rho * a + (1.0 - rho * rho).sqrt() * b;
        }
        let tc = total_correlation_gaussian(sample.view()).unwrap();
        ok &= (tc - expected).abs() <= 0.01;
        detail.push_str(&format!("; rho {rho}: {tc:.4} vs {expected:.4}"));
    }
    check(ok, detail + " (tol 0.01)")
}

// 3 ---------------------------------------------------------------------------

fn comb2(x: usize) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ra: HashMap<usize, usize> = HashMap::new();
    let mut rb: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| comb2(c)).sum();
    let sa: f64 = ra.values().map(|&c| comb2(c)).sum();
    let sb: f64 = rb.values().map(|&c| comb2(c)).sum();
    let expected = sa * sb / comb2(n);
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

fn factor_recovery() -> Outcome {
    let (blocks, per, n) = (3, 10, 2000);
    let loading = 0.85f64.sqrt(); // within-block |ρ| = 0.85
    let mut aris = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let signs: Vec<f64> = (0..blocks * per)
            .map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let mut raw = Array2::zeros((n, blocks * per));
        for i in 0..n {
            let z: Vec<f64> = (0..blocks).map(|_| gauss(&mut rng)).collect();
            for j in 0..blocks * per {
                let eps = gauss(&mut rng);
                raw[[i, j]] = signs[j] * (loading * z[j / per] + (1.0 - loading * loading).sqrt() * eps);
            }
        }
        let (g, _) = gaussianize(raw.view()).unwrap();
        let cfg = FitConfig {
            factors: blocks,
            seed,
            ..FitConfig::default()
        };
        let model = fit(g.view(), &cfg).unwrap();
        let labels = assign_factors(&model, g.view()).unwrap().labels();
        let truth: Vec<usize> = (0..blocks * per).map(|j| j / per).collect();
        aris.push(adjusted_rand_index(&labels, &truth));
    }
    let good = aris.iter().filter(|a| **a >= 0.9).count();
    let shown: Vec<String> = aris.iter().map(|a| format!("{a:.2}")).collect();
    check(
        good >= 9,
        format!("ARI >= 0.9 on {good}/10 seeds [{}]", shown.join(", ")),
    )
}

// 4 ---------------------------------------------------------------------------

fn learnability() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (signal_dims, noise_dims, topics, k) = (16, 16, 50, 16);
    let d = signal_dims + noise_dims;
    let topic_dirs: Vec<Vec<f64>> = (0..topics)
        .map(|_| {
            let v: Vec<f64> = (0..signal_dims).map(|_| gauss(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm).collect()
        })
        .collect();
    // documents and their property share a topic direction; both also carry
    // nuisance coordinates that the head must learn to ignore
    let embed = |rng: &mut ChaCha8Rng, t: usize, nuisance: f64| -> Vec<f64> {
        let mut v: Vec<f64> = topic_dirs[t].iter().map(|x| x + 0.05 * gauss(rng)).collect();
        v.extend((0..noise_dims).map(|_| nuisance * gauss(rng)));
        v
    };
    let props: Vec<Vec<f64>> = (0..topics).map(|t| embed(&mut rng, t, 0.5)).collect();
    let n_train = 200;
    let n_test = 13 * k;
    let doc_topics: Vec<usize> = (0..n_train + n_test).map(|_| rng.gen_range(0..topics)).collect();
    let docs: Vec<Vec<f64>> = doc_topics.iter().map(|&t| embed(&mut rng, t, 0.5)).collect();
    let train_pairs: Vec<(usize, usize)> = (0..n_train).map(|i| (i, doc_topics[i])).collect();

    let evaluate = |head: &Head| -> f64 {
        let phi_p: Vec<Vec<f64>> = props.iter().map(|p| head.apply(p)).collect();
        let mut wins = 0;
        let mut total = 0;
        for batch in (n_train..n_train + n_test).collect::<Vec<_>>().chunks(k) {
            for &r in batch {
                let u = head.apply(&docs[r]);
                let s = |t: usize| u.iter().zip(&phi_p[t]).map(|(a, b)| a * b).sum::<f64>();
                let pos = s(doc_topics[r]);
                // same-property candidates are positives of r, not negatives
                let beaten = batch
                    .iter()
                    .filter(|&&l| doc_topics[l] != doc_topics[r])
                    .all(|&l| pos > s(doc_topics[l]));
                wins += beaten as usize;
                total += 1;
            }
        }
        100.0 * wins as f64 / total as f64
    };

    let mut head = Head::affine_tanh(d, d, 4);
    let before = evaluate(&head);
    let cfg = TrainConfig {
        batch_size: k,
        epochs: 60,
        lr: 1e-2,
        seed: 4,
    };
    train_head(&mut head, &docs, &props, &PairSet::new(train_pairs), &cfg).unwrap();
    let after = evaluate(&head);
    check(
        after >= 95.0,
        format!("held-out positive above all K-1 negatives: {after:.1}% (untrained {before:.1}%), K = {k}, {n_train} positives"),
    )
}

// 5 ---------------------------------------------------------------------------

fn matrix_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, p, d) = (100, 50, 12);
    let mut table = TableEmbedder::new(d);
    let mut docs = Vec::new();
    for i in 0..n {
        let text = format!("document {i}");
        table.insert(text.clone(), (0..d).map(|_| gauss(&mut rng) as f32).collect());
        docs.push(Document::new(format!("d{i}"), text, Split::Train));
    }
    let mut props = Vec::new();
    for j in 0..p {
        let text = format!("property {j}");
        table.insert(text.clone(), (0..d).map(|_| gauss(&mut rng) as f32).collect());
        props.push(Property {
            pid: j as u32,
            canonical_key: text.clone(),
            text,
        });
    }
    let pool = PropertyPool::from_parts(props, Default::default()).unwrap();
    let table = Arc::new(table);
    let encoder = Encoder::with_head(table.clone(), Some(7), 5);
    let refs: Vec<&Document> = docs.iter().collect();
    let m = materialize_matrix(&refs, &pool, &encoder).unwrap();

    // independent Φ from the raw head parameters
    let Head::AffineTanh { d_in, d_out, params } = encoder.head().clone() else {
        return check(false, "expected an affine head");
    };
    let phi = |text: &str| -> Vec<f64> {
        let e: Vec<f64> = goalfactor::linker::embedding::EmbeddingProvider::embed(table.as_ref(), text)
            .unwrap()
            .into_iter()
            .map(f64::from)
            .collect();
        (0..d_out)
            .map(|o| {
                let z: f64 = (0..d_in).map(|i| params[o * d_in + i] * e[i]).sum::<f64>() + params[d_out * d_in + o];
                z.tanh()
            })
            .collect()
    };
    let mut worst: f64 = 0.0;
    for (i, doc) in docs.iter().enumerate() {
        let u = phi(&doc.text);
        for (j, prop) in pool.properties().iter().enumerate() {
            let oracle: f64 = u.iter().zip(phi(&prop.text)).map(|(a, b)| a * b).sum();
            let via_score = score(&prop.text, &doc.text, &encoder).unwrap();
            let got = f64::from(m.get(i, j));
            for reference in [oracle, via_score] {
                worst = worst.max((got - reference).abs() / reference.abs().max(1e-6));
            }
        }
    }
    check(
        worst < 1e-5,
        format!("{n}x{p}: worst relative deviation {worst:.2e} (< 1e-5)"),
    )
}

// 6 ---------------------------------------------------------------------------

fn binarization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures = Vec::new();
    for case in 0..20 {
        let rows = rng.gen_range(1..40);
        let cols = rng.gen_range(1..40);
        let values: Vec<f32> = match case % 4 {
            0 => vec![0.25; rows * cols],
            1 => (0..rows * cols).map(|_| rng.gen_range(0..3) as f32).collect(),
            _ => (0..rows * cols).map(|_| gauss(&mut rng) as f32).collect(),
        };
        let m = CompatibilityMatrix::from_parts(rows, cols, values.clone(), false).unwrap();
        let b = binarize(&m, 0.10).unwrap();
        let want = (0.10 * (rows * cols) as f64).round() as usize;
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&x, &y| values[y].partial_cmp(&values[x]).unwrap().then(x.cmp(&y)));
        let mut oracle = vec![0.0f32; values.len()];
        for &i in &order[..want] {
            oracle[i] = 1.0;
        }
        let ones = b.values().iter().filter(|v| **v == 1.0).count();
        if ones != want || b.values() != oracle.as_slice() {
            failures.push(format!("case {case} ({rows}x{cols}): {ones} ones, want {want}"));
        }
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            "20 matrices (5 all-equal, 5 three-level ties) match the full-sort oracle".to_string()
        } else {
            failures.join("; ")
        },
    )
}

// 7 ---------------------------------------------------------------------------

fn eval_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut notes = Vec::new();
    let mut ok = true;

    // Hit@k monotone on random data
    let items: Vec<String> = (0..30).map(|i| format!("item{i}")).collect();
    let random_rep = |rng: &mut ChaCha8Rng, id: String| {
        let g = items[rng.gen_range(0..items.len())].clone();
        LabeledRepresentation::new(id, (0..6).map(|_| gauss(rng)).collect()).with_gold(&[g.as_str()])
    };
    let train: Vec<_> = (0..300).map(|i| random_rep(&mut rng, format!("tr{i}"))).collect();
    let test: Vec<_> = (0..100).map(|i| random_rep(&mut rng, format!("te{i}"))).collect();
    let ks: Vec<usize> = (1..=30).collect();
    let r = hit_at_k_recommendation(&train, &test, 20, &ks, Similarity::Cosine).unwrap();
    let hits: Vec<f64> = ks.iter().map(|k| r.metrics[&format!("hit@{k}")]).collect();
    let monotone = hits.windows(2).all(|w| w[0] <= w[1]) && hits.iter().all(|h| (0.0..=100.0).contains(h));
    ok &= monotone;
    notes.push(format!("hit@k monotone {monotone}"));

    // majority Hit@1 vs count oracle
    let mut counts: BTreeMap<&String, (usize, usize)> = BTreeMap::new();
    for (pos, t) in train.iter().enumerate() {
        let e = counts.entry(&t.gold_items.as_ref().unwrap()[0]).or_insert((0, pos));
        e.0 += 1;
    }
    let top = counts
        .iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .map(|(item, _)| (*item).clone())
        .unwrap();
    let freq =
        100.0 * test.iter().filter(|t| t.gold_items.as_ref().unwrap()[0] == top).count() as f64 / test.len() as f64;
    let base = majority_baseline(&train, &test, &BaselineTask::Recommendation { ks: vec![1] }).unwrap();
    let agrees = base.metrics["hit@1"] == freq;
    ok &= agrees;
    notes.push(format!(
        "majority hit@1 {:.1} vs count oracle {freq:.1}",
        base.metrics["hit@1"]
    ));

    // separable probe
    let sep: Vec<_> = (0..200)
        .map(|i| {
            let class = i % 2;
            let x = if class == 0 {
                -1.0 - rng.gen::<f64>()
            } else {
                1.0 + rng.gen::<f64>()
            };
            LabeledRepresentation::new(format!("s{i}"), vec![x, gauss(&mut rng)]).with_label("y", &class.to_string())
        })
        .collect();
    let sep_score = decision_tree_probe(&sep, "y", 5, 0, &TreeParams::default())
        .unwrap()
        .metrics["balanced_accuracy"];
    ok &= sep_score == 100.0;
    notes.push(format!("separable probe {sep_score:.1}"));

    // permuted labels, c = 4, n = 1000
    let mut permuted = Vec::new();
    for seed in 0..10u64 {
        let mut prng = ChaCha8Rng::seed_from_u64(70 + seed);
        let mut labels: Vec<usize> = (0..1000).map(|i| i % 4).collect();
        labels.shuffle(&mut prng);
        let reps: Vec<_> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                LabeledRepresentation::new(format!("p{i}"), (0..5).map(|_| gauss(&mut prng)).collect())
                    .with_label("y", &l.to_string())
            })
            .collect();
        let s = decision_tree_probe(&reps, "y", 5, seed, &TreeParams::default())
            .unwrap()
            .metrics["balanced_accuracy"];
        permuted.push(s);
    }
    let in_band = permuted.iter().all(|s| (s - 25.0).abs() <= 5.0);
    ok &= in_band;
    let shown: Vec<String> = permuted.iter().map(|s| format!("{s:.1}")).collect();
    notes.push(format!("permuted probe [{}] within 25 +- 5", shown.join(", ")));
    check(ok, notes.join("; "))
}

// 8 ---------------------------------------------------------------------------

const ARTIFACTS: &[&str] = &[
    "properties.jsonl",
    "matrix.ilfm",
    "model.bin",
    "factors.json",
    "factors.md",
];

fn run_all(dir: &Path, threads: usize, force: bool) -> Result<(), String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_goalfactor"));
    cmd.arg("--config")
        .arg(dir.join("config.json"))
        .arg("--threads")
        .arg(threads.to_string());
    if force {
        cmd.arg("--force");
    }
    let out = cmd
        .arg("all")
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "exit {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn copy_mock(dst: &Path) {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/mock");
    std::fs::create_dir_all(dst).unwrap();
    for entry in std::fs::read_dir(src).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), dst.join(entry.file_name())).unwrap();
    }
}

fn snapshot(dir: &Path) -> Vec<Vec<u8>> {
    ARTIFACTS
        .iter()
        .map(|a| std::fs::read(dir.join("out").join(a)).unwrap_or_default())
        .collect()
}

fn end_to_end_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let one = tmp.path().join("one");
    let four = tmp.path().join("four");
    copy_mock(&one);
    copy_mock(&four);
    let runs = run_all(&one, 1, false)
        .and_then(|_| run_all(&four, 4, false))
        .map(|_| snapshot(&one))
        .and_then(|first| run_all(&one, 1, true).map(|_| (first, snapshot(&one))));
    let (first, rerun) = match runs {
        Ok(s) => s,
        Err(e) => return check(false, format!("goalfactor all failed: {e}")),
    };
    let other = snapshot(&four);
    let complete = first.iter().all(|b| !b.is_empty());
    let same_rerun = first == rerun;
    let same_threads = first == other;
    check(
        complete && same_rerun && same_threads,
        format!(
            "{} artifacts; identical across reruns {same_rerun}, across threads 1/4 {same_threads}",
            ARTIFACTS.join("/")
        ),
    )
}

fn main() {
    let criteria: Vec<(&str, Option<Duration>, fn() -> Outcome)> = vec![
        (
            "1 gradient correctness",
            Some(Duration::from_secs(10)),
            gradient_correctness,
        ),
        ("2 total correlation oracle", Some(Duration::from_secs(5)), tc_oracle),
        ("3 factor recovery", Some(Duration::from_secs(60)), factor_recovery),
        (
            "4 link-prediction learnability",
            Some(Duration::from_secs(60)),
            learnability,
        ),
        ("5 matrix consistency", None, matrix_consistency),
        ("6 binarization exactness", None, binarization),
        ("7 eval-harness oracles", None, eval_oracles),
        ("8 end-to-end determinism", None, end_to_end_determinism),
    ];
    let mut failed = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let in_time = budget.is_none_or(|b| elapsed <= b);
        let pass = outcome.pass && in_time;
        failed += !pass as usize;
        let timing = match budget {
            Some(b) => format!("{:.2}s of {}s", elapsed.as_secs_f64(), b.as_secs()),
            None => format!("{:.2}s", elapsed.as_secs_f64()),
        };
        println!(
            "criterion {name}: {} | {} | {timing}",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
