//! Acceptance suite. Each criterion is its own test and writes one
//! `[PASS]` / `[FAIL]` line to stderr, visible even under output capture.
//!
//! Run with `cargo test -p rada-core --test acceptance`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use std::f64::consts::LN_2;
use std::io::Write as _;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rada_core::autodiff::{Graph, Tensor, Var};
use rada_core::datasets::{Batch, Dataset, Domain};
use rada_core::diagnostics::{mmd, MetricsRow, MmdConfig};
use rada_core::harness::{run_training, Checkpoint, RunConfig, Trainer};
use rada_core::losses::{adversarial_loss, classification_loss};
use rada_core::models::{
    classify, discriminate, discriminator_input, feature_extract, Conditioning, ModelBundle, ModelSpec,
};
use rada_core::rada::{domain_entropy, mixing_matrix, mixup_features, relabel_batch, select_relabels};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn report(criterion: u32, title: &str, outcome: Outcome) {
    let line = match &outcome {
        Ok(detail) => format!("[PASS] criterion {criterion}: {title} ({detail})\n"),
        Err(detail) => format!("[FAIL] criterion {criterion}: {title} ({detail})\n"),
    };
    let _ = std::io::stderr().write_all(line.as_bytes());
    if let Err(detail) = outcome {
        panic!("criterion {criterion} failed: {detail}");
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok { Ok(()) } else { Err(msg()) }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Uniform in `±[0.05, 2]`, away from the relu kink.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.05..2.0);
            if rng.random::<bool>() { m } else { -m }
        })
        .collect()
}

fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::matrix(rows, cols, data).unwrap()
}

// ---------------------------------------------------------------------------
// Criterion 1: finite-difference gradient check
// ---------------------------------------------------------------------------

const FD_STEP: f64 = 1e-6;
const REL_TOL: f64 = 1e-5;
/// Magnitude below which the error is measured absolutely: central
/// differences carry ~1e-10 of rounding noise.
const REL_FLOOR: f64 = 1e-3;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

type Build<'a> = &'a dyn Fn(&mut Graph, &[Var]) -> Var;

/// Largest relative error between backprop and central differences of
/// `Σ w · build(inputs)` with respect to every input entry.
fn op_gradient_error(inputs: &[Tensor], build: Build, rng: &mut ChaCha8Rng) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = build(&mut g, &vars);
    let weights = uniform(rng, g.value(out).numel(), 0.5, 1.5);
    let loss = g.weighted_sum(out, weights.clone()).unwrap();
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect();

    let value = |inputs: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).data().iter().zip(&weights).map(|(x, w)| x * w).sum()
    };
    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for k in 0..inputs.len() {
        for j in 0..inputs[k].numel() {
            let x0 = inputs[k].data()[j];
            probe[k].data_mut()[j] = x0 + FD_STEP;
            let up = value(&probe);
            probe[k].data_mut()[j] = x0 - FD_STEP;
            let down = value(&probe);
            probe[k].data_mut()[j] = x0;
            worst = worst.max(rel_err(analytic[k][j], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

struct OpCase {
    name: &'static str,
    inputs: fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    build: fn(&mut Graph, &[Var]) -> Var,
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..5))
}

fn one(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let (r, c) = dims(rng);
    vec![matrix(r, c, uniform(rng, r * c, -2.0, 2.0))]
}

fn two_same(rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let (r, c) = dims(rng);
    vec![matrix(r, c, uniform(rng, r * c, -2.0, 2.0)), matrix(r, c, uniform(rng, r * c, -2.0, 2.0))]
}

fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            inputs: |rng| {
                let (n, k) = dims(rng);
                let m = rng.random_range(1..5);
                vec![matrix(n, k, uniform(rng, n * k, -2.0, 2.0)), matrix(k, m, uniform(rng, k * m, -2.0, 2.0))]
            },
            build: |g, v| g.matmul(v[0], v[1]).unwrap(),
        },
        OpCase {
            name: "add_bias",
            inputs: |rng| {
                let (r, c) = dims(rng);
                vec![matrix(r, c, uniform(rng, r * c, -2.0, 2.0)), Tensor::new(vec![c], uniform(rng, c, -2.0, 2.0)).unwrap()]
            },
            build: |g, v| g.add_bias(v[0], v[1]).unwrap(),
        },
        OpCase { name: "add", inputs: two_same, build: |g, v| g.add(v[0], v[1]).unwrap() },
        OpCase { name: "mul", inputs: two_same, build: |g, v| g.mul(v[0], v[1]).unwrap() },
        OpCase { name: "affine", inputs: one, build: |g, v| g.affine(v[0], -1.7, 0.3).unwrap() },
        OpCase {
            name: "relu",
            inputs: |rng| {
                let (r, c) = dims(rng);
                vec![matrix(r, c, away_from_zero(rng, r * c))]
            },
            build: |g, v| g.relu(v[0]).unwrap(),
        },
        OpCase { name: "sigmoid", inputs: one, build: |g, v| g.sigmoid(v[0]).unwrap() },
        OpCase { name: "exp", inputs: one, build: |g, v| g.exp(v[0]).unwrap() },
        OpCase {
            name: "log",
            inputs: |rng| {
                let (r, c) = dims(rng);
                vec![matrix(r, c, uniform(rng, r * c, 0.2, 3.0))]
            },
            build: |g, v| g.log(v[0]).unwrap(),
        },
        OpCase {
            name: "clamp",
            inputs: |rng| {
                let (r, c) = dims(rng);
                // Inside, below and above [-1, 1], never within 0.05 of a bound.
                let data = (0..r * c)
                    .map(|_| match rng.random_range(0..3) {
                        0 => rng.random_range(-0.95..0.95),
                        1 => rng.random_range(-3.0..-1.05),
                        _ => rng.random_range(1.05..3.0),
                    })
                    .collect();
                vec![matrix(r, c, data)]
            },
            build: |g, v| g.clamp(v[0], -1.0, 1.0).unwrap(),
        },
        OpCase { name: "log_softmax", inputs: one, build: |g, v| g.log_softmax(v[0]).unwrap() },
        OpCase {
            name: "concat_rows",
            inputs: |rng| {
                let (r, c) = dims(rng);
                let r2 = rng.random_range(1..4);
                vec![matrix(r, c, uniform(rng, r * c, -2.0, 2.0)), matrix(r2, c, uniform(rng, r2 * c, -2.0, 2.0))]
            },
            build: |g, v| g.concat_rows(&[v[0], v[1]]).unwrap(),
        },
        OpCase {
            name: "outer_flatten",
            inputs: |rng| {
                let (n, p) = dims(rng);
                let q = rng.random_range(1..5);
                vec![matrix(n, p, uniform(rng, n * p, -2.0, 2.0)), matrix(n, q, uniform(rng, n * q, -2.0, 2.0))]
            },
            build: |g, v| g.outer_flatten(v[0], v[1]).unwrap(),
        },
        OpCase { name: "mean", inputs: one, build: |g, v| g.mean(v[0]).unwrap() },
        OpCase {
            name: "weighted_sum",
            inputs: one,
            build: |g, v| {
                let n = g.value(v[0]).numel();
                let w = (0..n).map(|i| 0.3 + 0.7 * i as f64).collect();
                g.weighted_sum(v[0], w).unwrap()
            },
        },
    ]
}

fn fixture_spec(rng: &mut ChaCha8Rng, conditioning: Conditioning) -> ModelSpec {
    ModelSpec {
        input_dim: rng.random_range(1..4),
        extractor_widths: vec![rng.random_range(2..6), rng.random_range(2..5)],
        classifier_hidden: Vec::new(),
        discriminator_hidden: vec![rng.random_range(2..5)],
        num_classes: rng.random_range(2..4),
        conditioning,
        // A detached path is intentionally absent from the analytic gradient.
        condition_detach: false,
    }
}

#[derive(Clone, Copy)]
enum Composite {
    FeatureToDiscriminator,
    FeatureToClassifier,
}

fn composite_loss(model: &ModelBundle, g: &mut Graph, x: &Tensor, fixture: &CompositeFixture, which: Composite) -> Var {
    let xv = g.constant(x.clone());
    let feats = feature_extract(g, model, xv).unwrap();
    let log_probs = classify(g, model, feats).unwrap();
    match which {
        Composite::FeatureToClassifier => {
            classification_loss(g, log_probs, &fixture.labels, &fixture.mask).unwrap()
        }
        Composite::FeatureToDiscriminator => {
            let d_in = discriminator_input(g, model, feats, log_probs).unwrap();
            let p = discriminate(g, model, d_in).unwrap();
            adversarial_loss(g, p, &fixture.domains, &fixture.weights, 1e-12).unwrap().loss
        }
    }
}

struct CompositeFixture {
    labels: Vec<usize>,
    mask: Vec<bool>,
    domains: Vec<Domain>,
    weights: Vec<f64>,
}

/// Largest relative error over every parameter of the model.
fn composite_gradient_error(rng: &mut ChaCha8Rng, which: Composite) -> f64 {
    let conditioning = if rng.random() { Conditioning::Cdan } else { Conditioning::Plain };
    let spec = fixture_spec(rng, conditioning);
    let model = ModelBundle::init(spec.clone(), rng).unwrap();
    let n = rng.random_range(2..6);
    let x = matrix(n, spec.input_dim, uniform(rng, n * spec.input_dim, -2.0, 2.0));
    let mut domains: Vec<Domain> = (0..n).map(|i| if i % 2 == 0 { Domain::Source } else { Domain::Target }).collect();
    domains[0] = Domain::Source;
    let fixture = CompositeFixture {
        labels: (0..n).map(|_| rng.random_range(0..spec.num_classes)).collect(),
        mask: domains.iter().map(|&d| d == Domain::Source).collect(),
        weights: uniform(rng, n, 0.5, 1.5),
        domains,
    };

    let mut g = Graph::new();
    let loss = composite_loss(&model, &mut g, &x, &fixture, which);
    let grads = rada_core::autodiff::backward(&mut g, loss, &model.params).unwrap();

    let value = |m: &ModelBundle| -> f64 {
        let mut g = Graph::inference();
        let l = composite_loss(m, &mut g, &x, &fixture, which);
        g.value(l).data()[0]
    };
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for id in model.params.ids() {
        for j in 0..model.params.get(id).numel() {
            let x0 = model.params.get(id).data()[j];
            probe.params.get_mut(id).data_mut()[j] = x0 + FD_STEP;
            let up = value(&probe);
            probe.params.get_mut(id).data_mut()[j] = x0 - FD_STEP;
            let down = value(&probe);
            probe.params.get_mut(id).data_mut()[j] = x0;
            worst = worst.max(rel_err(grads.get(id)[j], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let outcome = (|| -> Outcome {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6d);
        let mut summary = Vec::new();
        for case in op_cases() {
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let inputs = (case.inputs)(&mut rng);
                worst = worst.max(op_gradient_error(&inputs, &case.build, &mut rng));
            }
            check(worst < REL_TOL, || format!("{}: relative error {worst:.2e}", case.name))?;
            summary.push(worst);
        }
        for (name, which) in
            [("F->D", Composite::FeatureToDiscriminator), ("F->C", Composite::FeatureToClassifier)]
        {
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                worst = worst.max(composite_gradient_error(&mut rng, which));
            }
            check(worst < REL_TOL, || format!("{name}: relative error {worst:.2e}"))?;
            summary.push(worst);
        }
        let elapsed = start.elapsed();
        check(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
        let worst = summary.iter().copied().fold(0.0, f64::max);
        Ok(format!("{} checks x 100 fixtures, worst {worst:.1e}, {:.1}s", summary.len(), elapsed.as_secs_f64()))
    })();
    report(1, "gradients match central differences", outcome);
}

// ---------------------------------------------------------------------------
// Criterion 2: gradient reversal
// ---------------------------------------------------------------------------

/// Adversarial loss with the discriminator input optionally passed through
/// the reversal layer.
fn grl_gradients(model: &ModelBundle, x: &Tensor, domains: &[Domain], lambda: Option<f64>) -> rada_core::Gradients {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let feats = feature_extract(&mut g, model, xv).unwrap();
    let log_probs = classify(&mut g, model, feats).unwrap();
    let mut d_in = discriminator_input(&mut g, model, feats, log_probs).unwrap();
    if let Some(l) = lambda {
        d_in = g.gradient_reversal(d_in, l).unwrap();
    }
    let p = discriminate(&mut g, model, d_in).unwrap();
    let loss = adversarial_loss(&mut g, p, domains, &vec![1.0; domains.len()], 1e-12).unwrap().loss;
    rada_core::autodiff::backward(&mut g, loss, &model.params).unwrap()
}

#[test]
fn criterion_02_gradient_reversal() {
    let outcome = (|| -> Outcome {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut worst: f64 = 0.0;
        let mut fixtures = 0;
        for _ in 0..20 {
            let conditioning = if rng.random() { Conditioning::Cdan } else { Conditioning::Plain };
            let spec = ModelSpec { conditioning, ..ModelSpec::new(2, 2) };
            let model = ModelBundle::init(spec, &mut rng).unwrap();
            let x = matrix(8, 2, uniform(&mut rng, 16, -2.0, 2.0));
            let domains: Vec<Domain> = (0..8).map(|i| if i < 4 { Domain::Source } else { Domain::Target }).collect();
            let identity = grl_gradients(&model, &x, &domains, None);
            for lambda in [0.0, 0.5, 1.0, 2.0] {
                let reversed = grl_gradients(&model, &x, &domains, Some(lambda));
                for id in model.extractor_params() {
                    for (r, i) in reversed.get(id).iter().zip(identity.get(id)) {
                        worst = worst.max((r - (-lambda * i)).abs());
                    }
                }
                for id in model.discriminator_params() {
                    check(reversed.get(id) == identity.get(id), || "discriminator gradients changed".into())?;
                }
                fixtures += 1;
            }
        }
        check(worst <= 1e-12, || format!("max deviation {worst:.2e}"))?;
        Ok(format!("{fixtures} fixtures, max |g_rev + lambda g_id| = {worst:.1e}"))
    })();
    report(2, "reversal scales extractor gradients by -lambda", outcome);
}

// ---------------------------------------------------------------------------
// Criterion 3: closed-form values
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_closed_form_values() {
    let outcome = (|| -> Outcome {
        let mut g = Graph::new();
        let p = g.constant(matrix(4, 1, vec![0.5; 4]));
        let domains = [Domain::Source, Domain::Source, Domain::Target, Domain::Target];
        let adv = adversarial_loss(&mut g, p, &domains, &[1.0; 4], 1e-12).unwrap().loss;
        let adv = g.value(adv).data()[0];
        check((adv - 2.0 * LN_2).abs() <= 1e-9, || format!("adversarial loss at chance {adv}"))?;

        let h_half = domain_entropy(0.5).unwrap();
        check((h_half - LN_2).abs() <= 1e-12, || format!("H(0.5) = {h_half}"))?;
        let h_08 = domain_entropy(0.8).unwrap();
        check((h_08 - 0.500402).abs() <= 1e-6, || format!("H(0.8) = {h_08}"))?;

        let lp = g.constant(matrix(3, 3, vec![-(3f64.ln()); 9]));
        let cls = classification_loss(&mut g, lp, &[0, 1, 2], &[true; 3]).unwrap();
        let cls = g.value(cls).data()[0];
        check((cls - 3f64.ln()).abs() <= 1e-9, || format!("uniform 3-class loss {cls}"))?;
        Ok(format!("adv {adv:.12}, H(0.5) {h_half:.12}, H(0.8) {h_08:.9}, cls {cls:.12}"))
    })();
    report(3, "closed-form loss and entropy values", outcome);
}

// ---------------------------------------------------------------------------
// Criterion 4: relabel selection oracle
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_relabel_oracle() {
    let outcome = (|| -> Outcome {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for fixture in 0..1000 {
            let n = rng.random_range(0..40);
            let tau = rng.random_range(1e-6..LN_2);
            let candidates: Vec<usize> = (0..n).map(|i| 2 * i + rng.random_range(0..2)).collect();
            let entropies: Vec<f64> = (0..n)
                .map(|_| match rng.random_range(0..6) {
                    0 => tau,
                    1 => f64::from_bits(tau.to_bits() + 1),
                    2 => f64::from_bits(tau.to_bits() - 1),
                    _ => rng.random_range(0.0..LN_2),
                })
                .collect();
            let mut expected = Vec::new();
            for k in 0..n {
                if entropies[k] > tau {
                    expected.push(candidates[k]);
                }
            }
            let got = select_relabels(&candidates, &entropies, tau).indices;
            check(got == expected, || format!("fixture {fixture}: {got:?} vs {expected:?}"))?;
        }
        Ok("1000 fixtures, exact match".into())
    })();
    report(4, "relabel selection equals strict-threshold brute force", outcome);
}

// ---------------------------------------------------------------------------
// Criterion 5: relabeling leaves the classification loss untouched
// ---------------------------------------------------------------------------

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> Dataset {
    let domains = (0..n).map(|i| if i < n / 2 { Domain::Source } else { Domain::Target }).collect();
    Dataset::new(
        dim,
        uniform(rng, n * dim, -2.0, 2.0),
        (0..n).map(|_| rng.random_range(0..classes)).collect(),
        domains,
        classes,
    )
    .unwrap()
}

fn batch_classification_loss(model: &ModelBundle, batch: &Batch) -> f64 {
    let mut g = Graph::new();
    let x = g.constant(batch.features.clone());
    let feats = feature_extract(&mut g, model, x).unwrap();
    let lp = classify(&mut g, model, feats).unwrap();
    let l = classification_loss(&mut g, lp, &batch.class_labels, &batch.cls_mask).unwrap();
    g.value(l).data()[0]
}

#[test]
fn criterion_05_relabeling_neutrality() {
    let outcome = (|| -> Outcome {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut relabeled_total = 0;
        for b in 0..100 {
            let ds = random_dataset(&mut rng, 32, 2, 3);
            let model = ModelBundle::init(ModelSpec::new(2, 3), &mut rng).unwrap();
            let batch = Batch::from_indices(&ds, (0..32).collect()).unwrap();
            let targets = batch.positions(Domain::Target);
            let entropies = uniform(&mut rng, targets.len(), 0.0, LN_2);
            let decision = select_relabels(&targets, &entropies, rng.random_range(0.05..0.65));
            relabeled_total += decision.indices.len();
            let relabeled = relabel_batch(&batch, &decision).unwrap();
            let before = batch_classification_loss(&model, &batch);
            let after = batch_classification_loss(&model, &relabeled);
            check(before.to_bits() == after.to_bits(), || format!("batch {b}: {before} vs {after}"))?;
        }
        Ok(format!("100 batches, {relabeled_total} relabeled samples, bitwise equal"))
    })();
    report(5, "classification loss unchanged by relabeling", outcome);
}

// ---------------------------------------------------------------------------
// Criterion 6: mixup contract
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_mixup_contract() {
    let outcome = (|| -> Outcome {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut draws = 0;
        while draws < 1000 {
            let d = rng.random_range(1..6);
            let (ns, nr) = (rng.random_range(1..6), rng.random_range(1..6));
            let src = matrix(ns, d, uniform(&mut rng, ns * d, -3.0, 3.0));
            let rel = matrix(nr, d, uniform(&mut rng, nr * d, -3.0, 3.0));
            let mixed = mixup_features(&src, &rel, &mut rng).unwrap();
            check(mixed.len() == nr, || "one mixed sample per relabeled sample".into())?;

            // The same pairs through the in-graph mixing matrix.
            let stacked = Tensor::from_rows(
                &(0..ns).map(|i| src.row(i).to_vec()).chain((0..nr).map(|i| rel.row(i).to_vec())).collect::<Vec<_>>(),
            )
            .unwrap();
            let pairs: Vec<_> = mixed
                .iter()
                .map(|m| rada_core::rada::MixPair { relabeled_row: ns + m.pair.relabeled_row, ..m.pair })
                .collect();
            let mut g = Graph::inference();
            let mv = g.constant(mixing_matrix(&pairs, ns + nr).unwrap());
            let fv = g.constant(stacked);
            let in_graph = g.matmul(mv, fv).unwrap();

            for (k, m) in mixed.iter().enumerate() {
                let a = m.pair.alpha;
                check((0.0..1.0).contains(&a), || format!("alpha {a}"))?;
                check(m.domain == Domain::Source, || "mixed sample not labeled source".into())?;
                let fs = src.row(m.pair.source_row);
                let ft = rel.row(m.pair.relabeled_row);
                for c in 0..d {
                    let v = m.feature[c];
                    let (lo, hi) = (fs[c].min(ft[c]), fs[c].max(ft[c]));
                    check(lo <= v && v <= hi, || format!("{v} outside [{lo}, {hi}]"))?;
                    let expected = a * fs[c] + (1.0 - a) * ft[c];
                    check((v - expected).abs() <= 1e-12, || format!("{v} vs {expected}"))?;
                    let gv = g.value(in_graph).row(k)[c];
                    check((gv - expected).abs() <= 1e-12, || format!("in-graph {gv} vs {expected}"))?;
                }
                draws += 1;
            }
        }
        Ok(format!("{draws} draws"))
    })();
    report(6, "mixup is a convex, source-labeled combination", outcome);
}

// ---------------------------------------------------------------------------
// Criteria 7 and 8: training dynamics on the default moons task
// ---------------------------------------------------------------------------

const SEEDS: u64 = 10;

struct RunResult {
    entropy_last20: f64,
    final_mmd: f64,
    final_accuracy: f64,
}

struct Scheme {
    runs: Vec<RunResult>,
    elapsed: Duration,
}

struct Study {
    baseline: Scheme,
    rada: Scheme,
    rada_no_mixup: Scheme,
}

fn run_scheme(configure: impl Fn(&mut RunConfig)) -> Scheme {
    let start = Instant::now();
    let runs = (0..SEEDS)
        .map(|seed| {
            let mut config = RunConfig { seed, ..RunConfig::default() };
            configure(&mut config);
            let mut trainer = Trainer::new(config).unwrap();
            let rows: Vec<MetricsRow> = (0..trainer.config().epochs).map(|_| trainer.train_epoch().unwrap().row).collect();
            let tail = &rows[rows.len() - 20..];
            let last = rows.last().unwrap();
            RunResult {
                entropy_last20: tail.iter().map(|r| r.mean_domain_entropy).sum::<f64>() / tail.len() as f64,
                final_mmd: last.mmd,
                final_accuracy: last.target_accuracy,
            }
        })
        .collect();
    Scheme { runs, elapsed: start.elapsed() }
}

fn study() -> &'static Study {
    static STUDY: OnceLock<Study> = OnceLock::new();
    STUDY.get_or_init(|| Study {
        baseline: run_scheme(|c| c.rada_enabled = false),
        rada: run_scheme(|c| c.rada_enabled = true),
        rada_no_mixup: run_scheme(|c| {
            c.rada_enabled = true;
            c.rada.mixup_enabled = false;
        }),
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

fn field(s: &Scheme, f: fn(&RunResult) -> f64) -> Vec<f64> {
    s.runs.iter().map(f).collect()
}

#[test]
fn criterion_07_training_dynamics() {
    let s = study();
    let limit = Duration::from_secs(600);
    let ent_base = median(field(&s.baseline, |r| r.entropy_last20));
    let ent_rada = median(field(&s.rada, |r| r.entropy_last20));
    let mmd_base = median(field(&s.baseline, |r| r.final_mmd));
    let mmd_rada = median(field(&s.rada, |r| r.final_mmd));
    let wins = s.rada.runs.iter().zip(&s.baseline.runs).filter(|(r, b)| r.final_accuracy >= b.final_accuracy).count();
    let mut failures = Vec::new();
    if !(ent_rada < ent_base) {
        failures.push("(a) entropy");
    }
    if !(mmd_rada < mmd_base) {
        failures.push("(b) mmd");
    }
    if wins < 7 {
        failures.push("(c) accuracy");
    }
    if s.baseline.elapsed > limit || s.rada.elapsed > limit {
        failures.push("runtime");
    }
    let detail = format!(
        "entropy median {ent_rada:.4} vs {ent_base:.4}; final mmd median {mmd_rada:.4} vs {mmd_base:.4}; \
         accuracy >= baseline in {wins}/{SEEDS} seeds; {:.0}s / {:.0}s per scheme",
        s.rada.elapsed.as_secs_f64(),
        s.baseline.elapsed.as_secs_f64()
    );
    let outcome = if failures.is_empty() { Ok(detail) } else { Err(format!("{} failed: {detail}", failures.join(", "))) };
    report(7, "relabeling vs baseline dynamics on moons, 10 seeds", outcome);
}

#[test]
fn criterion_08_mixup_ablation() {
    let s = study();
    let with = median(field(&s.rada, |r| r.final_accuracy));
    let without = median(field(&s.rada_no_mixup, |r| r.final_accuracy));
    let detail = format!("median target accuracy {with:.4} with mixup, {without:.4} without");
    let outcome = if with >= without - 0.005 { Ok(detail) } else { Err(detail) };
    report(8, "mixup does not hurt median target accuracy", outcome);
}

// ---------------------------------------------------------------------------
// Criterion 9: determinism and resume
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_determinism_and_resume() {
    let outcome = (|| -> Outcome {
        let root = tempfile::tempdir().unwrap();
        let config = |dir: &str, epochs: usize| RunConfig {
            epochs,
            seed: 11,
            checkpoint_every: 10,
            output_dir: root.path().join(dir),
            ..RunConfig::default()
        };
        let read = |dir: &str| std::fs::read(root.path().join(dir).join("metrics.csv")).unwrap();

        run_training(config("a", 20), None).map_err(|e| e.to_string())?;
        run_training(config("b", 20), None).map_err(|e| e.to_string())?;
        check(read("a") == read("b"), || "repeated runs differ".into())?;

        run_training(config("c", 10), None).map_err(|e| e.to_string())?;
        let ckpt = Checkpoint::load(root.path().join("c/checkpoint.bin")).map_err(|e| e.to_string())?;
        check(ckpt.epoch == 10, || format!("checkpoint at epoch {}", ckpt.epoch))?;
        run_training(config("c", 20), Some(&ckpt)).map_err(|e| e.to_string())?;

        let text_a = String::from_utf8(read("a")).unwrap();
        let text_c = String::from_utf8(read("c")).unwrap();
        let row20 = |t: &str| t.lines().nth(20).map(str::to_owned);
        check(row20(&text_a).is_some() && row20(&text_a) == row20(&text_c), || {
            format!("epoch-20 rows differ: {:?} vs {:?}", row20(&text_a), row20(&text_c))
        })?;
        check(text_a == text_c, || "resumed metrics file differs".into())?;
        let active = text_a.lines().skip(1).filter(|l| l.ends_with(",1")).count();
        Ok(format!("byte-identical repeats; resumed epoch-20 row identical; {active} active epochs covered"))
    })();
    report(9, "deterministic runs and exact resume", outcome);
}

// ---------------------------------------------------------------------------
// Criterion 10: MMD instrument
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_mmd_instrument() {
    let outcome = (|| -> Outcome {
        let cfg = MmdConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let (n, m, d) = (rng.random_range(1..60), rng.random_range(1..60), rng.random_range(1..6));
            let x = matrix(n, d, uniform(&mut rng, n * d, -2.0, 2.0));
            let y = matrix(m, d, uniform(&mut rng, m * d, -1.0, 3.0));
            let same = mmd(&x, &x.clone(), &cfg).unwrap();
            check(same <= 1e-9, || format!("identical sets give {same}"))?;
            let (xy, yx) = (mmd(&x, &y, &cfg).unwrap(), mmd(&y, &x, &cfg).unwrap());
            check(xy == yx, || format!("asymmetric: {xy} vs {yx}"))?;
        }

        let base = uniform(&mut rng, 400, -1.0, 1.0);
        let source = matrix(200, 2, base.clone());
        let steps = [2.0, 1.5, 1.0, 0.5, 0.0];
        let values: Vec<f64> = steps
            .iter()
            .map(|&s| {
                let shifted = base.iter().enumerate().map(|(i, v)| if i % 2 == 0 { v + s } else { *v }).collect();
                mmd(&source, &matrix(200, 2, shifted), &cfg).unwrap()
            })
            .collect();
        check(values.windows(2).all(|w| w[1] < w[0]), || format!("not decreasing: {values:?}"))?;
        let pretty: Vec<String> = values.iter().map(|v| format!("{v:.4}")).collect();
        Ok(format!("zero and symmetric on 20 fixtures; translation sweep {}", pretty.join(" > ")))
    })();
    report(10, "MMD is zero on identical sets, symmetric and monotone in shift", outcome);
}
