//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `ADVAE_ACCEPT=1,2,6` runs a subset. `ADVAE_SMOKE_SEED_OFFSET=n` shifts the
//! seeds of the stochastic smoke run (see README for the rerun policy).

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use advae::autodiff::{Matrix, ParamId, Tape};
use advae::corpus::{build_vocab, frame, gen_synthetic, make_batches, SyntheticSpec, TokenizedSentence, Vocab};
use advae::eval::{
    assemble_pairs, dec_influence, enc_influence, format_mean_std, generate_perturbation_pairs, mean_std,
    position_baseline, ppl_upper_bound, read_pairs, spans_by_pair_id, struct_influence, totals_and_counts,
    write_pairs, DisentanglementReport, InfluenceKind, InfluenceMatrix, RoleDelta,
};
use advae::gaussian::{kl_between, log_density, standard_normal};
use advae::model::nn::Ctx;
use advae::model::{teacher_forcing, AttentionTrace, LatentState, LayerMode, Model, ModelConfig, Variant};
use advae::roles::{extract_roles, load_conllu, read_conllu, ParsedSentence, RoleSet};
use advae::training::{beta_at_step, teacher_forced_accuracy, StepLog, TrainConfig, Trainer};

mod common;
use common::{fixture, EXPECTED};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- 1

#[derive(Deserialize)]
struct Counts {
    hits: Vec<Vec<usize>>,
    counts: Vec<Vec<usize>>,
    excluded: usize,
}

#[derive(Deserialize)]
struct Expected {
    roles: Vec<String>,
    dec: Counts,
    #[serde(rename = "struct")]
    structural: Counts,
    enc_all_mean: Counts,
    enc_layer_0: Counts,
    pb: Counts,
    pb_max_len: usize,
}

fn metrics_fixture(name: &str) -> String {
    fixture(&format!("metrics/{name}"))
}

fn same_counts(name: &str, got: &InfluenceMatrix, want: &Counts, diffs: &mut Vec<String>) -> usize {
    if got.hits != want.hits || got.counts != want.counts || got.excluded != want.excluded {
        diffs.push(name.to_string());
    }
    want.counts.iter().flatten().filter(|&&c| c > 0).copied().min().unwrap_or(0)
}

fn traces_from_json(path: &str) -> Vec<AttentionTrace> {
    let raw: Vec<Vec<Vec<Vec<Vec<f64>>>>> = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    raw.into_iter()
        .map(|layers| AttentionTrace {
            weights: layers
                .into_iter()
                .map(|heads| {
                    heads
                        .into_iter()
                        .map(|rows| {
                            let (r, c) = (rows.len(), rows[0].len());
                            Array2::from_shape_vec((r, c), rows.concat()).unwrap()
                        })
                        .collect()
                })
                .collect(),
        })
        .collect()
}

fn metric_oracle() -> Outcome {
    let want: Expected = serde_json::from_str(&std::fs::read_to_string(metrics_fixture("expected.json")).unwrap()).unwrap();
    let roles = RoleSet::core();
    assert_eq!(roles.names(), want.roles);
    let start = Instant::now();

    let records = read_pairs(metrics_fixture("pairs.jsonl")).unwrap();
    let parsed = read_conllu(metrics_fixture("pairs.conllu")).unwrap();
    let spans = spans_by_pair_id(&parsed, &roles).unwrap();
    let pairs = assemble_pairs(&records, &spans).unwrap();
    let dec = dec_influence(&pairs, &roles, 4).unwrap();
    let structural = struct_influence(&pairs, &roles, 4).unwrap();

    let enc_parses = load_conllu(metrics_fixture("enc.conllu")).unwrap();
    let traces = traces_from_json(&metrics_fixture("enc_attention.json"));
    let items: Vec<(&ParsedSentence, &AttentionTrace)> = enc_parses.iter().zip(&traces).collect();
    let enc_all = enc_influence(&items, &roles, LayerMode::AllMean).unwrap();
    let enc_l0 = enc_influence(&items, &roles, LayerMode::Layer(0)).unwrap();

    let mut pb_parses = enc_parses.clone();
    pb_parses.extend(parsed.iter().map(|s| s.parse.clone()));
    let pb = position_baseline(&pb_parses, &roles, want.pb_max_len);
    let elapsed = start.elapsed();

    let mut diffs = Vec::new();
    let min_cell = [
        same_counts("dec", &dec, &want.dec, &mut diffs),
        same_counts("struct", &structural, &want.structural, &mut diffs),
        same_counts("enc/all_mean", &enc_all, &want.enc_all_mean, &mut diffs),
        same_counts("enc/layer_0", &enc_l0, &want.enc_layer_0, &mut diffs),
        same_counts("pb", &pb, &want.pb, &mut diffs),
    ]
    .into_iter()
    .min()
    .unwrap();
    let pass = diffs.is_empty() && elapsed < Duration::from_secs(1) && min_cell >= 20;
    outcome(
        pass,
        format!(
            "dec/struct/enc(all_mean, layer_0)/pb counts vs oracle recount: {}; smallest cell {min_cell} items; {:.0} ms",
            if diffs.is_empty() { "identical".to_string() } else { format!("MISMATCH in {}", diffs.join(", ")) },
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

// ---------------------------------------------------------------- 2

fn aggregation() -> Outcome {
    // per-role deltas as reported for the position baseline
    let names = ["verb", "subj", "dobj", "pobj"];
    let deltas = [0.12, 0.70, 0.12, 0.04];
    let m1 = [0, 1, 2, 2];
    let direct = DisentanglementReport::from_deltas(
        InfluenceKind::Pb,
        names
            .iter()
            .zip(deltas)
            .zip(m1)
            .map(|((r, d), m)| RoleDelta {
                role: r.to_string(),
                delta: d,
                m1: m,
                m2: (m + 1) % 4,
            })
            .collect(),
    );
    // the same deltas produced by a count matrix
    let mut m = InfluenceMatrix::zeros(
        InfluenceKind::Pb,
        names.map(String::from).to_vec(),
        advae::eval::var_labels(4),
    );
    m.counts = vec![vec![100; 4]; 4];
    m.hits = vec![vec![62, 50, 0, 0], vec![0, 80, 10, 0], vec![0, 0, 52, 40], vec![0, 0, 44, 40]];
    let via_matrix = totals_and_counts(&m).unwrap();
    let ok = |r: &DisentanglementReport| (r.total - 0.98).abs() <= 1e-9 && r.n_distinct == 3;
    outcome(
        ok(&direct) && ok(&via_matrix),
        format!(
            "D = {:.12} / {:.12} (from deltas / from matrix), N = {} / {}; expected 0.98, 3",
            direct.total, via_matrix.total, direct.n_distinct, via_matrix.n_distinct
        ),
    )
}

// ---------------------------------------------------------------- 3

fn role_extraction() -> Outcome {
    let roles = RoleSet::core();
    let parses = load_conllu(fixture("extraction_examples.conllu")).unwrap();
    let mut fixture_ok = 0;
    for (parse, want) in parses.iter().zip(EXPECTED) {
        let got = extract_roles(parse, &roles);
        let all = ["subj", "verb", "dobj", "pobj"]
            .iter()
            .zip(want)
            .all(|(name, w)| got.text(name).unwrap_or_default() == w);
        fixture_ok += usize::from(all);
    }
    let examples = gen_synthetic(&SyntheticSpec::default(), 2000).unwrap();
    let (mut agree, mut total) = (0usize, 0usize);
    for ex in &examples {
        let got = extract_roles(&ex.parse, &roles);
        for name in roles.names() {
            total += 1;
            agree += usize::from(got.get(&name) == ex.roles.get(&name));
        }
    }
    let rate = agree as f64 / total as f64;
    outcome(
        parses.len() == EXPECTED.len() && fixture_ok == EXPECTED.len() && agree == total,
        format!(
            "reference fixtures {fixture_ok}/{}; synthetic oracle agreement {:.2}% ({agree}/{total} role slots)",
            EXPECTED.len(),
            rate * 100.0
        ),
    )
}

// ---------------------------------------------------------------- 4

fn micro(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        hier_levels: 2,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        n_z: 2,
        d_z: 4,
        dropout: 0.0,
        vocab_size: 11,
        max_len: 12,
    }
}

const GRAD_SENTS: [&[usize]; 3] = [&[4, 5, 6, 7], &[8, 9], &[10, 4, 4, 6, 9, 5]];

fn objective(model: &Model, t: &mut Tape) -> advae::autodiff::Var {
    let framed: Vec<Vec<usize>> = GRAD_SENTS.iter().map(|s| frame(s)).collect();
    let (inputs, targets) = teacher_forcing(&framed);
    let mut noise = ChaCha8Rng::seed_from_u64(11);
    let e = model.elbo_vars(t, &GRAD_SENTS, &inputs, &targets, Some(&mut noise), &mut Ctx::eval());
    let kl = t.scale(e.kl, 0.6);
    let sum = t.add(e.recon, kl);
    t.scale(sum, 1.0 / GRAD_SENTS.len() as f64)
}

fn value(model: &Model) -> f64 {
    let mut t = Tape::new(model.params());
    let v = objective(model, &mut t);
    t.scalar(v)
}

/// Worst relative error over `n` random entries, `|a - f| / max(|a|, |f|, 1e-6)`.
fn worst_gradient_error(variant: Variant, n: usize, seed: u64) -> f64 {
    let mut model = Model::new(micro(variant), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for m in model.params_mut().values_mut() {
        m.mapv_inplace(|v| v + rng.random_range(-0.1..0.1));
    }
    let grads = {
        let mut t = Tape::new(model.params());
        let root = objective(&model, &mut t);
        t.backward(root)
    };
    let ids: Vec<ParamId> = model.params().ids().collect();
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let id = ids[rng.random_range(0..ids.len())];
        let (r, c) = model.params().get(id).dim();
        let (i, j) = (rng.random_range(0..r), rng.random_range(0..c));
        let analytic = grads.get(id).map_or(0.0, |g| g[[i, j]]);
        let orig = model.params().get(id)[[i, j]];
        model.params_mut().get_mut(id)[[i, j]] = orig + h;
        let up = value(&model);
        model.params_mut().get_mut(id)[[i, j]] = orig - h;
        let down = value(&model);
        model.params_mut().get_mut(id)[[i, j]] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
    }
    worst
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let per = 60;
    let results: Vec<(Variant, f64)> = [Variant::Advae, Variant::AdvaeHier, Variant::Tvae]
        .into_iter()
        .map(|v| (v, worst_gradient_error(v, per, 7)))
        .collect();
    let elapsed = start.elapsed();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let parts: Vec<String> = results.iter().map(|(v, e)| format!("{v} {e:.1e}")).collect();
    outcome(
        worst <= 1e-3 && elapsed < Duration::from_secs(60),
        format!(
            "{per} entries per variant, worst relative error: {}; {:.1} s",
            parts.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 5

fn kl_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples = 100_000;
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let (r, c) = (2, 4);
        let mu = Matrix::from_shape_fn((r, c), |_| rng.random_range(-1.5..1.5));
        let sigma = Matrix::from_shape_fn((r, c), |_| rng.random_range(0.3..1.6));
        let state = LatentState::new(mu.clone(), sigma.clone());
        // every fourth state is scored against a non-standard prior
        let prior = (k % 4 == 3).then(|| {
            (
                Matrix::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0)),
                Matrix::from_shape_fn((r, c), |_| rng.random_range(0.5..1.5)),
            )
        });
        let closed = match &prior {
            None => state.kl_to_std_normal(),
            Some((pm, ps)) => kl_between(&mu, &sigma, pm, ps),
        };
        let ones = Matrix::ones((r, c));
        let zeros = Matrix::zeros((r, c));
        let (pm, ps) = prior.as_ref().map_or((&zeros, &ones), |(m, s)| (m, s));
        let mut acc = 0.0;
        for _ in 0..samples {
            let z = state.sample_latent(&standard_normal(&mut rng, r, c));
            acc += state.log_density(&z) - log_density(&z, pm, ps);
        }
        let mc = acc / samples as f64;
        worst = worst.max((mc - closed).abs() / closed.abs());
    }
    let zero = LatentState::new(Matrix::zeros((3, 5)), Matrix::ones((3, 5))).kl_to_std_normal();
    outcome(
        worst <= 0.02 && zero == 0.0,
        format!("20 states x 1e5 samples, worst relative gap {:.3}%; KL(0, I) = {zero}", worst * 100.0),
    )
}

// ---------------------------------------------------------------- 6

fn schedule() -> Outcome {
    let cfg = TrainConfig::default();
    let b = cfg.beta_final;
    let zero_phase = (0..=3000).all(|s| beta_at_step(s, &cfg) == 0.0);
    let end = (beta_at_step(6000, &cfg) - b).abs() <= 1e-12;
    let mid = (beta_at_step(4500, &cfg) - b / 2.0).abs() <= 1e-12;
    let after = (6000..7000).all(|s| beta_at_step(s, &cfg) == b);
    outcome(
        zero_phase && end && mid && after,
        format!(
            "beta(0..=3000) = 0: {zero_phase}; beta(4500) = {}; beta(6000) = {}; beta_final = {b}",
            beta_at_step(4500, &cfg),
            beta_at_step(6000, &cfg)
        ),
    )
}

// ---------------------------------------------------------------- 8 (and its data for 7)

const SMOKE_SEEDS: usize = 5;
const SMOKE_TRAIN: usize = 2000;
const SMOKE_TEST: usize = 200;

struct SmokeData {
    vocab: Vocab,
    train: Vec<Vec<usize>>,
    test: Vec<Vec<usize>>,
    test_parses: Vec<ParsedSentence>,
}

fn smoke_data() -> SmokeData {
    let spec = SyntheticSpec {
        seed: 2024,
        ..SyntheticSpec::default()
    };
    let examples = gen_synthetic(&spec, SMOKE_TRAIN + SMOKE_TEST).unwrap();
    let sentences: Vec<TokenizedSentence> = examples.iter().map(|e| e.sentence.clone()).collect();
    let vocab = build_vocab(&sentences[..SMOKE_TRAIN], 1).unwrap();
    let ids: Vec<Vec<usize>> = sentences.iter().map(|s| s.ids(&vocab)).collect();
    SmokeData {
        train: ids[..SMOKE_TRAIN].to_vec(),
        test: ids[SMOKE_TRAIN..].to_vec(),
        test_parses: examples[SMOKE_TRAIN..].iter().map(|e| e.parse.clone()).collect(),
        vocab,
    }
}

fn smoke_model(vocab: &Vocab) -> ModelConfig {
    ModelConfig {
        variant: Variant::Advae,
        d_model: 64,
        n_layers: 2,
        n_heads: 4,
        n_z: 4,
        d_z: 16,
        dropout: 0.1,
        vocab_size: vocab.len(),
        ..ModelConfig::default()
    }
}

fn smoke_train(seed: u64) -> TrainConfig {
    TrainConfig {
        beta_final: 0.3,
        lr: 1e-3,
        batch_size: 32,
        seed,
        ..TrainConfig::default()
    }
    .scaled_to_corpus(SMOKE_TRAIN)
}

struct SmokeRun {
    seed: u64,
    acc_after_recon: f64,
    enc: DisentanglementReport,
    seconds: f64,
    model: Model,
}

/// Same batching as the library training loop, with an accuracy probe at
/// the end of the reconstruction phase.
fn smoke_seed(data: &SmokeData, seed: u64) -> SmokeRun {
    let start = Instant::now();
    let cfg = smoke_train(seed);
    let mut trainer = Trainer::new(Model::new(smoke_model(&data.vocab), seed).unwrap(), cfg.clone()).unwrap();
    let probe: Vec<&[usize]> = data.train.iter().map(Vec::as_slice).collect();
    let mut acc = None;
    while !trainer.done() {
        let batches = make_batches(&data.train, cfg.batch_size, Some(&mut trainer.rng_data));
        for b in &batches {
            trainer.train_step(&b.rows()).unwrap();
            if trainer.step == cfg.recon_steps {
                acc = Some(teacher_forced_accuracy(&trainer.model, &probe).unwrap());
            }
        }
        trainer.epoch += 1;
    }
    let model = trainer.model;
    let traces = advae::eval::collect_traces(&model, &data.vocab, &data.test_parses).unwrap();
    let items: Vec<_> = data.test_parses.iter().zip(&traces).collect();
    let m = enc_influence(&items, &RoleSet::core(), LayerMode::AllMean).unwrap();
    SmokeRun {
        seed,
        acc_after_recon: acc.expect("reconstruction phase ends inside training"),
        enc: totals_and_counts(&m).unwrap(),
        seconds: start.elapsed().as_secs_f64(),
        model,
    }
}

fn smoke(data: &SmokeData, offset: u64) -> (Outcome, Option<Model>) {
    let cfg = smoke_train(0);
    println!(
        "  smoke: {} train / {} test sentences, vocab {}, {} + {} schedule steps, {} epochs of {} steps",
        SMOKE_TRAIN,
        SMOKE_TEST,
        data.vocab.len(),
        cfg.recon_steps,
        cfg.anneal_steps,
        cfg.epochs,
        SMOKE_TRAIN.div_ceil(cfg.batch_size)
    );
    let mut runs = Vec::new();
    for k in 0..SMOKE_SEEDS as u64 {
        let r = smoke_seed(data, offset + k);
        let roles: Vec<String> = r.enc.per_role.iter().map(|d| format!("{}={:.2}@z{}", d.role, d.delta, d.m1)).collect();
        println!(
            "  smoke seed {}: accuracy after reconstruction {:.4}; D_enc {:.2}, N_enc {} [{}]; {:.0} s",
            r.seed,
            r.acc_after_recon,
            r.enc.total,
            r.enc.n_distinct,
            roles.join(" "),
            r.seconds
        );
        runs.push(r);
    }
    let acc_ok = runs.iter().all(|r| r.acc_after_recon >= 0.90);
    let n_ok = runs.iter().filter(|r| r.enc.n_distinct >= 2).count();
    let d: Vec<f64> = runs.iter().map(|r| r.enc.total).collect();
    let n: Vec<f64> = runs.iter().map(|r| r.enc.n_distinct as f64).collect();
    let per_role: BTreeMap<String, Vec<f64>> = runs
        .iter()
        .flat_map(|r| r.enc.per_role.iter().map(|x| (x.role.clone(), x.delta)))
        .fold(BTreeMap::new(), |mut m, (k, v)| {
            m.entry(k).or_insert_with(Vec::new).push(v);
            m
        });
    let roles: Vec<String> = per_role.iter().map(|(k, v)| format!("{k} {}", format_mean_std(v))).collect();
    let worst_seconds = runs.iter().map(|r| r.seconds).fold(0.0, f64::max);
    let min_acc = runs.iter().map(|r| r.acc_after_recon).fold(1.0, f64::min);
    let pass = acc_ok && n_ok >= 3 && worst_seconds <= 900.0;
    let detail = format!(
        "seeds {offset}..{}: min accuracy after reconstruction {min_acc:.4} (need >= 0.90 in all); N_enc >= 2 in {n_ok}/5 (need 3); D_enc {} N_enc {}; per-role dGamma_enc {}; slowest seed {worst_seconds:.0} s [stochastic]",
        offset + SMOKE_SEEDS as u64 - 1,
        format_mean_std(&d),
        format_mean_std(&n),
        roles.join(", ")
    );
    (outcome(pass, detail), runs.into_iter().next().map(|r| r.model))
}

// ---------------------------------------------------------------- 7

fn uniform_model(vocab_size: usize) -> Model {
    let cfg = ModelConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        n_z: 2,
        d_z: 4,
        dropout: 0.0,
        vocab_size,
        ..ModelConfig::default()
    };
    let mut model = Model::new(cfg, 1).unwrap();
    let p = model.params_mut();
    for name in ["dec.out.w", "dec.out.b", "enc.head.mu.w", "enc.head.mu.b", "enc.head.sigma.w"] {
        let id = p.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
        p.get_mut(id).fill(0.0);
    }
    // softplus(ln(e - 1)) = 1, so the posterior is the prior
    let id = p.find("enc.head.sigma.b").unwrap();
    p.get_mut(id).fill((std::f64::consts::E - 1.0).ln());
    model
}

fn perplexity(data: &SmokeData, model: Option<&Model>) -> Outcome {
    let Some(model) = model else {
        return outcome(false, "no trained checkpoint");
    };
    let rows: Vec<&[usize]> = data.test.iter().map(Vec::as_slice).collect();
    let k10 = ppl_upper_bound(model, &rows, 10, 77).unwrap();
    let k1 = ppl_upper_bound(model, &rows, 1, 78).unwrap();
    let diffs: Vec<f64> = k10.nll.iter().zip(&k1.nll).map(|(a, b)| a - b).collect();
    let (mean_diff, sd) = mean_std(&diffs);
    let se = sd / (diffs.len() as f64).sqrt();
    let bound_ok = mean_diff <= se;

    let v = data.vocab.len();
    let uni = uniform_model(v);
    let u = ppl_upper_bound(&uni, &rows, 3, 5).unwrap();
    let uniform_ok = ((u.ppl - v as f64) / v as f64).abs() <= 1e-9;
    outcome(
        bound_ok && uniform_ok,
        format!(
            "{} held-out sentences: mean NLL K=10 {:.4} vs K=1 {:.4} (paired diff {mean_diff:+.4}, 1 SE {se:.4}); ppl K=10 {:.3}; uniform-logit ppl {:.9} vs vocab {v}",
            rows.len(),
            k10.mean_nll(),
            k1.mean_nll(),
            k10.ppl,
            u.ppl
        ),
    )
}

// ---------------------------------------------------------------- 9

fn loss_trace(data: &SmokeData, seed: u64) -> (Vec<StepLog>, Model) {
    let cfg = TrainConfig {
        max_steps: 100,
        ..smoke_train(seed)
    };
    let mut trainer = Trainer::new(Model::new(smoke_model(&data.vocab), seed).unwrap(), cfg).unwrap();
    let mut logs = Vec::new();
    while !trainer.done() {
        trainer.run_epoch(&data.train, |l| logs.push(*l)).unwrap();
    }
    (logs, trainer.model)
}

fn determinism(data: &SmokeData) -> Outcome {
    let (a, model_a) = loss_trace(data, 3);
    let (b, model_b) = loss_trace(data, 3);
    let bits = |l: &[StepLog]| -> Vec<[u64; 3]> { l.iter().map(|s| [s.recon.to_bits(), s.kl.to_bits(), s.total.to_bits()]).collect() };
    let trace_ok = a.len() == 100 && bits(&a) == bits(&b);

    let dir = tempfile::tempdir().unwrap();
    let files: Vec<Vec<u8>> = [(&model_a, "a.jsonl"), (&model_b, "b.jsonl")]
        .iter()
        .map(|(m, name)| {
            let records = generate_perturbation_pairs(m, &data.vocab, 50, 9).unwrap();
            let p = dir.path().join(name);
            write_pairs(&p, &records).unwrap();
            std::fs::read(p).unwrap()
        })
        .collect();
    let pairs_ok = !files[0].is_empty() && files[0] == files[1];
    outcome(
        trace_ok && pairs_ok,
        format!(
            "100-step loss traces bit-identical: {trace_ok}; perturbation-pair files ({} bytes) byte-identical: {pairs_ok}",
            files[0].len()
        ),
    )
}

// ----------------------------------------------------------------

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ADVAE_ACCEPT")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|o| o.contains(&n));
    let offset: u64 = std::env::var("ADVAE_SMOKE_SEED_OFFSET")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);

    let titles = [
        (1, "metric-oracle equivalence"),
        (2, "aggregation fidelity"),
        (3, "role extraction"),
        (4, "gradient check"),
        (5, "KL correctness"),
        (6, "annealing schedule"),
        (7, "perplexity bound"),
        (8, "end-to-end smoke"),
        (9, "determinism"),
    ];
    let mut results: BTreeMap<u32, Outcome> = BTreeMap::new();
    let mut record = |n: u32, o: Outcome| {
        let title = titles.iter().find(|t| t.0 == n).unwrap().1;
        println!("{} criterion {n} ({title}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.insert(n, o);
    };

    let cheap: [(u32, fn() -> Outcome); 6] = [
        (1, metric_oracle),
        (2, aggregation),
        (3, role_extraction),
        (4, gradient_check),
        (5, kl_correctness),
        (6, schedule),
    ];
    for (n, f) in cheap {
        if wanted(n) {
            record(n, f());
        }
    }
    if wanted(7) || wanted(8) || wanted(9) {
        let data = smoke_data();
        if wanted(9) {
            record(9, determinism(&data));
        }
        if wanted(7) || wanted(8) {
            let (o, model) = smoke(&data, offset);
            if wanted(8) {
                record(8, o);
            }
            if wanted(7) {
                record(7, perplexity(&data, model.as_ref()));
            }
        }
    }

    println!();
    println!("acceptance summary");
    for (n, o) in &results {
        println!("  {} criterion {n}", if o.pass { "PASS" } else { "FAIL" });
    }
    let failed = results.values().filter(|o| !o.pass).count();
    println!("  {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
