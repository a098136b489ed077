//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saedit::dataio::{
    checkpoint_from_bytes, checkpoint_to_bytes, direction_from_bytes, direction_to_bytes, EmbeddingSequence,
    PairManifest, TokenCorpus,
};
use saedit::directions::{aggregate_directions, encode_prompt, extract_from_encodings, EditDirection, ExtractOptions};
use saedit::editing::{apply_direction, edit_sequence, injection_scale, ApplyOptions, ScheduleConfig};
use saedit::linalg::{dot, Matrix};
use saedit::sae::grad::{objective, objective_and_gradients, select_support};
use saedit::sae::{batch_topk, calibrate_threshold, train, SaeModel, SparsityMode, TrainConfig, TrainReport};
use saedit::synthkit::{generate_corpus, generate_pairs, score_recovery, GroundTruth, PairSpec, SynthSpec};
use saedit::Error;

const TRAIN_PROMPTS: usize = 2500;
const HELD_OUT_PROMPTS: usize = 250;
const ATTRIBUTE: usize = 0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Trained {
    model: SaeModel,
    report: TrainReport,
    seconds: f64,
}

struct World {
    truth: GroundTruth,
    held_out: Matrix,
    with_aux: Trained,
    without_aux: Trained,
}

fn acceptance_config(alpha: f64) -> TrainConfig {
    TrainConfig {
        k: 8,
        alpha,
        lr: 0.0003,
        steps: 20_000,
        batch_tokens: 1024,
        aux_k: 64,
        dead_window: 10_000,
        log_every: 1000,
        ..TrainConfig::default()
    }
}

fn fit(corpus: &TokenCorpus, cfg: &TrainConfig) -> Trained {
    let start = Instant::now();
    let init = SaeModel::init(corpus.d_model(), 256, cfg.seed).unwrap();
    let (model, report) = train(init, corpus.cycling(cfg.batch_tokens, cfg.seed).unwrap(), cfg).unwrap();
    let model = calibrate_threshold(model, corpus.epoch(cfg.batch_tokens, cfg.seed + 1).unwrap(), cfg.k).unwrap();
    Trained {
        model,
        report,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn build_world() -> World {
    let spec = SynthSpec {
        n_prompts: TRAIN_PROMPTS + HELD_OUT_PROMPTS,
        ..SynthSpec::default()
    };
    let corpus = generate_corpus(&spec).unwrap();
    let train_set = TokenCorpus::from_sequences(&corpus.sequences[..TRAIN_PROMPTS]).unwrap();
    let held_out = TokenCorpus::from_sequences(&corpus.sequences[TRAIN_PROMPTS..])
        .unwrap()
        .tokens()
        .clone();
    let with_aux = fit(&train_set, &acceptance_config(1.0 / 32.0));
    let without_aux = fit(&train_set, &acceptance_config(0.0));
    World {
        truth: corpus.truth,
        held_out,
        with_aux,
        without_aux,
    }
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let init = SaeModel::init(5, 12, seed).unwrap();
        let jitter: Vec<f64> = init.flat_params().iter().map(|p| p + rng.random_range(-0.2..0.2)).collect();
        let model = init.with_flat_params(&jitter).unwrap();
        let batch = Matrix::random_uniform(6, 5, 1.0, &mut rng);
        let dead: Vec<bool> = (0..12).map(|_| rng.random_bool(0.5)).collect();
        let (support, _, _) = select_support(&model, &batch, 2, SparsityMode::Topk, Some(&dead), 3).unwrap();
        let residual_target = Matrix::random_uniform(6, 5, 0.5, &mut rng);
        let alpha = 1.0 / 32.0;
        let (_, grads) = objective_and_gradients(&model, &batch, &support, &residual_target, alpha, &[12]).unwrap();
        let analytic = grads.flatten();
        let base = model.flat_params();
        let h = 1e-6;
        let f = |x: &[f64]| {
            objective(&model.with_flat_params(x).unwrap(), &batch, &support, &residual_target, alpha, &[12])
                .unwrap()
                .total
        };
        for p in 0..base.len() {
            let mut plus = base.clone();
            plus[p] += h;
            let mut minus = base.clone();
            minus[p] -= h;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
            let denom = analytic[p].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic[p] - numeric).abs() / denom);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-4 && secs < 10.0,
        format!("worst relative error {worst:.2e} over 20 seeds in {secs:.2}s"),
    )
}

fn sparsity_invariant(world: &World) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let b = rng.random_range(1..=24);
        let width = rng.random_range(1..=40);
        let k = rng.random_range(1..=10);
        let rows: Vec<Vec<f64>> = (0..b)
            .map(|_| {
                (0..width)
                    .map(|_| if rng.random_bool(0.4) { 0.0 } else { rng.random_range(-1.0..1.0) })
                    .collect()
            })
            .collect();
        let positives = rows.iter().flatten().filter(|v| **v > 0.0).count();
        let survivors: usize = batch_topk(&rows, k).iter().map(|c| c.len()).sum();
        if survivors != (b * k).min(positives) {
            mismatches += 1;
        }
    }
    let model = &world.with_aux.model;
    let theta = model.theta();
    let active: usize = world
        .held_out
        .iter_rows()
        .map(|e| model.encode(e, theta).unwrap().len())
        .sum();
    let mean_active = active as f64 / world.held_out.rows() as f64;
    outcome(
        mismatches == 0 && (4.0..=16.0).contains(&mean_active),
        format!("{mismatches} count mismatches in 1000 batches; held-out mean active {mean_active:.2} (K=8)"),
    )
}

fn relative_mse(model: &SaeModel, data: &Matrix) -> f64 {
    let mut err = 0.0;
    let mut energy = 0.0;
    for e in data.iter_rows() {
        let z = model.encode(e, model.theta()).unwrap();
        let e_hat = model.decode(&z).unwrap();
        err += e.iter().zip(&e_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        energy += dot(e, e);
    }
    err / energy
}

fn convergence(world: &World) -> Outcome {
    let rel = relative_mse(&world.with_aux.model, &world.held_out);
    let dead_on = world.with_aux.report.last().unwrap().dead_frac;
    let dead_off = world.without_aux.report.last().unwrap().dead_frac;
    let secs = world.with_aux.seconds;
    outcome(
        rel < 0.10 && dead_on < 0.20 && dead_off > dead_on && secs < 600.0,
        format!(
            "held-out relative MSE {rel:.4}; dead fraction {dead_on:.3} with aux, {dead_off:.3} without; {secs:.0}s"
        ),
    )
}

fn pair_directions(model: &SaeModel, truth: &GroundTruth, sigma: f64) -> Vec<Option<EditDirection>> {
    let pairs = generate_pairs(
        truth,
        &PairSpec {
            attribute: ATTRIBUTE,
            sigma: Some(sigma),
            ..PairSpec::default()
        },
    )
    .unwrap();
    pairs
        .pairs
        .iter()
        .map(|p| {
            let src = encode_prompt(model, &p.src, &p.pair_id).unwrap();
            let tgt = encode_prompt(model, &p.tgt, &p.pair_id).unwrap();
            extract_from_encodings(&src, &tgt, &ExtractOptions::default(), &p.pair_id).ok()
        })
        .collect()
}

fn direction_recovery(world: &World) -> Outcome {
    let model = &world.with_aux.model;
    let score = |d: &EditDirection| score_recovery(d, model, &world.truth, &[ATTRIBUTE]).unwrap();

    let clean: Vec<EditDirection> = pair_directions(model, &world.truth, 0.01).into_iter().flatten().collect();
    let main = aggregate_directions(&clean, 0).map(|d| score(&d));

    let noisy = pair_directions(model, &world.truth, 0.05);
    let single_mean = noisy
        .iter()
        .map(|d| d.as_ref().map_or(0.0, |d| score(d).atom_cosine))
        .sum::<f64>()
        / noisy.len() as f64;
    let usable: Vec<EditDirection> = noisy.into_iter().flatten().collect();
    let noisy_agg = aggregate_directions(&usable, 0).map(|d| score(&d).atom_cosine);

    match (main, noisy_agg) {
        (Ok(r), Ok(agg)) => outcome(
            r.atom_cosine >= 0.9 && r.precision >= 0.8 && r.recall >= 0.8 && agg > single_mean,
            format!(
                "N=100 aggregate: atom_cosine {:.4}, precision {:.3}, recall {:.3} ({} of 100 pairs usable); \
                 sigma=0.05: aggregate {agg:.4} vs single-pair mean {single_mean:.4} ({} usable)",
                r.atom_cosine,
                r.precision,
                r.recall,
                clean.len(),
                usable.len()
            ),
        ),
        (a, b) => outcome(false, format!("aggregation failed: {:?} / {:?}", a.err(), b.err())),
    }
}

fn schedule_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut shape_ok = true;
    let mut cases = 0;
    for &omega in &[0.0, 0.05, 0.3, 1.0, 2.5, 5.0] {
        for &steps in &[1usize, 2, 4, 10, 28, 50] {
            let taus = [None, Some(0.1), Some(1.0), Some(4.0), Some(100.0)];
            for tau in taus {
                let cfg = match tau {
                    Some(t) => ScheduleConfig::new(omega, steps).with_tau(t),
                    None => ScheduleConfig::new(omega, steps),
                };
                let cap = tau.unwrap_or(15.0 * omega);
                let mut prev = f64::NEG_INFINITY;
                for step in 0..steps {
                    let t = if steps == 1 { 0.0 } else { step as f64 / (steps - 1) as f64 };
                    let expect = ((t * omega).exp() - 1.0).min(cap);
                    let got = injection_scale(&cfg, step);
                    worst = worst.max((got - expect).abs());
                    shape_ok &= got >= prev && got <= cap && got >= 0.0;
                    prev = got;
                }
                cases += 1;
            }
        }
    }
    outcome(
        worst <= 1e-12 && shape_ok,
        format!("{cases} (omega, tau, steps) cases; worst deviation {worst:.1e}; monotone and capped: {shape_ok}"),
    )
}

fn random_direction(rng: &mut ChaCha8Rng, dim: usize) -> EditDirection {
    let n = rng.random_range(1..=4.min(dim));
    let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..dim)).collect();
    idx.sort_unstable();
    idx.dedup();
    let entries = idx.iter().map(|&i| (i, rng.random_range(0.1..2.0))).collect();
    EditDirection::new(
        dim,
        entries,
        idx.clone(),
        0.6,
        1e-9,
        saedit::directions::DirectionMethod::SinglePair,
        Default::default(),
    )
    .unwrap()
}

fn random_calibrated_model(rng: &mut ChaCha8Rng) -> SaeModel {
    let d = rng.random_range(2..=8);
    let latents = rng.random_range(d..=4 * d);
    let model = SaeModel::init(d, latents, rng.random()).unwrap();
    let batch = Matrix::random_uniform(32, d, 1.0, rng);
    calibrate_threshold(model, [batch], 2).unwrap()
}

fn edit_locality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    let mut checked = 0;
    for _ in 0..200 {
        let model = random_calibrated_model(&mut rng);
        let n = rng.random_range(2..=8);
        let pad_from = rng.random_range(1..=n);
        let padding: Vec<bool> = (0..n).map(|i| i >= pad_from).collect();
        let seq = EmbeddingSequence::new(
            Matrix::random_uniform(n, model.d_model(), 1.0, &mut rng),
            padding,
            (0..n).map(|i| format!("t{i}")).collect(),
        )
        .unwrap();
        let token = rng.random_range(0..pad_from);
        let d = random_direction(&mut rng, model.d_latent());
        for &omega in &[0.0, 0.2, 1.0, 3.0] {
            let cfg = ScheduleConfig::new(omega, rng.random_range(1..=6));
            let edited = edit_sequence(&model, &seq, token, &d, &cfg, ApplyOptions::default()).unwrap();
            for i in 0..edited.steps.len() {
                let out = edited.sequence_at(i);
                for r in 0..n {
                    let same = out.token(r).iter().zip(seq.token(r)).all(|(a, b)| a.to_bits() == b.to_bits());
                    if (r != token || omega == 0.0) && !same {
                        violations += 1;
                    }
                    checked += 1;
                }
                if out.padding != seq.padding {
                    violations += 1;
                }
            }
        }
    }
    outcome(violations == 0, format!("{violations} violations over {checked} token checks"))
}

fn affinity(world: &World) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let mut check = |model: &SaeModel, e: &[f64], d: &EditDirection, rng: &mut ChaCha8Rng| {
        let w1 = rng.random_range(0.01..5.0);
        let w2 = rng.random_range(0.01..5.0);
        let a = apply_direction(model, e, d, w1).unwrap();
        let b = apply_direction(model, e, d, w2).unwrap();
        let unit = model.decode_entries(d.entries(), false).unwrap();
        for ((x, y), u) in b.iter().zip(&a).zip(&unit) {
            worst = worst.max((x - y - (w2 - w1) * u).abs());
        }
    };
    for _ in 0..200 {
        let model = random_calibrated_model(&mut rng);
        let e: Vec<f64> = (0..model.d_model()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = random_direction(&mut rng, model.d_latent());
        check(&model, &e, &d, &mut rng);
    }
    let trained = &world.with_aux.model;
    for r in 0..50 {
        let e = world.held_out.row(r).to_vec();
        let d = random_direction(&mut rng, trained.d_latent());
        check(trained, &e, &d, &mut rng);
    }
    outcome(worst <= 1e-6, format!("worst deviation {worst:.2e} over 250 cases"))
}

fn determinism_and_formats(world: &World) -> Outcome {
    let mut problems = Vec::new();
    let spec = SynthSpec {
        d_model: 8,
        n_features: 24,
        k_true: 2,
        n_prompts: 60,
        tokens_per_prompt: 6,
        padding_tokens: 2,
        seed: 4,
        ..SynthSpec::default()
    };
    let run = || {
        let corpus = generate_corpus(&spec).unwrap();
        let tokens = TokenCorpus::from_sequences(&corpus.sequences).unwrap();
        let cfg = TrainConfig {
            k: 2,
            steps: 300,
            batch_tokens: 32,
            log_every: 50,
            seed: 6,
            ..TrainConfig::default()
        };
        let (model, _) = train(SaeModel::init(8, 48, 6).unwrap(), tokens.cycling(32, 6).unwrap(), &cfg).unwrap();
        let model = calibrate_threshold(model, tokens.epoch(32, 7).unwrap(), 2).unwrap();
        let pairs = generate_pairs(&corpus.truth, &PairSpec { n_pairs: 12, ..PairSpec::default() }).unwrap();
        let dirs: Vec<EditDirection> = pairs
            .pairs
            .iter()
            .filter_map(|p| {
                let s = encode_prompt(&model, &p.src, &p.pair_id).ok()?;
                let t = encode_prompt(&model, &p.tgt, &p.pair_id).ok()?;
                extract_from_encodings(&s, &t, &ExtractOptions::default(), &p.pair_id).ok()
            })
            .collect();
        let agg = aggregate_directions(&dirs, 3).unwrap();
        (checkpoint_to_bytes(&model).unwrap(), direction_to_bytes(&agg).unwrap())
    };
    let (ckpt_a, dir_a) = run();
    let (ckpt_b, dir_b) = run();
    if ckpt_a != ckpt_b {
        problems.push("checkpoint bytes differ between runs".to_string());
    }
    if dir_a != dir_b {
        problems.push("direction bytes differ between runs".to_string());
    }

    let path = Path::new("acceptance");
    let big = checkpoint_to_bytes(&world.with_aux.model).unwrap();
    match checkpoint_from_bytes(&big, path) {
        Ok(m) if m == world.with_aux.model => {}
        _ => problems.push("trained checkpoint round trip".into()),
    }
    match direction_from_bytes(&dir_a, path) {
        Ok(d) if direction_to_bytes(&d).unwrap() == dir_a => {}
        _ => problems.push("direction round trip".into()),
    }
    let mut seq = generate_corpus(&spec).unwrap().sequences.remove(0);
    seq.prompt = None;
    for v in seq.embeddings.as_mut_slice() {
        *v = *v as f32 as f64;
    }
    let seq_bytes = seq.to_bytes().unwrap();
    match EmbeddingSequence::from_bytes(&seq_bytes, path) {
        Ok(s) if s == seq && s.to_bytes().unwrap() == seq_bytes => {}
        _ => problems.push("embedding round trip".into()),
    }

    for (name, bytes) in [("checkpoint", &ckpt_a), ("direction", &dir_a), ("embedding", &seq_bytes)] {
        let parse = |b: &[u8]| -> Result<(), Error> {
            match name {
                "checkpoint" => checkpoint_from_bytes(b, path).map(drop),
                "direction" => direction_from_bytes(b, path).map(drop),
                _ => EmbeddingSequence::from_bytes(b, path).map(drop),
            }
        };
        let mut bad_magic = bytes.clone();
        bad_magic[0] ^= 0xff;
        let mut bad_version = bytes.clone();
        bad_version[4] ^= 0x7f;
        for (what, corrupt) in [
            ("truncated", bytes[..bytes.len() - 3].to_vec()),
            ("empty", Vec::new()),
            ("bad magic", bad_magic),
            ("bad version", bad_version),
            ("trailing bytes", [bytes.as_slice(), &[0u8]].concat()),
        ] {
            if !matches!(parse(&corrupt), Err(Error::Format { .. })) {
                problems.push(format!("{name} {what} not rejected as a format error"));
            }
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let pairs = generate_pairs(&world.truth, &PairSpec { n_pairs: 3, ..PairSpec::default() }).unwrap();
    let manifest_path = pairs.write(dir.path()).unwrap();
    match PairManifest::read(&manifest_path) {
        Ok(m) if m.records == pairs.manifest().unwrap().records => {}
        other => problems.push(format!("manifest round trip: {:?}", other.err())),
    }
    std::fs::write(dir.path().join("broken.jsonl"), "{\"pair_id\": 1}\n").unwrap();
    if !matches!(PairManifest::read(&dir.path().join("broken.jsonl")), Err(Error::Format { .. })) {
        problems.push("malformed manifest accepted".into());
    }

    let detail = if problems.is_empty() {
        "byte-identical reruns; all round trips and corruption fixtures behave".to_string()
    } else {
        problems.join("; ")
    };
    outcome(problems.is_empty(), detail)
}

fn main() {
    let cheap: Vec<(&str, fn() -> Outcome)> = vec![
        ("1 gradient correctness", gradient_check),
        ("5 schedule exactness", schedule_exactness),
        ("6 edit locality", edit_locality),
    ];
    let mut results: Vec<(String, Outcome)> = cheap.into_iter().map(|(n, f)| (n.to_string(), f())).collect();

    let start = Instant::now();
    let world = build_world();
    eprintln!("trained acceptance models in {:.0}s", start.elapsed().as_secs_f64());
    let heavy: Vec<(&str, fn(&World) -> Outcome)> = vec![
        ("2 sparsity invariant", sparsity_invariant),
        ("3 SAE convergence", convergence),
        ("4 direction recovery", direction_recovery),
        ("7 affinity", affinity),
        ("8 determinism and formats", determinism_and_formats),
    ];
    results.extend(heavy.into_iter().map(|(n, f)| (n.to_string(), f(&world))));
    results.sort_by(|a, b| a.0.cmp(&b.0));

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
