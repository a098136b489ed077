use std::io::Write;
use std::path::Path;

use saedit::dataio::{
    read_checkpoint, read_direction, write_checkpoint, write_direction, EmbeddingSequence, PairManifest,
    TokenCorpus,
};
use saedit::directions::{aggregate_directions, encode_prompt, extract_from_encodings, ExtractOptions};
use saedit::editing::{
    edit_constant, edit_sequence, schedule_table, ApplyOptions, EditStepRecord, ScheduleConfig, TauRule,
};
use saedit::sae::{calibrate_threshold, train as train_sae, SaeModel};
use saedit::synthkit::{generate_corpus, generate_pairs, score_recovery, GroundTruth};

use crate::config::CliConfig;
use crate::{ApplyArgs, CliError, ExtractArgs, ScheduleArgs, ScoreArgs, SynthArgs, TrainArgs};

type CliResult = Result<(), CliError>;

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::data(format!("{}: {e}", path.display()))
}

pub fn train(a: TrainArgs) -> CliResult {
    let mut cfg = CliConfig::load(a.config.as_deref())?;
    let t = &mut cfg.train;
    set(&mut t.k, a.k);
    set(&mut t.alpha, a.alpha);
    set(&mut t.lr, a.lr);
    set(&mut t.steps, a.steps);
    set(&mut t.batch_tokens, a.batch_tokens);
    set(&mut t.aux_k, a.aux_k);
    set(&mut t.dead_window, a.dead_window);
    set(&mut t.seed, a.seed);
    set(&mut t.log_every, a.log_every);
    if let Some(s) = a.sparsity {
        t.sparsity = s.into();
    }
    if a.matryoshka.is_some() {
        t.matryoshka_sizes = a.matryoshka;
    }
    set(&mut cfg.model.d_latent, a.d_latent.map(Some));
    set(&mut cfg.calibrate.batches, a.calibration_batches);
    if a.no_calibrate {
        cfg.calibrate.enabled = false;
    }

    let corpus = TokenCorpus::load(&a.corpus)?;
    let d_latent = cfg.model.d_latent.unwrap_or(8 * corpus.d_model());
    cfg.model.d_latent = Some(d_latent);
    cfg.train.validate(d_latent)?;
    CliConfig::echo("model", &cfg.model);
    CliConfig::echo("train", &cfg.train);
    CliConfig::echo("calibrate", &cfg.calibrate);
    eprintln!(
        "corpus: {} tokens of width {} from {}",
        corpus.n_tokens(),
        corpus.d_model(),
        a.corpus.display()
    );

    let tc = &cfg.train;
    let init = SaeModel::init(corpus.d_model(), d_latent, tc.seed)?;
    let (mut model, report) = train_sae(init, corpus.cycling(tc.batch_tokens, tc.seed)?, tc)?;
    if cfg.calibrate.enabled {
        let epoch = corpus.epoch(tc.batch_tokens, tc.seed.wrapping_add(0x00ca_11b8))?;
        model = if cfg.calibrate.batches == 0 {
            calibrate_threshold(model, epoch, tc.k)?
        } else {
            calibrate_threshold(model, epoch.take(cfg.calibrate.batches), tc.k)?
        };
        eprintln!("calibrated theta = {}", model.theta().unwrap_or_default());
    }
    write_checkpoint(&a.out, &model)?;
    let report_path = a.report.unwrap_or_else(|| a.out.with_extension("csv"));
    let f = std::fs::File::create(&report_path).map_err(|e| io_err(&report_path, e))?;
    report
        .write_csv(f)
        .map_err(|e| CliError::data(format!("{}: {e}", report_path.display())))?;
    if let Some(last) = report.last() {
        println!(
            "step {} L_rec {} L_aux {} dead_frac {} mean_active {}",
            last.step, last.l_rec, last.l_aux, last.dead_frac, last.mean_active
        );
    }
    println!("checkpoint {}", a.out.display());
    Ok(())
}

pub fn extract(a: ExtractArgs) -> CliResult {
    let mut cfg = CliConfig::load(a.config.as_deref())?;
    let x = &mut cfg.extract;
    set(&mut x.epsilon, a.epsilon);
    set(&mut x.rho, a.rho);
    set(&mut x.seed, a.seed);
    x.include_index.extend(a.include_index);
    x.exclude_index.extend(a.exclude_index);
    CliConfig::echo("extract", &cfg.extract);
    let x = &cfg.extract;
    if !(0.0..1.0).contains(&x.rho) {
        return Err(CliError::usage(format!("rho must lie in [0, 1), got {}", x.rho)));
    }
    if !(x.epsilon.is_finite() && x.epsilon > 0.0) {
        return Err(CliError::usage(format!("epsilon must be positive, got {}", x.epsilon)));
    }

    let model = read_checkpoint(&a.checkpoint)?;
    let manifest = PairManifest::read(&a.manifest)?;
    if manifest.is_empty() {
        return Err(CliError::data(format!("{} lists no pairs", a.manifest.display())));
    }
    let opts = ExtractOptions {
        epsilon: x.epsilon,
        rho: x.rho,
        include: x.include_index.clone(),
        exclude: x.exclude_index.clone(),
    };
    let mut dirs = Vec::with_capacity(manifest.len());
    for r in &manifest.records {
        let src = EmbeddingSequence::read(&manifest.resolve(&r.src_embedding_path))?;
        let tgt = EmbeddingSequence::read(&manifest.resolve(&r.tgt_embedding_path))?;
        let s = encode_prompt(&model, &src, &format!("{}/src", r.pair_id))?;
        let t = encode_prompt(&model, &tgt, &format!("{}/tgt", r.pair_id))?;
        let d = extract_from_encodings(&s, &t, &opts, &r.pair_id)
            .map_err(|e| CliError::from(e).with_context(&format!("pair {}", r.pair_id)))?;
        let stats = &d.provenance().pairs[0];
        if stats.ratio_max <= stats.self_ratio_max {
            eprintln!(
                "warning: pair {} ratio max {} does not exceed its self-ratio baseline {}",
                r.pair_id, stats.ratio_max, stats.self_ratio_max
            );
        }
        dirs.push(d);
    }
    let direction = if dirs.len() == 1 {
        dirs.pop().expect("one direction")
    } else {
        aggregate_directions(&dirs, x.seed)?
    };
    write_direction(&a.out, &direction)?;
    println!(
        "method {:?} pairs {} nnz {} norm {}",
        direction.method(),
        manifest.len(),
        direction.entries().len(),
        direction.norm()
    );
    println!("direction {}", a.out.display());
    Ok(())
}

impl CliError {
    fn with_context(mut self, ctx: &str) -> Self {
        self.message = format!("{ctx}: {}", self.message);
        self
    }
}

fn tau_rule(tau: Option<f64>, factor: f64) -> TauRule {
    match tau {
        Some(tau) => TauRule::Explicit { tau },
        None => TauRule::Proportional { factor },
    }
}

pub fn apply(a: ApplyArgs) -> CliResult {
    let mut cfg = CliConfig::load(a.config.as_deref())?;
    let p = &mut cfg.apply;
    if !a.omega.is_empty() {
        p.omega = a.omega;
    }
    set(&mut p.steps, a.steps);
    if a.tau.is_some() {
        p.tau = a.tau;
    }
    if let Some(f) = a.tau_factor {
        p.tau_factor = f;
        p.tau = None;
    }
    p.constant |= a.constant;
    p.no_bypass |= a.no_bypass;
    CliConfig::echo("apply", &cfg.apply);
    let p = &cfg.apply;
    if p.omega.is_empty() {
        return Err(CliError::usage("no omega given"));
    }
    for &w in &p.omega {
        ScheduleConfig {
            omega: w,
            tau_rule: tau_rule(p.tau, p.tau_factor),
            steps: p.steps,
        }
        .validate()?;
    }

    let model = read_checkpoint(&a.checkpoint)?;
    let seq = EmbeddingSequence::read(&a.input)?;
    let direction = read_direction(&a.direction)?;
    let direction_id = a
        .direction
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = a
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".into());
    let opts = ApplyOptions {
        reconstruct_at_zero: p.no_bypass,
    };
    std::fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let mut records = Vec::new();
    for &omega in &p.omega {
        let edited = if p.constant {
            edit_constant(&model, &seq, a.token_index, &direction, omega, opts)?
        } else {
            let sched = ScheduleConfig {
                omega,
                tau_rule: tau_rule(p.tau, p.tau_factor),
                steps: p.steps,
            };
            edit_sequence(&model, &seq, a.token_index, &direction, &sched, opts)?
        };
        for (i, step) in edited.steps.iter().enumerate() {
            let file = if p.constant {
                format!("{stem}_w{omega}.saed")
            } else {
                format!("{stem}_w{omega}_s{:03}.saed", step.step)
            };
            edited.sequence_at(i).write(&a.out.join(&file))?;
            records.push(EditStepRecord {
                omega,
                step: step.step,
                omega_t: step.omega_t,
                token_index: a.token_index,
                direction_id: direction_id.clone(),
                file,
            });
        }
    }
    let sidecar = a.out.join("edits.jsonl");
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).map_err(|e| CliError::data(e.to_string()))?);
        text.push('\n');
    }
    std::fs::write(&sidecar, text).map_err(|e| io_err(&sidecar, e))?;
    println!("wrote {} sequences to {}", records.len(), a.out.display());
    Ok(())
}

pub fn schedule(a: ScheduleArgs) -> CliResult {
    let cfg = ScheduleConfig {
        omega: a.omega,
        tau_rule: tau_rule(a.tau, a.tau_factor.unwrap_or(saedit::editing::DEFAULT_TAU_FACTOR)),
        steps: a.steps,
    };
    let rows = schedule_table(&cfg)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let werr = |e: std::io::Error| CliError::data(format!("stdout: {e}"));
    writeln!(out, "step\tt\tomega_t").map_err(werr)?;
    for r in rows {
        writeln!(out, "{}\t{}\t{}", r.step, r.t, r.omega_t).map_err(werr)?;
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> CliResult {
    let mut cfg = CliConfig::load(a.config.as_deref())?;
    let s = &mut cfg.synth;
    set(&mut s.d_model, a.d_model);
    set(&mut s.n_features, a.n_features);
    set(&mut s.k_true, a.k_true);
    set(&mut s.n_prompts, a.n_prompts);
    set(&mut s.tokens_per_prompt, a.tokens_per_prompt);
    set(&mut s.padding_tokens, a.padding_tokens);
    set(&mut s.sigma, a.sigma);
    set(&mut s.seed, a.seed);
    if !a.attribute.is_empty() {
        s.attribute_ids = a.attribute;
    }
    let pr = &mut cfg.pairs;
    set(&mut pr.n_pairs, a.pairs);
    set(&mut pr.magnitude, a.magnitude);
    if a.pair_sigma.is_some() {
        pr.sigma = a.pair_sigma;
    }
    pr.attribute = a
        .pair_attribute
        .or_else(|| cfg.synth.attribute_ids.first().copied())
        .unwrap_or(pr.attribute);
    cfg.synth.validate()?;
    CliConfig::echo("synth", &cfg.synth);
    CliConfig::echo("pairs", &cfg.pairs);

    let corpus = generate_corpus(&cfg.synth)?;
    corpus.write(&a.out.join("corpus"))?;
    corpus.truth.write(&a.out.join("truth.json"))?;
    println!("corpus {} ({} prompts)", a.out.join("corpus").display(), corpus.sequences.len());
    if cfg.pairs.n_pairs > 0 {
        let pairs = generate_pairs(&corpus.truth, &cfg.pairs)?;
        let manifest = pairs.write(&a.out.join("pairs"))?;
        println!("manifest {} ({} pairs)", manifest.display(), pairs.pairs.len());
    }
    Ok(())
}

pub fn score(a: ScoreArgs) -> CliResult {
    let direction = read_direction(&a.direction)?;
    let model = read_checkpoint(&a.checkpoint)?;
    let truth = GroundTruth::read(&a.truth)?;
    let attributes = if a.attribute.is_empty() {
        truth.spec.attribute_ids.clone()
    } else {
        a.attribute
    };
    let report = score_recovery(&direction, &model, &truth, &attributes)?;
    let summary = serde_json::json!({
        "precision": report.precision,
        "recall": report.recall,
        "atom_cosine": report.atom_cosine,
        "index_set_size": direction.index_set().len(),
    });
    println!("{summary}");
    let mut failed = Vec::new();
    for (name, v, floor) in [
        ("precision", report.precision, a.min_precision),
        ("recall", report.recall, a.min_recall),
        ("atom_cosine", report.atom_cosine, a.min_cosine),
    ] {
        if v < floor {
            failed.push(format!("{name} {v} < {floor}"));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::numeric(format!("below floor: {}", failed.join(", "))))
    }
}
