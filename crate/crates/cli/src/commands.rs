use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use subrank_core::attribution::{
    attribution_records, normalize, raw_scores, Scheme, TargetWeighting,
};
use subrank_core::data::{
    convert_ls07, convert_swords, load_canonical, pool_candidates, synthetic_corpus,
    write_canonical, PoolMode, SubstitutionInstance,
};
use subrank_core::encoder::EncoderBackend;
use subrank_core::metrics::{self, GapReport};
use subrank_core::scorer::{rank_candidates, RankOptions, RankingRecord};
use subrank_core::tokenizer::Vocabulary;
use subrank_core::{Encoder, Error};

use crate::config::{corpus_texts, ensure_distinct, RunArgs, RunConfig};
use crate::{
    AblateArgs, AttributeArgs, BuildVocabArgs, ConvertArgs, DatasetKind, EvaluateArgs, InitArgs,
    Status, SynthArgs,
};

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_corpus(path: &Path) -> Result<Vec<SubstitutionInstance>> {
    load_canonical(path).with_context(|| format!("cannot load {}", path.display()))
}

pub fn cmd_convert(args: &ConvertArgs) -> Result<Status> {
    let mut paths: Vec<(&str, Option<PathBuf>)> = args
        .input
        .iter()
        .map(|p| ("--in", Some(p.clone())))
        .collect();
    paths.extend(args.gold.iter().map(|p| ("--gold", Some(p.clone()))));
    paths.push(("--out", Some(args.out.clone())));
    ensure_distinct(&paths)?;

    let (mut records, stats) = match args.kind {
        DatasetKind::Ls07 => {
            if args.gold.is_empty() {
                bail!("ls07 conversion needs at least one --gold file");
            }
            let sentences = args
                .input
                .iter()
                .map(|p| read(p))
                .collect::<Result<Vec<_>>>()?;
            let gold = args
                .gold
                .iter()
                .map(|p| read(p))
                .collect::<Result<Vec<_>>>()?;
            convert_ls07(&sentences, &gold)?
        }
        DatasetKind::Swords => {
            if !args.gold.is_empty() {
                bail!("swords conversion takes no --gold file");
            }
            let [input] = args.input.as_slice() else {
                bail!("swords conversion takes exactly one --in file");
            };
            convert_swords(&read(input)?)?
        }
    };
    let pool = match (&args.pool, args.kind) {
        (Some(p), _) => p.mode(),
        (None, DatasetKind::Ls07) => Some(PoolMode::LemmaPos),
        (None, DatasetKind::Swords) => None,
    };
    if let Some(mode) = pool {
        pool_candidates(&mut records, mode);
    }
    write_canonical(create(&args.out)?, &records)?;
    println!("{stats}");
    Ok(Status::Success)
}

/// Outcome of ranking one instance.
pub type InstanceOutcome = std::result::Result<RankingRecord, String>;

/// Rank every instance on a pool of `jobs` threads. Results keep input order.
pub fn rank_corpus(
    corpus: &[SubstitutionInstance],
    vocab: &Vocabulary,
    encoder: &Encoder,
    options: &RankOptions,
    jobs: usize,
) -> Result<Vec<InstanceOutcome>> {
    let layer_range = options.resolve_layers(encoder.n_layers())?;
    let rank_one = |instance: &SubstitutionInstance| -> InstanceOutcome {
        match rank_candidates(instance, vocab, encoder, options) {
            Ok(result) => Ok(result.to_record()),
            Err(Error::AllCandidatesExcluded { id, excluded }) => Ok(RankingRecord {
                id,
                scheme: options.scheme,
                layer_range: [layer_range.start, layer_range.end],
                ranked: Vec::new(),
                excluded,
            }),
            Err(e) => Err(format!("instance {}: {e}", instance.id)),
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("cannot start worker threads")?;
    Ok(pool.install(|| corpus.par_iter().map(rank_one).collect()))
}

fn split_outcomes(outcomes: Vec<InstanceOutcome>) -> (Vec<RankingRecord>, usize) {
    let mut records = Vec::with_capacity(outcomes.len());
    let mut failed = 0;
    for outcome in outcomes {
        match outcome {
            Ok(r) => records.push(r),
            Err(message) => {
                warn!("{message}");
                failed += 1;
            }
        }
    }
    (records, failed)
}

pub fn cmd_rank(args: &RunArgs) -> Result<Status> {
    let config = args.resolve(Scheme::IntegratedGradients)?;
    let input = config.required_input()?;
    let output = config.required_output()?;
    let mut corpus = load_corpus(input)?;
    if let Some(mode) = config.pool {
        pool_candidates(&mut corpus, mode);
    }
    let (vocab, encoder) = config.model_for(&corpus)?;
    info!(
        "ranking {} instances with {} on {} thread(s)",
        corpus.len(),
        config.scheme,
        config.jobs
    );
    let outcomes = rank_corpus(
        &corpus,
        &vocab,
        &encoder,
        &config.rank_options(),
        config.jobs,
    )?;
    let (records, failed) = split_outcomes(outcomes);

    let mut out = create(output)?;
    for record in &records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    println!("ranked {} instances, {failed} failed", records.len());
    Ok(if failed == 0 {
        Status::Success
    } else {
        Status::Partial
    })
}

fn read_rankings(path: &Path) -> Result<Vec<RankingRecord>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .with_context(|| format!("{} line {}", path.display(), i + 1))?;
        records.push(record);
    }
    Ok(records)
}

fn write_report<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, report)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<Status> {
    ensure_distinct(&[
        ("--in", Some(args.input.clone())),
        ("--gold", Some(args.gold.clone())),
        ("--report", args.report.clone()),
    ])?;
    let rankings = read_rankings(&args.input)?;
    let gold = load_corpus(&args.gold)?;
    let report = metrics::evaluate(&rankings, &gold, args.allow_missing)?;
    if let Some(path) = &args.report {
        write_report(path, &report)?;
    }
    println!(
        "mean GAP {} over {} instances ({} skipped)",
        report.percent_display(),
        report.n_instances,
        report.n_skipped
    );
    Ok(Status::Success)
}

fn parse_span(s: &str) -> Result<(usize, usize)> {
    let parsed = s
        .split_once(':')
        .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
    parsed.with_context(|| format!("invalid span {s:?}, expected START:END character offsets"))
}

pub fn cmd_attribute(args: &AttributeArgs) -> Result<Status> {
    let config = args.run.resolve(Scheme::IntegratedGradients)?;
    let (start, end) = parse_span(&args.span)?;
    let vocab = config.vocabulary([args.sentence.as_str()])?;
    let encoder = config.encoder(&vocab)?;
    let options = config.rank_options();
    let layer_range = options.resolve_layers(encoder.n_layers())?;

    let sentence = vocab.tokenize(&args.sentence)?.locate_target(start, end)?;
    let output = encoder.encode(&sentence.token_ids)?;
    let raw = raw_scores(
        &encoder,
        &sentence,
        &output,
        options.scheme,
        layer_range,
        options.ig,
        options.include_specials,
    )?;
    let weights = normalize(&raw, options.scheme, options.target)?;
    let records = attribution_records(&sentence, &raw, &weights)?;

    let mut out: Box<dyn Write> = match &config.output {
        Some(path) => Box::new(create(path)?),
        None => Box::new(std::io::stdout().lock()),
    };
    for record in &records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(Status::Success)
}

/// One row of the ablation table.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub scheme: Scheme,
    pub include_target: bool,
    /// Mean GAP as a percentage.
    pub mean_gap: f64,
    pub n_instances: usize,
    pub n_skipped: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub corpus_size: usize,
    pub layer_range: [usize; 2],
    /// Every scheme with the target included.
    pub schemes: Vec<AblationRow>,
    /// Attention with and without the target term.
    pub target_position: Vec<AblationRow>,
}

fn ablation_row(
    corpus: &[SubstitutionInstance],
    vocab: &Vocabulary,
    encoder: &Encoder,
    options: &RankOptions,
    jobs: usize,
) -> Result<AblationRow> {
    let (records, failed) = split_outcomes(rank_corpus(corpus, vocab, encoder, options, jobs)?);
    let report: GapReport = metrics::evaluate(&records, corpus, true)?;
    Ok(AblationRow {
        scheme: options.scheme,
        include_target: options.target != TargetWeighting::Dropped,
        mean_gap: report.percent(),
        n_instances: report.n_instances,
        n_skipped: report.n_skipped,
        n_failed: failed,
    })
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<Status> {
    if args.run.scheme.is_some() {
        bail!("ablate runs every scheme; drop --scheme");
    }
    if args.run.no_include_target || args.run.target_in_softmax {
        bail!("ablate runs both target variants; drop the target flags");
    }
    let config = args.run.resolve(Scheme::IntegratedGradients)?;
    let mut corpus = match &config.input {
        Some(path) => {
            if args.synthetic.is_some() {
                bail!("--synthetic and --in are mutually exclusive");
            }
            load_corpus(path)?
        }
        None => synthetic_corpus(args.synthetic.unwrap_or(50), config.seed),
    };
    if let Some(mode) = config.pool {
        pool_candidates(&mut corpus, mode);
    }
    let (vocab, encoder) = config.model_for(&corpus)?;
    let base = config.rank_options();
    let layer_range = base.resolve_layers(encoder.n_layers())?;

    let mut schemes = Vec::new();
    for scheme in Scheme::ALL {
        let options = RankOptions {
            scheme,
            target: TargetWeighting::Fixed,
            ..base
        };
        info!("ablation: {scheme}");
        schemes.push(ablation_row(
            &corpus,
            &vocab,
            &encoder,
            &options,
            config.jobs,
        )?);
    }
    let with_target = schemes
        .iter()
        .find(|r| r.scheme == Scheme::Attention)
        .cloned()
        .expect("attention is one of the schemes");
    let without_options = RankOptions {
        scheme: Scheme::Attention,
        target: TargetWeighting::Dropped,
        ..base
    };
    let without_target = ablation_row(&corpus, &vocab, &encoder, &without_options, config.jobs)?;

    let report = AblationReport {
        corpus_size: corpus.len(),
        layer_range: [layer_range.start, layer_range.end],
        schemes,
        target_position: vec![with_target, without_target],
    };
    if let Some(path) = &config.report {
        write_report(path, &report)?;
    }
    print!("{}", render_ablation(&report));
    let failed = report
        .schemes
        .iter()
        .chain(&report.target_position)
        .any(|r| r.n_failed > 0);
    Ok(if failed {
        Status::Partial
    } else {
        Status::Success
    })
}

fn render_ablation(report: &AblationReport) -> String {
    let mut s = format!(
        "{} instances, layers {}:{}\n\n",
        report.corpus_size, report.layer_range[0], report.layer_range[1]
    );
    let header: Vec<&str> = report
        .schemes
        .iter()
        .map(|r| r.scheme.short_name())
        .collect();
    let values: Vec<String> = report
        .schemes
        .iter()
        .map(|r| format!("{:.1}", r.mean_gap))
        .collect();
    s += &format!("{:<8}", "scheme");
    for h in &header {
        s += &format!("{h:>8}");
    }
    s += &format!("\n{:<8}", "GAP");
    for v in &values {
        s += &format!("{v:>8}");
    }
    s += "\n\nattn    with target  without target\n";
    s += &format!(
        "GAP     {:>11.1}  {:>14.1}\n",
        report.target_position[0].mean_gap, report.target_position[1].mean_gap
    );
    s
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Status> {
    let corpus = synthetic_corpus(args.n, args.seed);
    write_canonical(create(&args.out)?, &corpus)?;
    println!("records={}", corpus.len());
    Ok(Status::Success)
}

pub fn cmd_build_vocab(args: &BuildVocabArgs) -> Result<Status> {
    ensure_distinct(&[
        ("--in", Some(args.input.clone())),
        ("--out", Some(args.out.clone())),
    ])?;
    let corpus = load_corpus(&args.input)?;
    let vocab = Vocabulary::from_texts(corpus_texts(&corpus), true);
    let mut out = create(&args.out)?;
    vocab.write(&mut out)?;
    out.flush()?;
    println!("pieces={}", vocab.len());
    Ok(Status::Success)
}

pub fn cmd_init(args: &InitArgs) -> Result<Status> {
    let config: RunConfig = args.run.resolve(Scheme::Attention)?;
    let out = config.required_output()?;
    let vocab = match &config.vocab {
        Some(_) => config.vocabulary([])?,
        None => {
            let corpus = load_corpus(config.required_input()?)?;
            Vocabulary::from_texts(corpus_texts(&corpus), true)
        }
    };
    let encoder = config.encoder(&vocab)?;
    let mut file = create(out)?;
    encoder.write_weights(&mut file)?;
    file.flush()?;
    println!(
        "vocab_size={} layers={}",
        encoder.config().vocab_size,
        encoder.n_layers()
    );
    Ok(Status::Success)
}
