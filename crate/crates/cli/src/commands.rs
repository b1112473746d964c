use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use topic_kg::checkpoint;
use topic_kg::corpus::{pair_instances, preprocess, CorpusStats, LangProfile, Post, PreprocessConfig, RawPost, Split};
use topic_kg::eval::evaluate;
use topic_kg::inference::{export_attention, predict_all, BeamConfig};
use topic_kg::model::{Ablation, ModelConfig, TopicKgModel};
use topic_kg::params::ParamSet;
use topic_kg::training::{derive_seed, train, EpochRecord};
use topic_kg::vocab::Vocabulary;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::io;
use crate::run::{self, RunDir};
use crate::{Command, Profile};

/// Key of the parameter-initialization stream under the root seed.
const INIT_STREAM: u64 = 0;

pub const SPLIT_FILES: [(Split, &str); 3] = [
    (Split::Train, "train.jsonl"),
    (Split::Dev, "dev.jsonl"),
    (Split::Test, "test.jsonl"),
];
pub const VOCAB_FILE: &str = "vocab.json";
pub const STATS_FILE: &str = "stats.json";
pub const DROPPED_FILE: &str = "dropped.jsonl";

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Preprocess {
            input,
            out,
            profile,
            seed,
            seq_size,
        } => cmd_preprocess(&input, &out, profile, seed, seq_size),
        Command::Train {
            data,
            config,
            seed,
            no_topic_attn,
            no_topic_state,
            separate_train,
            no_topics,
            runs_dir,
            name,
        } => {
            let flags = Ablation {
                no_topic_attn,
                no_topic_state,
                separate_train,
                no_topics,
                topic_switch: None,
            };
            cmd_train(&data, &config, seed, flags, &runs_dir, name)
        }
        Command::Predict {
            ckpt,
            data,
            beam,
            max_len,
            attn_trace,
            out,
        } => {
            let cfg = BeamConfig {
                width: beam as usize,
                max_len: max_len as usize,
                trace: attn_trace,
            };
            cmd_predict(&ckpt, &data, &cfg, out)
        }
        Command::Eval { pred, gold, k, out, label } => {
            let ks: Vec<usize> = k.into_iter().map(|k| k as usize).collect();
            cmd_eval(&pred, &gold, &ks, out, label)
        }
        Command::Topics { ckpt, n, out } => cmd_topics(&ckpt, n as usize, out),
    }
}

fn cmd_preprocess(input: &Path, out: &Path, profile: Profile, seed: u64, seq_size: Option<u64>) -> Result<()> {
    io::require_file(input)?;
    let lang = match profile {
        Profile::English => LangProfile::English,
        Profile::Chinese => LangProfile::ChinesePresegmented,
    };
    let mut raws: Vec<RawPost> = io::read_jsonl(input)?;
    for r in &mut raws {
        r.lang_profile = lang;
    }
    let mut cfg = PreprocessConfig::new(lang, seed);
    if let Some(n) = seq_size {
        cfg.seq_size = n as usize;
    }
    let data = preprocess(&raws, &cfg)?;
    for (split, file) in SPLIT_FILES {
        let posts: Vec<&Post> = data.posts.iter().filter(|p| p.split == split).collect();
        io::write(&out.join(file), &io::jsonl_bytes(&posts)?)?;
    }
    io::write_json(&out.join(VOCAB_FILE), &data.vocab)?;
    io::write_json(&out.join(STATS_FILE), &data.stats)?;
    io::write(&out.join(DROPPED_FILE), &io::jsonl_bytes(&data.dropped)?)?;
    print!("{}", stats_table(&data.stats));
    Ok(())
}

fn stats_table(s: &CorpusStats) -> String {
    let mut t = String::new();
    let rows: [(&str, String); 10] = [
        ("# of posts", s.posts.to_string()),
        ("train / dev / test", format!("{} / {} / {}", s.train, s.dev, s.test)),
        ("dropped", s.dropped.to_string()),
        ("avg len per post", format!("{:.2}", s.avg_len)),
        ("# of KP per post", format!("{:.2}", s.kp_per_post)),
        ("source vocab", s.source_vocab.to_string()),
        ("# of distinct KP", s.distinct_kp.to_string()),
        ("avg len per KP", format!("{:.2}", s.avg_kp_len)),
        ("% of absent KP", format!("{:.2}", s.pct_absent_kp)),
        ("target vocab", s.target_vocab.to_string()),
    ];
    for (k, v) in rows {
        let _ = writeln!(t, "{k:<20}{v:>16}");
    }
    t
}

fn read_vocab(path: &Path) -> Result<(Vocabulary, Vec<u8>)> {
    io::require_file(path)?;
    let bytes = io::read(path)?;
    Ok((serde_json::from_slice(&bytes)?, bytes))
}

fn run_name(config: &Path, ablation: &Ablation, seed: u64) -> String {
    let stem = config.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
    let variant: Vec<&str> = [
        (ablation.no_topics, "no-topics"),
        (ablation.no_topic_attn, "no-topic-attn"),
        (ablation.no_topic_state, "no-topic-state"),
        (ablation.separate_train, "separate-train"),
    ]
    .into_iter()
    .filter_map(|(on, name)| on.then_some(name))
    .collect();
    let variant = if variant.is_empty() { "full".to_string() } else { variant.join("+") };
    format!("{stem}-{variant}-s{seed}")
}

/// Epoch hooks report errors in the core error type.
fn to_core(e: CliError) -> topic_kg::Error {
    match e {
        CliError::Core(e) => e,
        CliError::Io { source, .. } => topic_kg::Error::Io(source),
        other => topic_kg::Error::Format(other.to_string()),
    }
}

fn save_checkpoint(run: &mut RunDir, id: &str, epoch: usize, model: &TopicKgModel, vocab: &Vocabulary) -> Result<()> {
    checkpoint::save(&run.checkpoint_dir(id), model, vocab)?;
    run.record_checkpoint(id, epoch)
}

fn cmd_train(
    data: &Path,
    config_path: &Path,
    seed: Option<u64>,
    flags: Ablation,
    runs_dir: &Path,
    name: Option<String>,
) -> Result<()> {
    io::require_dir(data)?;
    let mut config = RunConfig::load(config_path)?;
    let a = &mut config.train.ablation;
    a.no_topic_attn |= flags.no_topic_attn;
    a.no_topic_state |= flags.no_topic_state;
    a.separate_train |= flags.separate_train;
    a.no_topics |= flags.no_topics;
    if let Some(seed) = seed {
        config.train.seed = seed;
    }
    config.train.validate()?;
    let seed = config.train.seed;

    let (vocab, vocab_json) = read_vocab(&data.join(VOCAB_FILE))?;
    let load_split = |file: &str| -> Result<Vec<_>> {
        let path = data.join(file);
        io::require_file(&path)?;
        let posts: Vec<Post> = io::read_jsonl(&path)?;
        Ok(posts.iter().flat_map(|p| pair_instances(p, &vocab)).collect())
    };
    let train_set = load_split(SPLIT_FILES[0].1)?;
    let dev_set = load_split(SPLIT_FILES[1].1)?;
    if train_set.is_empty() {
        return Err(topic_kg::Error::Format("training split has no instances".into()).into());
    }

    let model_cfg = ModelConfig::new(vocab.seq_size(), vocab.bow_size(), &config.model, &config.train.ablation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[INIT_STREAM]));
    let model = TopicKgModel::new(model_cfg, &mut rng)?;

    let name = name.unwrap_or_else(|| run_name(config_path, &config.train.ablation, seed));
    let mut run = RunDir::create(&runs_dir.join(&name), &config, &vocab_json, vocab.digest(), data)?;
    log::info!(
        "run {}: {} train / {} dev instances, {} parameters",
        run.root.display(),
        train_set.len(),
        dev_set.len(),
        model.num_params()
    );

    let keep = config.keep_checkpoints;
    let mut hook = |rec: &EpochRecord, m: &TopicKgModel, improved: bool| -> topic_kg::Result<()> {
        let mut step = || -> Result<()> {
            save_checkpoint(&mut run, &checkpoint_id(rec.epoch), rec.epoch, m, &vocab)?;
            if improved {
                save_checkpoint(&mut run, run::BEST, rec.epoch, m, &vocab)?;
            }
            run.prune(keep)?;
            run.write_manifest()
        };
        step().map_err(to_core)
    };
    let (best, report) = train(model, &train_set, &dev_set, &config.train, &mut hook)?;

    let best_epoch = report.best_epoch.unwrap_or(0);
    save_checkpoint(&mut run, run::BEST, best_epoch, &best, &vocab)?;
    run.manifest.best = Some(run::BEST.to_string());
    run.manifest.stop_reason = Some(report.stop_reason);
    run.manifest.finished_at = Some(run::now());
    io::write_json(&run.root.join(run::REPORTS).join("train_report.json"), &report)?;
    run.write_manifest()?;
    println!(
        "{}\tbest epoch {}\tdev loss {}",
        run.root.display(),
        best_epoch,
        report.best_dev_loss.map_or("-".into(), |l| format!("{l:.4}"))
    );
    Ok(())
}

fn checkpoint_id(epoch: usize) -> String {
    checkpoint::epoch_dir(Path::new(""), epoch).display().to_string()
}

fn load_checkpoint(dir: &Path) -> Result<(TopicKgModel, Vocabulary)> {
    io::require_dir(dir)?;
    io::require_file(&dir.join(checkpoint::MANIFEST))?;
    if let Some(root) = run::enclosing_run(dir, run::CHECKPOINTS) {
        run::RunManifest::load(&root)?.verify(&root)?;
    }
    Ok(checkpoint::load(dir)?)
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned())
}

fn cmd_predict(ckpt: &Path, data: &Path, cfg: &BeamConfig, out: Option<PathBuf>) -> Result<()> {
    let (model, vocab) = load_checkpoint(ckpt)?;
    let data_file = io::data_file(data, SPLIT_FILES[2].1)?;
    let posts: Vec<Post> = io::read_jsonl(&data_file)?;
    cfg.validate()?;
    let predictions = predict_all(&model, &vocab, &posts, cfg)?;
    let out = out.or_else(|| {
        run::enclosing_run(ckpt, run::CHECKPOINTS)
            .map(|r| r.join(run::PREDICTIONS).join(format!("{}.jsonl", file_stem(&data_file))))
    });
    let bytes = io::jsonl_bytes(&predictions)?;
    match &out {
        Some(path) => {
            io::write(path, &bytes)?;
            log::info!("wrote {} predictions to {}", predictions.len(), path.display());
        }
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    if cfg.trace {
        let traces: Vec<serde_json::Value> = predictions
            .iter()
            .filter(|p| !p.keyphrases.is_empty())
            .map(export_attention)
            .collect::<topic_kg::Result<_>>()?;
        let bytes = io::jsonl_bytes(&traces)?;
        match &out {
            Some(path) => io::write(&path.with_extension("attention.jsonl"), &bytes)?,
            None => eprint!("{}", String::from_utf8_lossy(&bytes)),
        }
    }
    Ok(())
}

fn cmd_eval(pred: &Path, gold: &Path, ks: &[usize], out: Option<PathBuf>, label: Option<String>) -> Result<()> {
    io::require_file(pred)?;
    let gold_file = io::data_file(gold, SPLIT_FILES[2].1)?;
    let predictions = io::read_jsonl(pred)?;
    let posts: Vec<Post> = io::read_jsonl(&gold_file)?;
    let report = evaluate(&predictions, &posts, ks)?;
    let stem = file_stem(pred);
    let out = out.unwrap_or_else(|| match run::enclosing_run(pred, run::PREDICTIONS) {
        Some(r) => r.join(run::REPORTS).join(format!("eval-{stem}.json")),
        None => pred.with_extension("eval.json"),
    });
    io::write_json(&out, &report)?;
    print!("{}", report.to_table(&label.unwrap_or(stem)));
    Ok(())
}

fn cmd_topics(ckpt: &Path, n: usize, out: Option<PathBuf>) -> Result<()> {
    let (model, vocab) = load_checkpoint(ckpt)?;
    let ntm = model
        .ntm
        .as_ref()
        .ok_or_else(|| topic_kg::Error::InvalidConfig("checkpoint has no topic model".into()))?;
    let topics: Vec<serde_json::Value> = ntm
        .top_topic_words(vocab.bow_tokens(), n)
        .into_iter()
        .enumerate()
        .map(|(k, words)| serde_json::json!({ "topic": k, "words": words }))
        .collect();
    let bytes = io::jsonl_bytes(&topics)?;
    match out {
        Some(path) => io::write(&path, &bytes),
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}
