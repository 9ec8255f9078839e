//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use astrolm::model::{load_checkpoint, Checkpoint};
use astrolm::ner::{
    finetune, label_frequencies, load_conll, load_conll_predictions, random_baseline, to_conll,
    FinetuneHyper, LabeledSequence, SequenceLabeler, TagSet, Tagger,
};
use astrolm::pretrain::{pretrain, PretrainHyper};
use astrolm::report::{compare_models, MetricsFile};
use astrolm::sts::{
    evaluate_retrieval, load_pairs, mine_pairs_with_stats, pairs_to_jsonl, similarity_margin,
    split_pairs, train_biencoder, EmbeddingModel, MiningOptions, StsHyper,
};
use astrolm::tokenizer::{train_wordpiece_from_texts, TrainOptions};
use astrolm::{load_corpus, ModelConfig, Vocabulary};
use serde_json::{json, Value};

use crate::config::{flag, ConfigFile};
use crate::manifest::{default_manifest_path, Run};
use crate::{
    BaselineNerArgs, Cli, Command, EmbedArgs, EvalNerArgs, FinetuneNerArgs, MinePairsArgs,
    PretrainArgs, ReportArgs, TokenizeArgs, TokenizerTrainArgs, TrainStsArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    let (name, out, mut run) = match &cli.command {
        Command::TokenizerTrain(a) => (
            "tokenizer-train",
            Some(a.out.clone()),
            tokenizer_train(a, &file)?,
        ),
        Command::Tokenize(a) => ("tokenize", a.out.clone(), tokenize(a)?),
        Command::Pretrain(a) => ("pretrain", Some(a.out.clone()), pretrain_cmd(a, &file)?),
        Command::FinetuneNer(a) => ("finetune-ner", Some(a.out.clone()), finetune_ner(a, &file)?),
        Command::EvalNer(a) => ("eval-ner", Some(a.out.clone()), eval_ner(a)?),
        Command::BaselineNer(a) => ("baseline-ner", Some(a.out.clone()), baseline_ner(a)?),
        Command::MinePairs(a) => ("mine-pairs", Some(a.out.clone()), mine_pairs(a, &file)?),
        Command::TrainSts(a) => ("train-sts", Some(a.out.clone()), train_sts(a, &file)?),
        Command::Embed(a) => ("embed", a.out.clone(), embed(a)?),
        Command::Report(a) => ("report", Some(a.out.clone()), report(a)?),
    };
    if let Some(path) = &cli.config {
        run.input(path)?;
    }
    run.finish(&manifest_path(&cli, name, out.as_deref()))
}

fn manifest_path(cli: &Cli, name: &str, out: Option<&Path>) -> PathBuf {
    cli.manifest
        .clone()
        .unwrap_or_else(|| default_manifest_path(name, out))
}

/// `path` with `suffix` appended to its full file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_tagset(path: Option<&Path>) -> Result<TagSet> {
    match path {
        Some(p) => Ok(TagSet::load(p)?),
        None => Ok(TagSet::default()),
    }
}

fn checkpoint_vocab(ckpt: &Checkpoint, vocab: Option<&Path>, run: &mut Run) -> Result<Vocabulary> {
    match vocab {
        Some(p) => {
            run.input(p)?;
            Ok(Vocabulary::load(p)?)
        }
        None => ckpt
            .vocab
            .clone()
            .context("the checkpoint stores no vocabulary; pass --vocab"),
    }
}

fn tokenizer_train(a: &TokenizerTrainArgs, file: &ConfigFile) -> Result<Run> {
    let mut run = Run::start("tokenizer-train");
    let opts: TrainOptions = file.resolve(
        "tokenizer",
        vec![
            ("vocab_size", flag(a.vocab_size)),
            ("min_frequency", flag(a.min_freq)),
            ("lowercase", a.lowercase.then_some(Value::Bool(true))),
        ],
    )?;
    run.input(&a.corpus)?;
    let corpus = load_corpus(&a.corpus)?;
    let vocab = train_wordpiece_from_texts(corpus.paragraphs(), &opts)?;
    run.config(&json!({ "tokenizer": opts }))?;
    run.output(&a.out, vocab.to_text().as_bytes())?;
    Ok(run)
}

fn tokenize(a: &TokenizeArgs) -> Result<Run> {
    let mut run = Run::start("tokenize");
    run.input(&a.vocab)?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let max_len = a
        .max_len
        .unwrap_or_else(|| vocab.tokenize_ids(&a.text).len() + 2);
    let encoding = vocab.encode(&a.text, max_len);
    run.config(&json!({ "text": a.text, "max_len": max_len }))?;
    emit(
        &mut run,
        a.out.as_deref(),
        serde_json::to_string(&encoding)? + "\n",
    )?;
    Ok(run)
}

fn emit(run: &mut Run, out: Option<&Path>, text: String) -> Result<()> {
    match out {
        Some(p) => run.output(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretrain_cmd(a: &PretrainArgs, file: &ConfigFile) -> Result<Run> {
    let mut run = Run::start("pretrain");
    run.input(&a.corpus)?;
    run.input(&a.vocab)?;
    let corpus = load_corpus(&a.corpus)?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let mut model: ModelConfig = file.resolve("model", vec![("seed", flag(a.seed))])?;
    if model.vocab_size == 0 {
        model.vocab_size = vocab.len();
    }
    ensure!(
        model.vocab_size == vocab.len(),
        "model.vocab_size is {} but {} has {} tokens",
        model.vocab_size,
        a.vocab.display(),
        vocab.len()
    );
    let hyper: PretrainHyper = file.resolve(
        "pretrain",
        vec![
            ("epochs", flag(a.epochs)),
            ("seed", flag(a.seed)),
            ("lr", flag(a.lr)),
            ("batch_size", flag(a.batch_size)),
        ],
    )?;
    run.config(&json!({ "model": model, "pretrain": hyper }))?;
    run.seed("model", model.seed);
    run.seed("pretrain", hyper.seed);
    let (ckpt, log) = pretrain(&corpus, &vocab, &model, &hyper)?;
    run.output(&a.out, ckpt.to_json()?.as_bytes())?;
    let log_path = a.log.clone().unwrap_or_else(|| sibling(&a.out, ".log.csv"));
    run.output(&log_path, log.to_csv().as_bytes())?;
    Ok(run)
}

fn finetune_ner(a: &FinetuneNerArgs, file: &ConfigFile) -> Result<Run> {
    let mut run = Run::start("finetune-ner");
    run.input(&a.ckpt)?;
    run.input(&a.train)?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    let vocab = checkpoint_vocab(&ckpt, a.vocab.as_deref(), &mut run)?;
    if let Some(p) = &a.tagset {
        run.input(p)?;
    }
    let tagset = load_tagset(a.tagset.as_deref())?;
    let train = load_conll(&a.train)?;
    let hyper: FinetuneHyper = file.resolve(
        "finetune",
        vec![
            ("epochs", flag(a.epochs)),
            ("seed", flag(a.seed)),
            ("lr", flag(a.lr)),
            ("batch_size", flag(a.batch_size)),
        ],
    )?;
    run.config(&json!({ "finetune": hyper, "entity_types": tagset }))?;
    run.seed("finetune", hyper.seed);
    let tagger = finetune(&ckpt, &train, &tagset, &vocab, &hyper)?;
    run.output(&a.out, tagger.to_json()?.as_bytes())?;
    Ok(run)
}

fn words(data: &[LabeledSequence]) -> Vec<Vec<String>> {
    data.iter().map(|s| s.tokens.clone()).collect()
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}

fn eval_ner(a: &EvalNerArgs) -> Result<Run> {
    let mut run = Run::start("eval-ner");
    run.input(&a.gold)?;
    let gold = load_conll(&a.gold)?;
    if let Some(p) = &a.tagset {
        run.input(p)?;
    }
    let (tagset, pred, default_name) = match (&a.pred, &a.tagger) {
        (Some(path), _) => {
            run.input(path)?;
            let pred = load_conll_predictions(path)?;
            ensure!(
                pred.len() == gold.len(),
                "{} has {} sequences, {} has {}",
                path.display(),
                pred.len(),
                a.gold.display(),
                gold.len()
            );
            for (i, (p, g)) in pred.iter().zip(&gold).enumerate() {
                if p.tokens != g.tokens {
                    bail!(
                        "sequence {} of {} does not match the gold tokens",
                        i + 1,
                        path.display()
                    );
                }
            }
            let labels = pred.into_iter().map(|s| s.labels).collect();
            (load_tagset(a.tagset.as_deref())?, labels, file_stem(path))
        }
        (None, Some(path)) => {
            run.input(path)?;
            let tagger = Tagger::load(path)?;
            let tagset = match &a.tagset {
                Some(p) => {
                    let t = TagSet::load(p)?;
                    ensure!(
                        t == tagger.tagset,
                        "{} does not match the tagger's entity types",
                        p.display()
                    );
                    t
                }
                None => tagger.tagset.clone(),
            };
            let labels = tagger.label_all(&words(&gold))?;
            (tagset, labels, file_stem(path))
        }
        (None, None) => bail!("pass --pred or --tagger"),
    };
    let model = a.model.clone().unwrap_or(default_name);
    let metrics = MetricsFile::evaluate(&model, &a.split, &tagset, &gold, &pred)?;
    run.config(&json!({ "model": model, "split": a.split, "entity_types": tagset }))?;
    run.output(&a.out, metrics.to_json()?.as_bytes())?;
    if let Some(path) = &a.bubble {
        run.output(path, metrics.bubble_csv()?.as_bytes())?;
    }
    Ok(run)
}

fn baseline_ner(a: &BaselineNerArgs) -> Result<Run> {
    let mut run = Run::start("baseline-ner");
    run.input(&a.train)?;
    run.input(&a.input)?;
    if let Some(p) = &a.tagset {
        run.input(p)?;
    }
    let tagset = load_tagset(a.tagset.as_deref())?;
    let train = load_conll(&a.train)?;
    let input = load_conll_predictions(&a.input)?;
    let frequencies = label_frequencies(&train);
    let baseline = random_baseline(&frequencies, &tagset, a.seed)?;
    let labels = baseline.label_all(&words(&input))?;
    let out: Vec<LabeledSequence> = input
        .into_iter()
        .zip(labels)
        .map(|(s, labels)| LabeledSequence { labels, ..s })
        .collect();
    run.config(&json!({ "label_frequencies": frequencies, "entity_types": tagset }))?;
    run.seed("baseline", a.seed);
    run.output(&a.out, to_conll(&out).as_bytes())?;
    Ok(run)
}

fn parse_ratios(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .with_context(|| format!("bad split ratio {p:?}"))
        })
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| anyhow::anyhow!("--split takes three comma-separated fractions, got {text:?}"))
}

fn mine_pairs(a: &MinePairsArgs, file: &ConfigFile) -> Result<Run> {
    let mut run = Run::start("mine-pairs");
    run.input(&a.corpus)?;
    let corpus = load_corpus(&a.corpus)?;
    let opts: MiningOptions = file.resolve(
        "mining",
        vec![
            ("context_mode", flag(a.mode.clone())),
            ("min_chars", flag(a.min_chars)),
            ("max_chars", flag(a.max_chars)),
            (
                "drop_missing_abstract",
                a.title_fallback.then_some(Value::Bool(false)),
            ),
        ],
    )?;
    let (pairs, stats) = mine_pairs_with_stats(&corpus, &opts);
    let mut config = json!({ "mining": opts, "stats": stats });
    run.output(&a.out, pairs_to_jsonl(&pairs).as_bytes())?;
    if let Some(text) = &a.split {
        let ratios = parse_ratios(text)?;
        let splits = split_pairs(&pairs, ratios, a.split_seed)?;
        config["split"] = json!({ "ratios": ratios, "seed": a.split_seed });
        run.seed("split", a.split_seed);
        for (name, part) in [
            ("train", &splits.train),
            ("validation", &splits.validation),
            ("test", &splits.test),
        ] {
            run.output(
                &sibling(&a.out, &format!(".{name}.jsonl")),
                pairs_to_jsonl(part).as_bytes(),
            )?;
        }
    }
    run.config(&config)?;
    Ok(run)
}

fn train_sts(a: &TrainStsArgs, file: &ConfigFile) -> Result<Run> {
    let mut run = Run::start("train-sts");
    run.input(&a.ckpt)?;
    run.input(&a.pairs)?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    let vocab = checkpoint_vocab(&ckpt, a.vocab.as_deref(), &mut run)?;
    let pairs = load_pairs(&a.pairs)?;
    let hyper: StsHyper = file.resolve(
        "sts",
        vec![
            ("epochs", flag(a.epochs)),
            ("seed", flag(a.seed)),
            ("lr", flag(a.lr)),
            ("batch_size", flag(a.batch_size)),
            ("temperature", flag(a.temperature)),
        ],
    )?;
    run.config(&json!({ "sts": hyper }))?;
    run.seed("sts", hyper.seed);
    let model = train_biencoder(&ckpt, &pairs, &vocab, &hyper)?;
    run.output(&a.out, model.to_json()?.as_bytes())?;
    if let Some(path) = &a.eval {
        run.input(path)?;
        let test = load_pairs(path)?;
        let retrieval = evaluate_retrieval(&model, &test, 1)?;
        let q = model.embed_batch(
            &test
                .iter()
                .map(|p| p.query_text.as_str())
                .collect::<Vec<_>>(),
        )?;
        let p = model.embed_batch(
            &test
                .iter()
                .map(|p| p.positive_text.as_str())
                .collect::<Vec<_>>(),
        )?;
        let report = json!({
            "pairs": test.len(),
            "recall_at_1": retrieval.recall_at_k,
            "mean_reciprocal_rank": retrieval.mean_reciprocal_rank,
            "similarity_margin": similarity_margin(&q, &p)?,
        });
        let text = serde_json::to_string_pretty(&report)? + "\n";
        run.output(&sibling(&a.out, ".eval.json"), text.as_bytes())?;
    }
    Ok(run)
}

fn embed(a: &EmbedArgs) -> Result<Run> {
    let mut run = Run::start("embed");
    run.input(&a.model)?;
    let model = EmbeddingModel::load(&a.model)?;
    run.config(&json!({ "text": a.text, "max_len": model.max_len }))?;
    let v = model.embed(&a.text)?;
    emit(
        &mut run,
        a.out.as_deref(),
        serde_json::to_string(&v)? + "\n",
    )?;
    Ok(run)
}

fn report(a: &ReportArgs) -> Result<Run> {
    let mut run = Run::start("report");
    let mut reports = Vec::with_capacity(a.metrics.len());
    for path in &a.metrics {
        run.input(path)?;
        reports
            .push(MetricsFile::load(path).with_context(|| format!("loading {}", path.display()))?);
    }
    let comparison = compare_models(&reports)?;
    run.config(&json!({ "metrics": a.metrics }))?;
    run.output(&a.out, comparison.per_label_csv()?.as_bytes())?;
    if let Some(path) = &a.table {
        run.output(path, comparison.table_csv()?.as_bytes())?;
    }
    print!("{}", comparison.table_text());
    Ok(run)
}
