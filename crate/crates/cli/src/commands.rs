//! Subcommand implementations. Each command resolves its settings, does its
//! work in memory and only then writes its files and manifest.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use dxplain::baselines::SvmBaseline;
use dxplain::corpus::{generate_synthetic, parse_jsonl, to_jsonl, LoadMode, PostRecord};
use dxplain::metrics::EvalReport;
use dxplain::model::{predict_label, Checkpoint, ModelParams};
use dxplain::report::{
    confusion_table, examples_table, length_table, metrics_table, render_report, ExplanationRecord,
    CLASSIFICATION_ONLY, DASH, LLM_MTD, SVM_TFIDF,
};
use dxplain::tokenizer::{SequenceBuilder, Vocabulary, DEFAULT_PROMPT};
use dxplain::training::{
    fit_with, score_set, select_lambda, split_dataset, EncodedExample, EncodedSet, EpochRecord, Split,
};

use crate::manifest::{read_input, FileEntry, Outputs, RunManifest};
use crate::settings::{Settings, DATA, EVAL, EXPLAIN, MODEL, SEED, SVM, TRAIN};
use crate::{
    BaselineArgs, Cli, CliError, Command, DecodeName, EvalArgs, ExplainArgs, GenDataArgs, ModelInput, SplitName,
    TrainArgs,
};

type Flags = Vec<(&'static str, Option<String>)>;

fn flag<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

struct Run<'a> {
    command: &'static str,
    out_dir: &'a Path,
    settings: Settings,
    inputs: Vec<FileEntry>,
    outputs: Outputs,
}

impl Run<'_> {
    fn finish(self) -> Result<(), CliError> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            seed: self.settings.seed()?,
            config: self.settings.map().clone(),
            inputs: self.inputs,
            outputs: Vec::new(),
        };
        let written = self.outputs.commit(self.out_dir, manifest)?;
        eprintln!("wrote {} files to {}", written.len(), self.out_dir.display());
        Ok(())
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let name = cli.command.name();
    let seed = flag(&cli.seed);
    let config = cli.config.as_deref();
    let start = |groups: &[&[crate::settings::Key]], mut flags: Flags| -> Result<Run<'_>, CliError> {
        flags.push(("seed", seed.clone()));
        Ok(Run {
            command: name,
            out_dir: &cli.out_dir,
            settings: Settings::resolve(groups, config, &flags)?,
            inputs: Vec::new(),
            outputs: Outputs::default(),
        })
    };
    match &cli.command {
        Command::GenData(a) => gen_data(start(&[SEED, DATA], gen_data_flags(a))?),
        Command::Train(a) => train(start(&[SEED, MODEL, TRAIN], train_flags(a))?, a),
        Command::Eval(a) => {
            let flags = vec![
                ("split", a.input.split.map(|s| s.as_str().to_string())),
                ("lambda", flag(&a.lambda)),
            ];
            eval(start(&[SEED, EVAL], flags)?, a)
        }
        Command::Explain(a) => {
            let flags = vec![
                ("split", a.input.split.map(|s| s.as_str().to_string())),
                ("max_new", flag(&a.max_new)),
                (
                    "decode",
                    a.decode.map(|d| match d {
                        DecodeName::Greedy => "greedy".to_string(),
                        DecodeName::Sample => "sample".to_string(),
                    }),
                ),
                ("temperature", flag(&a.temperature)),
            ];
            explain(start(&[SEED, EXPLAIN], flags)?, a)
        }
        Command::Baseline(a) => {
            let flags = vec![
                ("svm_min_df", flag(&a.svm_min_df)),
                ("svm_epochs", flag(&a.svm_epochs)),
                ("svm_reg_grid", a.svm_reg_grid.clone()),
            ];
            baseline(start(&[SEED, SVM], flags)?, a)
        }
    }
}

fn gen_data_flags(a: &GenDataArgs) -> Flags {
    vec![
        ("n_records", flag(&a.n_records)),
        ("positive_fraction", flag(&a.positive_fraction)),
        ("length_mix", a.length_mix.clone()),
        ("noise_rate", flag(&a.noise_rate)),
    ]
}

fn gen_data(mut run: Run<'_>) -> Result<(), CliError> {
    let spec = run.settings.synthetic_spec()?;
    let records = generate_synthetic(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
    run.outputs.add("data.jsonl", to_jsonl(&records));
    run.finish()
}

fn train_flags(a: &TrainArgs) -> Flags {
    vec![
        ("epochs", flag(&a.epochs)),
        ("batch_size", flag(&a.batch_size)),
        ("lr", flag(&a.lr)),
        ("lambda", flag(&a.lambda)),
        ("lambda_grid", a.lambda_grid.clone()),
        ("patience", flag(&a.patience)),
        ("clip_norm", flag(&a.clip_norm)),
        ("d_model", flag(&a.d_model)),
        ("n_layers", flag(&a.n_layers)),
        ("n_heads", flag(&a.n_heads)),
        ("max_len", flag(&a.max_len)),
        ("min_freq", flag(&a.min_freq)),
        ("threshold", flag(&a.threshold)),
    ]
}

fn load_records(path: &Path, mode: LoadMode, inputs: &mut Vec<FileEntry>) -> Result<Vec<PostRecord>> {
    let bytes = read_input(path, inputs)?;
    let content = String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
    let loaded = parse_jsonl(&content, mode).with_context(|| format!("cannot load {}", path.display()))?;
    for w in &loaded.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(loaded.records)
}

fn split_records(records: Vec<PostRecord>, seed: u64) -> Result<Split<PostRecord>> {
    Ok(split_dataset(&records, seed)?)
}

fn pick(split: Split<PostRecord>, name: &str) -> Vec<PostRecord> {
    match name {
        "train" => split.train,
        "val" => split.val,
        "test" => split.test,
        _ => {
            let mut all = split.train;
            all.extend(split.val);
            all.extend(split.test);
            all
        }
    }
}

/// Training posts, their explanations and the prompt.
fn build_vocab(train: &[PostRecord], min_freq: usize) -> Result<Vocabulary> {
    let mut corpus: Vec<&str> = train.iter().map(|r| r.text.as_str()).collect();
    corpus.extend(train.iter().filter(|r| r.has_gold_explanation()).filter_map(|r| r.explanation.as_deref()));
    corpus.push(DEFAULT_PROMPT);
    Ok(Vocabulary::build(&corpus, min_freq)?)
}

fn epoch_line(prefix: &str, r: &EpochRecord) {
    eprintln!(
        "{prefix}epoch {}: l_cls={:.4} l_gen={:.4} l_total={:.4} val_auprc={:.4} ({:.1}s)",
        r.epoch, r.train.l_cls, r.train.l_gen, r.train.l_total, r.val_auprc, r.seconds
    );
}

fn train(mut run: Run<'_>, a: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = run.settings.train_config()?;
    run.settings.check_model_keys()?;
    let grid = run.settings.lambda_grid()?;

    let records = load_records(&a.data, LoadMode::GoldTraining, &mut run.inputs)?;
    let split = split_records(records, cfg.seed)?;
    let vocab = build_vocab(&split.train, run.settings.min_freq()?)?;
    let model_cfg = run.settings.model_config(vocab.len())?;
    let builder = SequenceBuilder::for_model(&vocab, model_cfg.max_len).map_err(anyhow::Error::from)?;
    let train_set = EncodedSet::encode(&split.train, &builder);
    let val_set = EncodedSet::encode(&split.val, &builder);
    eprintln!(
        "train={} val={} test={} vocab={} parameters={}",
        split.train.len(),
        split.val.len(),
        split.test.len(),
        vocab.len(),
        ModelParams::init(model_cfg, cfg.seed).map_err(anyhow::Error::from)?.num_parameters()
    );

    let (params, best) = if grid.is_empty() {
        let (params, history) =
            fit_with(&train_set, &val_set, &cfg, &model_cfg, |r| epoch_line("", r)).map_err(anyhow::Error::from)?;
        run.outputs.add_volatile("history.csv", history.to_csv());
        let best = history.best().cloned().expect("best epoch is recorded");
        (params, best)
    } else {
        let sel = select_lambda(&grid, &train_set, &val_set, &cfg, &model_cfg, |l, r| {
            epoch_line(&format!("lambda={l} "), r)
        })
        .map_err(anyhow::Error::from)?;
        let mut summary = String::from("lambda,seed,best_epoch,best_val_auprc,selected\n");
        for (i, r) in sel.runs.iter().enumerate() {
            run.outputs.add_volatile(format!("history_lambda_{}.csv", r.lambda), r.history.to_csv());
            summary.push_str(&format!(
                "{},{},{},{},{}\n",
                r.lambda,
                r.seed,
                r.history.best_epoch,
                r.best_val_auprc,
                u8::from(i == sel.best_index)
            ));
        }
        run.outputs.add("lambda_selection.csv", summary);
        cfg.lambda = sel.best_lambda;
        run.settings.set("lambda", sel.best_lambda.to_string());
        let best = sel.runs[sel.best_index].history.best().cloned().expect("best epoch is recorded");
        (sel.params, best)
    };

    let l = &best.train;
    eprintln!(
        "selected epoch {} (lambda={}): l_cls={} l_gen={} l_total={} n_examples={} n_positive={} n_explained={}",
        best.epoch, cfg.lambda, l.l_cls, l.l_gen, l.l_total, l.n_examples, l.n_positive, l.n_explained
    );
    eprintln!("validation AUPRC {}", best.val_auprc);

    let ckpt = Checkpoint {
        params,
        vocab_fingerprint: vocab.fingerprint(),
    };
    run.outputs.add("model.ckpt", ckpt.to_bytes());
    run.outputs.add("vocab.txt", vocab.to_file_string());
    run.outputs.add("config.txt", run.settings.to_config_string());
    run.finish()
}

/// A checkpoint together with the vocabulary it was trained on.
struct LoadedModel {
    params: ModelParams,
    vocab: Vocabulary,
}

fn load_model(input: &ModelInput, inputs: &mut Vec<FileEntry>) -> Result<LoadedModel> {
    let ckpt_path = input.checkpoint.as_ref().ok_or_else(|| anyhow!("--checkpoint is required"))?;
    let vocab_path = input
        .vocab
        .clone()
        .unwrap_or_else(|| ckpt_path.parent().unwrap_or(Path::new(".")).join("vocab.txt"));
    let ckpt_bytes = read_input(ckpt_path, inputs)?;
    let ckpt = Checkpoint::from_bytes(&ckpt_bytes).with_context(|| format!("cannot load {}", ckpt_path.display()))?;
    let vocab_bytes = read_input(&vocab_path, inputs)?;
    let vocab = Vocabulary::from_file_str(
        std::str::from_utf8(&vocab_bytes).with_context(|| format!("{} is not UTF-8", vocab_path.display()))?,
    )
    .with_context(|| format!("cannot load {}", vocab_path.display()))?;
    if ckpt.params.config.vocab_size != vocab.len() {
        bail!(
            "checkpoint does not match vocabulary: vocab_size is {} in the checkpoint but {} in {}",
            ckpt.params.config.vocab_size,
            vocab.len(),
            vocab_path.display()
        );
    }
    if ckpt.vocab_fingerprint != vocab.fingerprint() {
        bail!(
            "checkpoint does not match vocabulary: vocab_fingerprint is {:016x} in the checkpoint but {:016x} in {}",
            ckpt.vocab_fingerprint,
            vocab.fingerprint(),
            vocab_path.display()
        );
    }
    Ok(LoadedModel {
        params: ckpt.params,
        vocab,
    })
}

fn model_split(run: &mut Run<'_>, input: &ModelInput) -> Result<Vec<PostRecord>, CliError> {
    let data = input.data.as_ref().ok_or_else(|| CliError::Usage("--data is required".into()))?;
    let records = load_records(data, LoadMode::Plain, &mut run.inputs)?;
    let split_name = run.settings.raw("split").to_string();
    if split_name == "all" {
        return Ok(records);
    }
    let split = split_records(records, run.settings.seed()?)?;
    Ok(pick(split, &split_name))
}

fn check_split(settings: &Settings) -> Result<(), CliError> {
    let name = settings.raw("split");
    if ![SplitName::Train, SplitName::Val, SplitName::Test, SplitName::All]
        .iter()
        .any(|s| s.as_str() == name)
    {
        return Err(CliError::Usage(format!("split must be train, val, test or all, got {name:?}")));
    }
    Ok(())
}

/// One row of a prediction dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredRow {
    pub id: String,
    pub label: u8,
    pub score: f64,
    pub pred: u8,
    pub word_count: usize,
}

fn scores_csv(rows: &[ScoredRow]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn parse_scores(bytes: &[u8]) -> Result<Vec<ScoredRow>> {
    let mut rd = csv::Reader::from_reader(bytes);
    rd.deserialize()
        .enumerate()
        .map(|(i, r)| r.with_context(|| format!("prediction row {}", i + 1)))
        .collect()
}

fn report_of(rows: &[ScoredRow]) -> Result<EvalReport> {
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let preds: Vec<u8> = rows.iter().map(|r| r.pred).collect();
    let words: Vec<usize> = rows.iter().map(|r| r.word_count).collect();
    Ok(EvalReport::build(&labels, &scores, &preds, &words)?)
}

/// The CSV tables, the plain-text report and the key=value summary.
fn add_report(outputs: &mut Outputs, title: &str, model: &str, report: &EvalReport) {
    let rows = [(model, Some(report))];
    outputs.add("metrics.csv", metrics_table(&rows).to_csv());
    outputs.add("confusion.csv", confusion_table(report).to_csv());
    outputs.add("length_auprc.csv", length_table(&rows).to_csv());
    outputs.add("report.txt", render_report(title, model, report));
    outputs.add("report.kv", report.to_key_values());
}

fn eval(mut run: Run<'_>, a: &EvalArgs) -> Result<(), CliError> {
    check_split(&run.settings)?;
    let lambda: f64 = run.settings.get("lambda")?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(CliError::Usage(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let model = if lambda == 1.0 { CLASSIFICATION_ONLY } else { LLM_MTD };

    let (rows, title) = match &a.predictions {
        Some(path) => {
            let bytes = read_input(path, &mut run.inputs)?;
            let rows = parse_scores(&bytes).with_context(|| format!("cannot parse {}", path.display()))?;
            (rows, format!("Evaluation of {}", file_name(path)))
        }
        None => {
            if a.input.checkpoint.is_none() {
                return Err(CliError::Usage("either --checkpoint with --data, or --predictions, is required".into()));
            }
            let loaded = load_model(&a.input, &mut run.inputs)?;
            let records = model_split(&mut run, &a.input)?;
            let builder = SequenceBuilder::for_model(&loaded.vocab, loaded.params.config.max_len)
                .map_err(anyhow::Error::from)?;
            let set = EncodedSet::encode(&records, &builder);
            let scores = score_set(&loaded.params, &set).map_err(anyhow::Error::from)?;
            let rows: Vec<ScoredRow> = records
                .iter()
                .zip(&scores)
                .map(|(r, &score)| ScoredRow {
                    id: r.id.clone(),
                    label: r.label,
                    score,
                    pred: predict_label(score, loaded.params.config.threshold),
                    word_count: r.word_count(),
                })
                .collect();
            run.outputs.add("scores.csv", scores_csv(&rows));
            (rows, format!("Evaluation on the {} split", run.settings.raw("split")))
        }
    };
    let report = report_of(&rows)?;
    eprintln!(
        "accuracy={:.4} precision={:.4} recall={:.4} f1={:.4} auprc={}",
        report.accuracy,
        report.precision,
        report.recall,
        report.f1,
        report.auprc.map_or_else(|| "NA".into(), |v| format!("{v:.4}"))
    );
    add_report(&mut run.outputs, &title, model, &report);
    run.finish()
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn explain(mut run: Run<'_>, a: &ExplainArgs) -> Result<(), CliError> {
    check_split(&run.settings)?;
    let max_new: usize = run.settings.get("max_new")?;
    if max_new == 0 {
        return Err(CliError::Usage("max_new must be at least 1".into()));
    }
    let mode = run.settings.decode_mode()?;
    if a.input.checkpoint.is_none() {
        return Err(CliError::Usage("--checkpoint is required".into()));
    }
    let loaded = load_model(&a.input, &mut run.inputs)?;
    let records = model_split(&mut run, &a.input)?;
    let builder =
        SequenceBuilder::for_model(&loaded.vocab, loaded.params.config.max_len).map_err(anyhow::Error::from)?;

    let mut dump = Vec::new();
    for r in &records {
        let seq = EncodedExample::encode(r, &builder).classification_seq();
        let probability = loaded.params.predict_proba(&seq).map_err(anyhow::Error::from)?;
        let predicted_label = predict_label(probability, loaded.params.config.threshold);
        if predicted_label == 0 && a.only_positive_predictions {
            continue;
        }
        let explanation = if predicted_label == 1 {
            loaded
                .params
                .generate_explanation(&builder, &r.text, max_new, mode)
                .map_err(anyhow::Error::from)?
        } else {
            DASH.to_string()
        };
        dump.push(ExplanationRecord {
            id: r.id.clone(),
            text: r.text.clone(),
            label: Some(r.label),
            predicted_label,
            probability,
            explanation,
        });
    }
    let mut jsonl = String::new();
    for rec in &dump {
        jsonl.push_str(&serde_json::to_string(rec).expect("record serializes"));
        jsonl.push('\n');
    }
    let positives = dump.iter().filter(|r| r.predicted_label == 1).count();
    eprintln!("{} posts, {positives} predicted positive", dump.len());
    run.outputs.add("explanations.jsonl", jsonl);
    let table = examples_table(&dump);
    run.outputs.add("examples.csv", table.to_csv());
    run.outputs.add("examples.txt", table.to_text());
    run.finish()
}

fn baseline(mut run: Run<'_>, a: &BaselineArgs) -> Result<(), CliError> {
    let cfg = run.settings.svm_config()?;
    let crate::BaselineName::SvmTfidf = a.model;
    let records = load_records(&a.data, LoadMode::Plain, &mut run.inputs)?;
    let split = split_records(records, cfg.seed)?;
    let model = SvmBaseline::fit(&split.train, &split.val, &cfg).map_err(anyhow::Error::from)?;
    let rows: Vec<ScoredRow> = split
        .test
        .iter()
        .map(|r| {
            let score = model.score(&r.text);
            ScoredRow {
                id: r.id.clone(),
                label: r.label,
                score,
                pred: u8::from(score >= 0.0),
                word_count: r.word_count(),
            }
        })
        .collect();
    let report = report_of(&rows)?;
    eprintln!("test accuracy={:.4} terms={}", report.accuracy, model.tfidf.len());

    let mut reg = String::from("reg,val_accuracy,selected\n");
    for &(r, acc) in &model.reg_scores {
        reg.push_str(&format!("{r},{acc},{}\n", u8::from(r == model.classifier.reg)));
    }
    run.outputs.add("tfidf.tsv", model.tfidf.to_file_string());
    run.outputs.add("svm_weights.tsv", model.classifier.to_file_string(&model.tfidf.terms));
    run.outputs.add("reg_selection.csv", reg);
    run.outputs.add("scores.csv", scores_csv(&rows));
    add_report(&mut run.outputs, "Evaluation on the test split", SVM_TFIDF, &report);
    run.finish()
}
