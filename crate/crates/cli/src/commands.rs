use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use nerlab::classic::{predict_classic, train_classic, ClassicConfig, ClassicModel};
use nerlab::data::{corpus_stats, distinct_labels, parse_conll, save_conll, ConllOptions, Dataset, LabelSchema};
use nerlab::embeddings::{write_embeddings, EmbeddingStore};
use nerlab::eval::{per_tag_csv, per_tag_table, score, EvalReport, MacroOver};
use nerlab::heads::{AuxKind, Blend, HeadKind};
use nerlab::synth::{synth_corpus, synth_embeddings, EmbeddingMode, SynthCorpusConfig, SynthEmbeddingConfig};
use nerlab::training::{predict, train, TrainConfig};
use nerlab::{Checkpoint64, Error, Result};

use crate::manifest::ManifestBuilder;
use crate::{
    AblateArgs, ClassicPredictArgs, ClassicTrainArgs, Command, EdaArgs, EmbeddingModeArg, EvalArgs, MacroOverArg,
    PredictArgs, SchemaArg, SynthArgs, TrainArgs,
};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const PREDICTIONS_FILE: &str = "predictions.conll";
pub const EVAL_JSON_FILE: &str = "eval_report.json";
pub const PER_TAG_FILE: &str = "per_tag.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const CLASSIC_MODEL_FILE: &str = "classic_model.json";

pub fn dispatch(command: &Command, raw: &[String], out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match command {
        Command::Eda(a) => cmd_eda(a, raw, out),
        Command::Train(a) => cmd_train(a, raw, out),
        Command::Predict(a) => cmd_predict(a, raw, out),
        Command::Eval(a) => cmd_eval(a, raw, out),
        Command::Ablate(a) => cmd_ablate(a, raw, out, err),
        Command::Synth(a) => cmd_synth(a, raw, out),
        Command::ClassicTrain(a) => cmd_classic_train(a, raw, out),
        Command::ClassicPredict(a) => cmd_classic_predict(a, raw, out),
    }
}

fn load_schema(arg: &SchemaArg, manifest: &mut ManifestBuilder) -> Result<LabelSchema> {
    match &arg.schema {
        Some(p) => {
            manifest.input(p)?;
            LabelSchema::load(p)
        }
        None => Ok(LabelSchema::multiconer2()),
    }
}

fn out_dir(path: &Path) -> Result<PathBuf> {
    fs::create_dir_all(path)?;
    Ok(path.to_path_buf())
}

fn read_corpus(path: &Path, schema: Option<&LabelSchema>, pos_column: Option<usize>, m: &mut ManifestBuilder) -> Result<Dataset> {
    m.input(path)?;
    parse_conll(path, &ConllOptions { pos_column, schema })
}

fn write_text(path: &Path, text: &str, m: &mut ManifestBuilder) -> Result<()> {
    fs::write(path, text)?;
    m.output(path);
    Ok(())
}

pub fn cmd_eda(args: &EdaArgs, raw: &[String], out: &mut dyn Write) -> Result<()> {
    let dir = out_dir(&args.out)?;
    let mut m = ManifestBuilder::new("eda", raw);
    let schema = match &args.schema {
        Some(p) => {
            m.input(p)?;
            Some(LabelSchema::load(p)?)
        }
        None => None,
    };
    let mut pooled = Dataset::default();
    let mut per_file = Vec::new();
    for path in &args.corpus {
        let ds = read_corpus(path, schema.as_ref(), args.pos_column, &mut m)?;
        per_file.push((path.display().to_string(), ds.len()));
        pooled = pooled.concat(ds);
    }
    let stats = corpus_stats(&pooled)?;
    let labels = distinct_labels(&pooled);

    let mut report = String::new();
    let _ = writeln!(report, "sentences: {}", stats.num_sentences);
    for (path, n) in &per_file {
        let _ = writeln!(report, "  {path}: {n}");
    }
    let _ = writeln!(report, "tokens: {}", stats.num_tokens);
    let _ = writeln!(report, "distinct BIO labels: {}", labels.len());
    let _ = writeln!(report, "entity mentions: {}", stats.tag_frequency.values().sum::<usize>());
    let _ = writeln!(report, "sentence length histogram:");
    for (start, count) in &stats.length_histogram {
        let _ = writeln!(report, "  {:>4}-{:<4} {count}", start, start + nerlab::data::LENGTH_BUCKET_WIDTH - 1);
    }
    let _ = writeln!(report, "entity types by frequency:");
    for (t, c) in stats.ranked_tags() {
        let _ = writeln!(report, "  {t:<24} {c}");
    }
    out.write_all(report.as_bytes())?;

    let mut tags_csv = String::from("type,count\n");
    for (t, c) in stats.ranked_tags() {
        let _ = writeln!(tags_csv, "{t},{c}");
    }
    let mut lengths_csv = String::from("bucket_start,bucket_end,sentences\n");
    for (start, count) in &stats.length_histogram {
        let _ = writeln!(lengths_csv, "{start},{},{count}", start + nerlab::data::LENGTH_BUCKET_WIDTH - 1);
    }
    let labels_txt: String = labels.iter().map(|l| format!("{l}\n")).collect();
    write_text(&dir.join("eda_report.txt"), &report, &mut m)?;
    write_text(&dir.join("tag_frequency.csv"), &tags_csv, &mut m)?;
    write_text(&dir.join("length_histogram.csv"), &lengths_csv, &mut m)?;
    write_text(&dir.join("labels.txt"), &labels_txt, &mut m)?;
    m.finish(&dir)?;
    Ok(())
}

fn load_train_config(path: &Path, seed: Option<u64>, m: &mut ManifestBuilder) -> Result<TrainConfig> {
    m.input(path)?;
    let mut config = TrainConfig::from_json(&fs::read_to_string(path)?)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

pub fn cmd_train(args: &TrainArgs, raw: &[String], out: &mut dyn Write) -> Result<()> {
    let dir = out_dir(&args.out)?;
    let mut m = ManifestBuilder::new("train", raw);
    let config = load_train_config(&args.config, args.seed, &mut m)?;
    m.config(&config);
    m.seed(config.seed);
    let schema = load_schema(&args.schema, &mut m)?;
    let dataset = read_corpus(&args.corpus, Some(&schema), None, &mut m)?;
    m.input(&args.embeddings)?;
    let store = EmbeddingStore::load(&args.embeddings)?;
    let outcome = train::<f64>(&dataset, &store, &schema, &config)?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    outcome.checkpoint.save(&ckpt)?;
    m.output(&ckpt);
    write_text(&dir.join(TRAIN_LOG_FILE), &outcome.log.to_csv(), &mut m)?;
    if let Some(last) = outcome.log.last() {
        let f1 = last.train_micro_f1.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        writeln!(
            out,
            "trained {} epochs on {} sentences: combined loss {:.6}, train micro-F1 {f1}",
            config.epochs,
            dataset.len(),
            last.combined_loss
        )?;
    }
    m.finish(&dir)?;
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs, raw: &[String], out: &mut dyn Write) -> Result<()> {
    let dir = out_dir(&args.out)?;
    let mut m = ManifestBuilder::new("predict", raw);
    m.input(&args.checkpoint)?;
    let ckpt = Checkpoint64::load(&args.checkpoint)?;
    m.config(&ckpt.config);
    m.seed(ckpt.config.seed);
    let schema = load_schema(&args.schema, &mut m)?;
    let dataset = read_corpus(&args.corpus, None, None, &mut m)?;
    m.input(&args.embeddings)?;
    let store = EmbeddingStore::load(&args.embeddings)?;
    let pred = predict(&ckpt, &dataset, &store, &schema)?;
    let path = dir.join(PREDICTIONS_FILE);
    save_conll(&pred, &path)?;
    m.output(&path);
    writeln!(out, "tagged {} sentences -> {}", pred.len(), path.display())?;
    m.finish(&dir)?;
    Ok(())
}

fn macro_over(arg: MacroOverArg, schema: &LabelSchema) -> MacroOver {
    match arg {
        MacroOverArg::Observed => MacroOver::Observed,
        MacroOverArg::Schema => MacroOver::Schema(schema.fine_types().to_vec()),
    }
}

pub fn cmd_eval(args: &EvalArgs, raw: &[String], out: &mut dyn Write) -> Result<()> {
    let dir = out_dir(&args.out)?;
    let mut m = ManifestBuilder::new("eval", raw);
    let schema = load_schema(&args.schema, &mut m)?;
    let gold = read_corpus(&args.gold, None, None, &mut m)?;
    let pred = read_corpus(&args.pred, None, None, &mut m)?;
    let report = score(&gold, &pred, &macro_over(args.macro_over, &schema))?;
    write!(out, "{}", report.summary_text())?;
    write!(out, "{}", per_tag_table(&report))?;
    write_text(&dir.join(EVAL_JSON_FILE), &serde_json::to_string_pretty(&report)?, &mut m)?;
    write_text(&dir.join(PER_TAG_FILE), &per_tag_csv(&report), &mut m)?;
    m.finish(&dir)?;
    Ok(())
}

/// One ablation row: overrides applied on top of the grid's base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRow {
    pub id: String,
    pub head_kind: Option<HeadKind>,
    pub blend: Option<Blend>,
    pub aux_kind: Option<AuxKind>,
    pub input_layers_k: Option<usize>,
    pub dropout_p: Option<f64>,
    pub lr_multipliers: Option<BTreeMap<String, f64>>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub base: TrainConfig,
    pub rows: Vec<GridRow>,
}

impl GridRow {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        if let Some(v) = self.head_kind {
            c.head.head_kind = v;
        }
        if let Some(v) = self.blend {
            c.head.blend = v;
        }
        if let Some(v) = self.aux_kind {
            c.head.aux_kind = v;
        }
        if let Some(v) = self.input_layers_k {
            c.head.input_layers_k = v;
        }
        if let Some(v) = self.dropout_p {
            c.head.dropout_p = v;
        }
        if let Some(v) = &self.lr_multipliers {
            c.lr_multipliers = v.clone();
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        c
    }
}

/// Loss column: fine loss kind, plus the auxiliary coarse loss if any.
pub fn loss_label(config: &TrainConfig) -> String {
    let fine = if config.head.head_kind.uses_crf() { "CRF" } else { "CE" };
    match config.head.aux_kind {
        AuxKind::None => fine.to_string(),
        AuxKind::LinearCe => format!("{fine}+CG-CE"),
        AuxKind::Crf => format!("{fine}+CG-CRF"),
    }
}

fn separate_head_lr(config: &TrainConfig) -> bool {
    config.lr_multipliers.values().any(|&m| m != 1.0)
}

pub const ABLATION_HEADER: &str = "config_id,head,blend,aux,loss,layers_k,sep_lr_head,dev_micro_f1,dev_macro_f1";

pub fn cmd_ablate(args: &AblateArgs, raw: &[String], out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let dir = out_dir(&args.out)?;
    let mut m = ManifestBuilder::new("ablate", raw);
    m.input(&args.grid)?;
    let grid: Grid = serde_json::from_str(&fs::read_to_string(&args.grid)?).map_err(|e| Error::Config(e.to_string()))?;
    m.config(&grid);
    let schema = load_schema(&args.schema, &mut m)?;
    let train_set = read_corpus(&args.corpus, Some(&schema), None, &mut m)?;
    m.input(&args.embeddings)?;
    let train_store = EmbeddingStore::load(&args.embeddings)?;
    let dev = match (&args.dev_corpus, &args.dev_embeddings) {
        (Some(c), Some(e)) => {
            let ds = read_corpus(c, Some(&schema), None, &mut m)?;
            m.input(e)?;
            Some((ds, EmbeddingStore::load(e)?))
        }
        _ => {
            writeln!(err, "warning: no evaluation corpus given; scoring on the training corpus")?;
            None
        }
    };
    let (dev_set, dev_store) = match &dev {
        Some((d, s)) => (d, s),
        None => (&train_set, &train_store),
    };

    let mut csv = format!("{ABLATION_HEADER}\n");
    let mut failures = 0;
    for row in &grid.rows {
        let mut config = row.apply(&grid.base);
        if let Some(s) = args.seed {
            config.seed = s;
        }
        let describe = format!(
            "{},{},{},{},{},{},{}",
            row.id,
            config.head.head_kind.name(),
            serde_json::to_value(config.head.blend)?.as_str().unwrap_or("?"),
            config.head.aux_kind.name(),
            loss_label(&config),
            config.head.input_layers_k,
            if separate_head_lr(&config) { "yes" } else { "no" },
        );
        let row_dir = dir.join(format!("row_{}", row.id));
        let result = (|| -> Result<EvalReport> {
            fs::create_dir_all(&row_dir)?;
            let outcome = train::<f64>(&train_set, &train_store, &schema, &config)?;
            outcome.checkpoint.save(row_dir.join(CHECKPOINT_FILE))?;
            fs::write(row_dir.join(TRAIN_LOG_FILE), outcome.log.to_csv())?;
            let pred = predict(&outcome.checkpoint, dev_set, dev_store, &schema)?;
            save_conll(&pred, row_dir.join(PREDICTIONS_FILE))?;
            score(dev_set, &pred, &MacroOver::Observed)
        })();
        match result {
            Ok(r) => {
                let _ = writeln!(csv, "{describe},{:.4},{:.4}", r.micro.f1, r.macro_f1);
                m.output(&row_dir);
            }
            Err(e) => {
                failures += 1;
                writeln!(err, "warning: row {} failed: {e}", row.id)?;
                let _ = writeln!(csv, "{describe},FAILED,FAILED");
            }
        }
    }
    write_text(&dir.join(ABLATION_FILE), &csv, &mut m)?;
    out.write_all(csv.as_bytes())?;
    if failures > 0 {
        writeln!(err, "warning: {failures} of {} rows failed", grid.rows.len())?;
    }
    m.finish(&dir)?;
    Ok(())
}

pub const SYNTH_CORPUS_FILE: &str = "corpus.conll";
pub const SYNTH_EMBEDDINGS_FILE: &str = "embeddings.seqemb";

pub fn cmd_synth(args: &SynthArgs, raw: &[String], out: &mut dyn Write) -> Result<()> {
    let dir = out_dir(&args.out)?;
    let mut m = ManifestBuilder::new("synth", raw);
    m.seed(args.seed);
    m.config(&serde_json::json!({
        "sentences": args.sentences,
        "dim": args.dim,
        "layers": args.layers,
        "mode": format!("{:?}", args.mode).to_lowercase(),
        "noise": args.noise,
        "types": args.types,
    }));
    let schema = load_schema(&args.schema, &mut m)?;
    if args.dim == 0 || args.layers == 0 {
        return Err(Error::Config("dim and layers must be at least 1".into()));
    }
    let corpus = synth_corpus(
        &schema,
        &SynthCorpusConfig {
            num_sentences: args.sentences,
            seed: args.seed,
            num_types: args.types,
            ..Default::default()
        },
    )?;
    let mode = match args.mode {
        EmbeddingModeArg::Random => EmbeddingMode::RandomWord,
        EmbeddingModeArg::Prototype => EmbeddingMode::TypePrototype { noise: args.noise },
    };
    let (header, seqs) = synth_embeddings(
        &corpus,
        &SynthEmbeddingConfig {
            dim: args.dim,
            num_layers: args.layers,
            seed: args.seed,
            mode,
        },
    )?;
    let corpus_path = dir.join(SYNTH_CORPUS_FILE);
    let emb_path = dir.join(SYNTH_EMBEDDINGS_FILE);
    save_conll(&corpus, &corpus_path)?;
    write_embeddings(&emb_path, header, &seqs)?;
    m.output(&corpus_path);
    m.output(&emb_path);
    writeln!(out, "wrote {} sentences to {} and {}", corpus.len(), corpus_path.display(), emb_path.display())?;
    m.finish(&dir)?;
    Ok(())
}

pub fn cmd_classic_train(args: &ClassicTrainArgs, raw: &[String], out: &mut dyn Write) -> Result<()> {
    let dir = out_dir(&args.out)?;
    let mut m = ManifestBuilder::new("classic-train", raw);
    let config = match &args.config {
        Some(p) => {
            m.input(p)?;
            serde_json::from_str::<ClassicConfig>(&fs::read_to_string(p)?).map_err(|e| Error::Config(e.to_string()))?
        }
        None => ClassicConfig::default(),
    };
    m.config(&config);
    let schema = load_schema(&args.schema, &mut m)?;
    let dataset = read_corpus(&args.corpus, Some(&schema), args.pos_column, &mut m)?;
    let outcome = train_classic::<f64>(&dataset, &schema, &config)?;
    let model_path = dir.join(CLASSIC_MODEL_FILE);
    outcome.model.save(&model_path)?;
    m.output(&model_path);
    let mut trace = String::from("epoch,objective\n");
    for (e, v) in outcome.objective.iter().enumerate() {
        let _ = writeln!(trace, "{e},{v}");
    }
    write_text(&dir.join("objective.csv"), &trace, &mut m)?;
    writeln!(
        out,
        "classic CRF: {} features, objective {:.6} -> {:.6}",
        outcome.model.feature_index.len(),
        outcome.objective[0],
        outcome.objective.last().copied().unwrap_or(f64::NAN)
    )?;
    m.finish(&dir)?;
    Ok(())
}

pub fn cmd_classic_predict(args: &ClassicPredictArgs, raw: &[String], out: &mut dyn Write) -> Result<()> {
    let dir = out_dir(&args.out)?;
    let mut m = ManifestBuilder::new("classic-predict", raw);
    m.input(&args.model)?;
    let model = ClassicModel::<f64>::load(&args.model)?;
    let dataset = read_corpus(&args.corpus, None, args.pos_column, &mut m)?;
    let pred = predict_classic(&model, &dataset)?;
    let path = dir.join(PREDICTIONS_FILE);
    save_conll(&pred, &path)?;
    m.output(&path);
    writeln!(out, "tagged {} sentences -> {}", pred.len(), path.display())?;
    m.finish(&dir)?;
    Ok(())
}
