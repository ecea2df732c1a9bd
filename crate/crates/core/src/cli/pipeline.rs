use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::bench::bench_mask;
use super::config::ExperimentConfig;
use super::report::{DatasetSummary, LayoutSummary, Report, SweepEntry, TrainSummary};
use crate::dataset::{
    build_examples, generate_synthetic, read_embeddings, read_interactions, temporal_split, write_embeddings,
    write_interactions, ExampleSet, InteractionLog, ItemIdx, SplitDataset,
};
use crate::decoding::{beam_generate, read_predictions, teacher_forced_tokens, write_predictions, PredictionRow};
use crate::error::{Error, Result};
use crate::metrics::{bias_report, metric_table, popularity_groups, write_targets, BiasInputs};
use crate::model::{Checkpoint, ModelConfig, ModelParams};
use crate::tokenizer::{tokenize, PrefixTrie, SemanticTable};
use crate::training::{encode_examples, fit, EncodedExample, TrainData};
use crate::util::{read_to_string, write_atomic};

/// File names inside the output directory.
pub struct Artifacts {
    root: PathBuf,
    interactions: Option<PathBuf>,
    embeddings: Option<PathBuf>,
}

impl Artifacts {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self { root: cfg.output_path(), interactions: cfg.data.interactions.clone(), embeddings: cfg.data.embeddings.clone() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn interactions(&self) -> PathBuf {
        self.interactions.clone().unwrap_or_else(|| self.root.join("interactions.tsv"))
    }

    pub fn embeddings(&self) -> PathBuf {
        self.embeddings.clone().unwrap_or_else(|| self.root.join("embeddings.txt"))
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn report(&self, command: &str) -> PathBuf {
        self.root.join(format!("report_{}.json", command.replace('-', "_")))
    }
}

pub const SEMANTIC_IDS: &str = "semantic_ids.txt";
pub const CODEBOOKS: &str = "codebooks";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const TRAIN_LOG: &str = "train_log.json";
pub const PREDICTIONS: &str = "predictions.tsv";
pub const TEST_TARGETS: &str = "test_targets.tsv";

/// Interactions, split, semantic IDs and encoded examples.
pub struct Prepared {
    pub log: InteractionLog,
    pub split: SplitDataset,
    pub table: SemanticTable,
    pub trie: PrefixTrie,
    pub examples: ExampleSet,
    pub train: Vec<EncodedExample>,
    pub valid: Vec<EncodedExample>,
    pub test: Vec<EncodedExample>,
}

impl Prepared {
    pub fn load(cfg: &ExperimentConfig, model: &ModelConfig, art: &Artifacts) -> Result<Self> {
        let log = read_interactions(&art.interactions())?;
        let ids_path = art.file(SEMANTIC_IDS);
        if !ids_path.exists() {
            return Err(Error::Config(format!("{} is missing; run `tokenize` first", ids_path.display())));
        }
        let table = SemanticTable::parse(&read_to_string(&ids_path)?, &log.items, model.codes_per_level)?;
        if table.depth() != model.levels {
            return Err(Error::Config(format!("semantic IDs have {} levels, model expects {}", table.depth(), model.levels)));
        }
        let split = temporal_split(&log, cfg.data.split)?;
        let examples = build_examples(&split, model.max_history);
        let trie = PrefixTrie::build(&table);
        let train = encode_examples(&examples.train, &table);
        let valid = encode_examples(&examples.valid, &table);
        let test = encode_examples(&examples.test, &table);
        Ok(Self { log, split, table, trie, examples, train, valid, test })
    }

    fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            users: self.log.user_count(),
            items: self.log.item_count(),
            interactions: self.log.interactions.len(),
            train_examples: self.train.len(),
            valid_examples: self.valid.len(),
            test_examples: self.test.len(),
        }
    }
}

fn load_checkpoint(art: &Artifacts, expected: &ModelConfig) -> Result<Checkpoint> {
    let path = art.file(CHECKPOINT);
    if !path.exists() {
        return Err(Error::Config(format!("{} is missing; run `train` first", path.display())));
    }
    let ck = Checkpoint::load(&path)?;
    if ck.config.levels != expected.levels || ck.config.codes_per_level != expected.codes_per_level {
        return Err(Error::Checkpoint("checkpoint vocabulary does not match the tokenizer settings".into()));
    }
    Ok(ck)
}

pub fn synth(cfg: &ExperimentConfig) -> Result<Report> {
    let art = Artifacts::new(cfg);
    if cfg.data.interactions.is_some() {
        return Err(Error::Config("synth would overwrite data.interactions; unset it".into()));
    }
    let corpus = generate_synthetic(&cfg.data.synth, cfg.seed)?;
    write_interactions(&art.interactions(), &corpus.log)?;
    write_embeddings(&art.embeddings(), &corpus.embeddings)?;
    let mut report = Report::new("synth", cfg);
    report.dataset = Some(DatasetSummary {
        users: corpus.log.user_count(),
        items: corpus.log.item_count(),
        interactions: corpus.log.interactions.len(),
        train_examples: 0,
        valid_examples: 0,
        test_examples: 0,
    });
    Ok(report)
}

pub fn tokenize_cmd(cfg: &ExperimentConfig) -> Result<Report> {
    let art = Artifacts::new(cfg);
    let log = read_interactions(&art.interactions())?;
    let emb = read_embeddings(&art.embeddings())?.aligned_to(&log.items)?;
    let (codebooks, table) = tokenize(emb.vectors.view(), &cfg.effective_tokenizer())?;
    codebooks.save(&art.file(CODEBOOKS))?;
    write_atomic(&art.file(SEMANTIC_IDS), table.to_text(&log.items).as_bytes())?;
    Ok(Report::new("tokenize", cfg))
}

pub fn train(cfg: &ExperimentConfig) -> Result<Report> {
    let art = Artifacts::new(cfg);
    let model = cfg.effective_model();
    let data = Prepared::load(cfg, &model, &art)?;
    let tc = cfg.effective_train();
    let run = |alpha: f64| {
        let tc = crate::training::TrainConfig { alpha, ..tc.clone() };
        let td = TrainData { train: &data.train, valid: &data.valid, trie: &data.trie };
        fit(ModelParams::init(&model)?, &model, &td, &tc)
    };
    let outcome = run(tc.alpha)?;
    Checkpoint { config: model.clone(), params: outcome.params }.save(&art.file(CHECKPOINT))?;
    write_atomic(&art.file(TRAIN_LOG), serde_json::to_string_pretty(&outcome.log)?.as_bytes())?;
    let mut report = Report::new("train", cfg);
    for &alpha in &cfg.analysis.alpha_sweep {
        report.alpha_sweep.push(SweepEntry { alpha, summary: TrainSummary::of(&run(alpha)?.log) });
    }
    report.dataset = Some(data.summary());
    report.layout = Some(LayoutSummary::of(&model)?);
    report.train = Some(TrainSummary::of(&outcome.log));
    Ok(report)
}

pub fn evaluate(cfg: &ExperimentConfig) -> Result<Report> {
    let art = Artifacts::new(cfg);
    let model = cfg.effective_model();
    let ck = load_checkpoint(&art, &model)?;
    let data = Prepared::load(cfg, &ck.config, &art)?;
    let k_max = cfg.decode.ks.iter().copied().max().unwrap_or(1);
    let mut lists = Vec::with_capacity(data.test.len());
    let mut rows = Vec::new();
    for ex in &data.test {
        let ranked = beam_generate(&ck.params, &ck.config, &data.trie, &ex.history, cfg.decode.beam_size, k_max)?;
        for (rank, &(item, score)) in ranked.items.iter().enumerate() {
            rows.push(PredictionRow {
                user: data.log.users[ex.user].clone(),
                rank: rank + 1,
                item: data.log.items[item].clone(),
                score,
            });
        }
        lists.push(ranked.item_ids());
    }
    write_predictions(&art.file(PREDICTIONS), &rows)?;
    let targets: Vec<(String, String)> = data
        .test
        .iter()
        .map(|ex| (data.log.users[ex.user].clone(), data.log.items[ex.target_item].clone()))
        .collect();
    write_targets(&art.file(TEST_TARGETS), &targets)?;
    let target_items: Vec<ItemIdx> = data.test.iter().map(|ex| ex.target_item).collect();
    let mut report = Report::new("evaluate", cfg);
    report.dataset = Some(data.summary());
    report.layout = Some(LayoutSummary::of(&ck.config)?);
    report.metrics = Some(metric_table(&lists, &target_items, &cfg.decode.ks));
    Ok(report)
}

pub fn analyze_bias(cfg: &ExperimentConfig) -> Result<Report> {
    let art = Artifacts::new(cfg);
    let model = cfg.effective_model();
    let ck = load_checkpoint(&art, &model)?;
    let data = Prepared::load(cfg, &ck.config, &art)?;
    let pred_path = art.file(PREDICTIONS);
    if !pred_path.exists() {
        return Err(Error::Config(format!("{} is missing; run `evaluate` first", pred_path.display())));
    }
    let item_index: HashMap<&str, ItemIdx> = data.log.items.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut by_user: HashMap<String, Vec<(usize, ItemIdx)>> = HashMap::new();
    for row in read_predictions(&pred_path)? {
        let item = *item_index.get(row.item.as_str()).ok_or_else(|| Error::UnknownItem(row.item.clone()))?;
        by_user.entry(row.user).or_default().push((row.rank, item));
    }
    let mut predicted = Vec::with_capacity(data.test.len());
    let mut targets = Vec::with_capacity(data.test.len());
    let mut lists = Vec::with_capacity(data.test.len());
    for ex in &data.test {
        let stages = teacher_forced_tokens(&ck.params, &ck.config, &ex.history, &ex.target)?;
        predicted.push(stages.iter().map(|s| s.predicted).collect::<Vec<_>>());
        targets.push(ex.target.clone());
        let mut ranked = by_user.remove(&data.log.users[ex.user]).unwrap_or_default();
        ranked.sort_unstable();
        lists.push(ranked.into_iter().take(cfg.analysis.item_k).map(|(_, i)| i).collect::<Vec<_>>());
    }
    let train_items: Vec<ItemIdx> = data.split.users.iter().flat_map(|u| u.train.iter().map(|it| it.item)).collect();
    let token_groups: Vec<_> = data
        .table
        .code_frequencies(&train_items)
        .iter()
        .map(|f| popularity_groups(f, cfg.analysis.groups))
        .collect();
    let item_groups = popularity_groups(&data.split.train_item_frequencies(), cfg.analysis.groups);
    let target_items: Vec<ItemIdx> = data.test.iter().map(|ex| ex.target_item).collect();
    let bias = bias_report(&BiasInputs {
        predicted_codes: &predicted,
        target_codes: &targets,
        token_groups: &token_groups,
        item_groups: &item_groups,
        ranked_lists: &lists,
        target_items: &target_items,
    });
    let mut report = Report::new("analyze-bias", cfg);
    report.dataset = Some(data.summary());
    report.bias = Some(bias);
    Ok(report)
}

pub fn bench(cfg: &ExperimentConfig) -> Result<Report> {
    let mut report = Report::new("bench-mask", cfg);
    report.bench = Some(bench_mask(&cfg.effective_model(), &cfg.bench.history_items, cfg.bench.repetitions)?);
    Ok(report)
}
