use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use super::config::{load_section, set};
use super::run::{file_hash, runs_root, Run, RunState};
use super::{
    serde_value, AblateArgs, Cli, Command, DataCommand, EditArgs, EvalArgs, EvaluateArgs, GenerateArgs, GraphBuildArgs,
    GraphCommand, GraphExportArgs, GraphFileArg, ObjectiveArgs, ReportArgs, StoreArg, TrainTaskArgs,
    UpdaterArgs,
};
use crate::data::{generate_synthetic_store, BeliefStore, LabelPolicy, Split, SyntheticWorldConfig, Task, TokenSeq};
use crate::editor::{baseline_grid, BaselineSpec, EditRequest, EditorNetwork};
use crate::error::{Error, Result};
use crate::eval::{belief_report, evaluate_sequential_updates, EvalConfig, EvalResult, DEFAULT_RESAMPLES};
use crate::graph::{build_belief_graph, graph_stats, import_graph_json, write_graph, GraphBuildOptions, GraphFormat, GraphStats};
use crate::model::{train_task_model, TaskModel, TrainConfig, Vocab};
use crate::optim::OptimizerKind;
use crate::report::{update_row, Report};
use crate::slag::{train_editor, tune_baseline, EditorTrainConfig, Term};
use crate::update::{BaselineUpdater, EditorUpdater, NoOpUpdater, Updater};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdaterKind {
    Noop,
    #[default]
    Editor,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdaterConfig {
    pub kind: UpdaterKind,
    /// Editor inner steps.
    pub k: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub max_steps: usize,
    /// Replace the fixed baseline settings with the best dev grid cell.
    pub tune: bool,
}

impl Default for UpdaterConfig {
    fn default() -> Self {
        Self { kind: UpdaterKind::Editor, k: 1, optimizer: OptimizerKind::AdamW, lr: 1e-4, max_steps: 100, tune: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainTaskConfig {
    pub seed: u64,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainEditorConfig {
    pub seed: u64,
    pub train: EditorTrainConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditConfig {
    pub updater: UpdaterConfig,
    pub input: String,
    pub desired: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub updater: UpdaterConfig,
    pub eval: EvalConfig,
    /// Evaluation seeds, starting at `eval.seed`.
    pub seeds: usize,
    pub split: Split,
    pub resamples: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { updater: UpdaterConfig::default(), eval: EvalConfig::default(), seeds: 1, split: Split::Test, resamples: DEFAULT_RESAMPLES }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblateAxis {
    /// `r_train` and `r_test` both set to the value.
    R,
    /// `k_train` and the evaluation `K` both set to the value.
    K,
    Label,
    /// Extra objective terms on top of the main and random-KL terms.
    Terms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub axis: Option<AblateAxis>,
    pub values: Vec<String>,
    pub seed: u64,
    pub train: EditorTrainConfig,
    pub eval: EvalConfig,
    pub seeds: usize,
    pub split: Split,
    pub resamples: usize,
}

impl Default for AblateConfig {
    fn default() -> Self {
        let e = EvaluateConfig::default();
        Self {
            axis: None,
            values: Vec::new(),
            seed: 0,
            train: EditorTrainConfig::default(),
            eval: e.eval,
            seeds: e.seeds,
            split: e.split,
            resamples: e.resamples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub updater: UpdaterConfig,
    pub split: Split,
    pub max_records: Option<usize>,
    pub threads: usize,
    /// Dev evaluation used when tuning a baseline.
    pub tune_eval: EvalConfig,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { updater: UpdaterConfig::default(), split: Split::Test, max_records: None, threads: 1, tune_eval: EvalConfig::default() }
    }
}

struct Ctx {
    root: PathBuf,
    config: Option<PathBuf>,
}

impl Ctx {
    fn section<T: serde::de::DeserializeOwned + Default>(&self, name: &str) -> Result<T> {
        load_section(self.config.as_deref(), name)
    }

    /// Runs `body` in the run directory for this identity unless a completed
    /// one exists.
    fn execute<C: Serialize>(
        &self,
        command: &str,
        cfg: &C,
        seed: u64,
        inputs: BTreeMap<String, String>,
        body: impl FnOnce(&mut Run) -> Result<()>,
    ) -> Result<PathBuf> {
        match Run::open(&self.root, command, cfg, seed, inputs)? {
            RunState::Done(run) => {
                info!("reusing completed run {}", run.dir.display());
                Ok(run.dir)
            }
            RunState::Fresh(mut run) => {
                info!("running {command} in {}", run.dir.display());
                body(&mut run)?;
                Ok(run.complete()?.dir)
            }
        }
    }
}

pub(super) fn dispatch(cli: Cli) -> Result<PathBuf> {
    let ctx = Ctx { root: runs_root(cli.runs.as_deref()), config: cli.config };
    match cli.command {
        Command::Data(DataCommand::Generate(a)) => data_generate(&ctx, &a),
        Command::Data(DataCommand::Validate(a)) => data_inspect(&ctx, &a, "data-validate"),
        Command::Data(DataCommand::Stats(a)) => data_inspect(&ctx, &a, "data-stats"),
        Command::TrainTask(a) => train_task(&ctx, &a),
        Command::TrainEditor(a) => {
            let mut cfg: TrainEditorConfig = ctx.section("train-editor")?;
            apply_objective(&mut cfg.train, &a.objective)?;
            set(&mut cfg.seed, a.seed);
            train_editor_run(&ctx, &cfg, &a.store, &a.model)
        }
        Command::Edit(a) => edit(&ctx, &a),
        Command::Evaluate(a) => evaluate(&ctx, &a),
        Command::Ablate(a) => ablate(&ctx, &a),
        Command::Graph(GraphCommand::Build(a)) => graph_build(&ctx, &a),
        Command::Graph(GraphCommand::Stats(a)) => graph_stats_cmd(&ctx, &a),
        Command::Graph(GraphCommand::Export(a)) => graph_export(&ctx, &a),
        Command::Report(a) => report(&ctx, &a),
    }
}

const SPLITS: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

fn store_file(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{split}.jsonl"))
}

struct Stores {
    train: BeliefStore,
    dev: BeliefStore,
    test: BeliefStore,
}

impl Stores {
    fn load(dir: &Path) -> Result<Self> {
        let load = |s| BeliefStore::load_jsonl(&store_file(dir, s), s);
        Ok(Self { train: load(Split::Train)?, dev: load(Split::Dev)?, test: load(Split::Test)? })
    }

    fn get(&self, split: Split) -> &BeliefStore {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    fn vocab(&self) -> Vocab {
        Vocab::from_stores(&[&self.train, &self.dev, &self.test])
    }
}

fn store_inputs(dir: &Path, inputs: &mut BTreeMap<String, String>) -> Result<()> {
    for s in SPLITS {
        inputs.insert(format!("store.{s}"), file_hash(&store_file(dir, s))?);
    }
    Ok(())
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn jsonl_bytes<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut s = String::new();
    for item in items {
        s.push_str(&serde_json::to_string(item)?);
        s.push('\n');
    }
    Ok(s.into_bytes())
}

fn write_report(run: &mut Run, report: &Report) -> Result<()> {
    run.write_artifact("report_json", "report.json", report.to_json()?.as_bytes())?;
    run.write_artifact("report_md", "report.md", report.to_markdown().as_bytes())?;
    Ok(())
}

fn data_generate(ctx: &Ctx, a: &GenerateArgs) -> Result<PathBuf> {
    let mut cfg: SyntheticWorldConfig = ctx.section("data")?;
    set(&mut cfg.task, a.task);
    set(&mut cfg.num_entities, a.entities);
    set(&mut cfg.num_paraphrases_per_input, a.paraphrases);
    set(&mut cfg.fraction_with_entailment, a.entailment_fraction);
    set(&mut cfg.exception_rate, a.exception_rate);
    set(&mut cfg.seed, a.seed);
    cfg.validate()?;
    ctx.execute("data-generate", &cfg, cfg.seed, BTreeMap::new(), |run| {
        let stores = generate_synthetic_store(&cfg)?;
        for (split, store) in [(Split::Train, &stores.train), (Split::Dev, &stores.dev), (Split::Test, &stores.test)] {
            let mut buf = Vec::new();
            store.write_jsonl(&mut buf)?;
            run.write_artifact(&format!("store.{split}"), &format!("{split}.jsonl"), &buf)?;
        }
        run.write_artifact("world", "world.json", &json_bytes(&cfg)?)?;
        Ok(())
    })
}

#[derive(Debug, Serialize)]
struct SplitStats {
    records: usize,
    task: Option<Task>,
    distinct_labels: usize,
    /// Records with at least two inputs in their paraphrase group.
    with_paraphrase_group: usize,
    paraphrases: usize,
    entailed: usize,
    local_neutral: usize,
}

fn split_stats(s: &BeliefStore) -> SplitStats {
    let rs = s.records();
    SplitStats {
        records: rs.len(),
        task: s.task(),
        distinct_labels: s.label_vocabulary().len(),
        with_paraphrase_group: rs.iter().filter(|r| r.has_paraphrase_group()).count(),
        paraphrases: rs.iter().map(|r| r.paraphrases.len()).sum(),
        entailed: rs.iter().map(|r| r.entailed.len()).sum(),
        local_neutral: rs.iter().map(|r| r.local_neutral.len()).sum(),
    }
}

fn data_inspect(ctx: &Ctx, a: &StoreArg, command: &str) -> Result<PathBuf> {
    let mut inputs = BTreeMap::new();
    store_inputs(&a.store, &mut inputs)?;
    let stores = Stores::load(&a.store)?;
    let mut tasks: Vec<Task> = SPLITS.iter().filter_map(|&s| stores.get(s).task()).collect();
    tasks.dedup();
    if tasks.len() > 1 {
        return Err(Error::Validation("splits disagree on the task".into()));
    }
    let ids: usize = SPLITS.iter().map(|&s| stores.get(s).len()).sum();
    let unique: BTreeSet<&str> = SPLITS.iter().flat_map(|&s| stores.get(s).records().iter().map(|r| r.id.as_str())).collect();
    if unique.len() != ids {
        return Err(Error::Validation("record ids repeat across splits".into()));
    }
    ctx.execute(command, &serde_json::Value::Null, 0, inputs, |run| {
        let stats: BTreeMap<String, SplitStats> = SPLITS.iter().map(|&s| (s.to_string(), split_stats(stores.get(s)))).collect();
        run.write_artifact("stats", "stats.json", &json_bytes(&stats)?)?;
        Ok(())
    })
}

fn train_task(ctx: &Ctx, a: &TrainTaskArgs) -> Result<PathBuf> {
    let mut cfg: TrainTaskConfig = ctx.section("train-task")?;
    if a.epochs.is_some() {
        cfg.train.epochs = a.epochs;
    }
    set(&mut cfg.train.lr, a.lr);
    set(&mut cfg.train.batch_size, a.batch_size);
    set(&mut cfg.train.model.d_model, a.d_model);
    set(&mut cfg.seed, a.seed);
    cfg.train.validate()?;
    let mut inputs = BTreeMap::new();
    store_inputs(&a.store, &mut inputs)?;
    ctx.execute("train-task", &cfg, cfg.seed, inputs, |run| {
        let stores = Stores::load(&a.store)?;
        let out = train_task_model(&stores.train, &stores.dev, &stores.vocab(), &cfg.train, cfg.seed)?;
        out.model.save(&run.path("model.ckpt"))?;
        run.record("model", "model.ckpt");
        run.write_artifact("train_log", "train_log.jsonl", &jsonl_bytes(&out.history)?)?;
        let beliefs = belief_report(&out.model, &stores.test)?;
        let summary = serde_json::json!({
            "best_epoch": out.best_epoch,
            "best_dev_accuracy": out.best_dev_accuracy,
            "test_accuracy": out.model.accuracy(&stores.test)?,
            "test_paraphrase_consistency": beliefs.paraphrase_consistency,
            "test_entailment_acc": beliefs.entailment_acc,
            "test_contrapositive_acc": beliefs.contrapositive_acc,
        });
        run.write_artifact("summary", "summary.json", &json_bytes(&summary)?)?;
        run.write_artifact("beliefs", "beliefs.json", &json_bytes(&beliefs)?)?;
        Ok(())
    })
}

fn parse_terms(text: &str) -> Result<BTreeSet<Term>> {
    let mut terms = BTreeSet::from([Term::Main, Term::KlRandom]);
    for t in text.split('+').map(str::trim).filter(|t| !t.is_empty()) {
        terms.insert(serde_value::<Term>(t).map_err(|e| Error::config("terms", e))?);
    }
    Ok(terms)
}

fn apply_objective(cfg: &mut EditorTrainConfig, a: &ObjectiveArgs) -> Result<()> {
    set(&mut cfg.objective.r_train, a.r_train);
    set(&mut cfg.objective.k_train, a.k_train);
    if a.k_dev.is_some() {
        cfg.k_test = a.k_dev;
    }
    set(&mut cfg.epochs, a.epochs);
    set(&mut cfg.lr, a.lr);
    set(&mut cfg.objective.label_policy, a.label_policy);
    if let Some(t) = &a.terms {
        cfg.objective.enabled_terms = parse_terms(t)?;
    }
    set(&mut cfg.objective.oversample_entailment, a.oversample_entailment);
    if a.dev_records.is_some() {
        cfg.dev_eval.max_records = a.dev_records;
    }
    Ok(())
}

fn train_editor_run(ctx: &Ctx, cfg: &TrainEditorConfig, store: &Path, model_path: &Path) -> Result<PathBuf> {
    cfg.train.validate()?;
    let mut inputs = BTreeMap::from([("model".to_string(), file_hash(model_path)?)]);
    store_inputs(store, &mut inputs)?;
    ctx.execute("train-editor", cfg, cfg.seed, inputs, |run| {
        let stores = Stores::load(store)?;
        let model = TaskModel::load(model_path)?;
        let out = train_editor(&model, &stores.train, &stores.dev, &cfg.train, cfg.seed)?;
        out.editor.save(&run.path("editor.ckpt"))?;
        run.record("editor", "editor.ckpt");
        run.write_artifact("train_log", "train_log.jsonl", &jsonl_bytes(&out.history)?)?;
        let summary = serde_json::json!({ "best_epoch": out.best_epoch, "best_score": out.best_score });
        run.write_artifact("summary", "summary.json", &json_bytes(&summary)?)?;
        Ok(())
    })
}

fn apply_updater(cfg: &mut UpdaterConfig, a: &UpdaterArgs) {
    set(&mut cfg.kind, a.updater);
    set(&mut cfg.k, a.k_test);
    set(&mut cfg.optimizer, a.optimizer);
    set(&mut cfg.lr, a.lr);
    set(&mut cfg.max_steps, a.max_steps);
    set(&mut cfg.tune, a.tune);
}

fn updater_inputs(cfg: &UpdaterConfig, editor: Option<&Path>, inputs: &mut BTreeMap<String, String>) -> Result<()> {
    if cfg.kind == UpdaterKind::Editor {
        let path = editor.ok_or_else(|| Error::config("editor", "the editor updater needs --editor"))?;
        inputs.insert("editor".into(), file_hash(path)?);
    }
    if cfg.k == 0 {
        return Err(Error::config("k", "must be at least 1"));
    }
    Ok(())
}

type DynUpdater = Box<dyn Updater<TaskModel> + Sync>;

fn build_updater(
    cfg: &UpdaterConfig,
    editor: Option<&Path>,
    model: &TaskModel,
    dev: &BeliefStore,
    tune_eval: &EvalConfig,
    run: &mut Run,
) -> Result<DynUpdater> {
    Ok(match cfg.kind {
        UpdaterKind::Noop => Box::new(NoOpUpdater),
        UpdaterKind::Editor => {
            let path = editor.ok_or_else(|| Error::config("editor", "the editor updater needs --editor"))?;
            Box::new(EditorUpdater { editor: EditorNetwork::load(path)?, k: cfg.k })
        }
        UpdaterKind::Baseline if cfg.tune => {
            let tuning = tune_baseline(model, dev, &baseline_grid(), tune_eval)?;
            run.write_artifact("tuning", "tuning.json", &json_bytes(&tuning)?)?;
            Box::new(BaselineUpdater { spec: tuning.best })
        }
        UpdaterKind::Baseline => Box::new(BaselineUpdater { spec: BaselineSpec::new(cfg.optimizer, cfg.lr, cfg.max_steps) }),
    })
}

fn edit(ctx: &Ctx, a: &EditArgs) -> Result<PathBuf> {
    let mut cfg: EditConfig = ctx.section("edit")?;
    apply_updater(&mut cfg.updater, &a.updater);
    cfg.input = a.input.clone();
    cfg.desired = a.desired.clone();
    if cfg.updater.tune {
        return Err(Error::config("tune", "tuning needs a dev store; use evaluate"));
    }
    let mut inputs = BTreeMap::from([("model".to_string(), file_hash(&a.model)?)]);
    updater_inputs(&cfg.updater, a.updater.editor.as_deref(), &mut inputs)?;
    ctx.execute("edit", &cfg, 0, inputs, |run| {
        let model = TaskModel::load(&a.model)?;
        let input = TokenSeq::parse(&cfg.input);
        let desired = TokenSeq::parse(&cfg.desired);
        let before = model.predict_label(&input)?;
        let empty = BeliefStore::new(Vec::new(), Split::Dev)?;
        let updater = build_updater(&cfg.updater, a.updater.editor.as_deref(), &model, &empty, &EvalConfig::default(), run)?;
        let edited = updater.update(&model, &EditRequest::new(input.clone(), before.clone(), desired.clone())?)?;
        let after = edited.predict_label(&input)?;
        edited.save(&run.path("edited.ckpt"))?;
        run.record("model", "edited.ckpt");
        let result = serde_json::json!({
            "updater": updater.name(),
            "input": input,
            "before": before,
            "desired": desired,
            "after": after,
            "success": after == desired,
        });
        run.write_artifact("edit", "edit.json", &json_bytes(&result)?)?;
        Ok(())
    })
}

fn apply_eval(cfg: &mut EvaluateConfig, a: &EvalArgs) {
    set(&mut cfg.eval.r_test, a.r_test);
    set(&mut cfg.eval.targets, a.targets);
    set(&mut cfg.seeds, a.seeds);
    set(&mut cfg.eval.sample_size, a.sample_size);
    set(&mut cfg.split, a.split);
    if a.max_records.is_some() {
        cfg.eval.max_records = a.max_records;
    }
    set(&mut cfg.resamples, a.resamples);
}

fn validate_evaluate(cfg: &EvaluateConfig) -> Result<()> {
    cfg.eval.validate()?;
    if cfg.seeds == 0 {
        return Err(Error::config("seeds", "must be at least 1"));
    }
    if cfg.resamples == 0 {
        return Err(Error::config("resamples", "must be at least 1"));
    }
    Ok(())
}

fn evaluate(ctx: &Ctx, a: &EvaluateArgs) -> Result<PathBuf> {
    let mut cfg: EvaluateConfig = ctx.section("evaluate")?;
    apply_updater(&mut cfg.updater, &a.updater);
    apply_eval(&mut cfg, &a.eval);
    evaluate_run(ctx, &cfg, &a.store, &a.model, a.updater.editor.as_deref())
}

fn evaluate_run(ctx: &Ctx, cfg: &EvaluateConfig, store: &Path, model_path: &Path, editor: Option<&Path>) -> Result<PathBuf> {
    validate_evaluate(cfg)?;
    let mut inputs = BTreeMap::from([("model".to_string(), file_hash(model_path)?)]);
    store_inputs(store, &mut inputs)?;
    updater_inputs(&cfg.updater, editor, &mut inputs)?;
    ctx.execute("evaluate", cfg, cfg.eval.seed, inputs, |run| {
        let stores = Stores::load(store)?;
        let model = TaskModel::load(model_path)?;
        let tune_eval = EvalConfig { r_test: 1, ..cfg.eval.clone() };
        let updater = build_updater(&cfg.updater, editor, &model, &stores.dev, &tune_eval, run)?;
        let results: Vec<EvalResult> = (0..cfg.seeds as u64)
            .map(|s| {
                let eval = EvalConfig { seed: cfg.eval.seed + s, ..cfg.eval.clone() };
                evaluate_sequential_updates(&model, updater.as_ref(), stores.get(cfg.split), &eval)
            })
            .collect::<Result<_>>()?;
        let runs: Vec<_> = results.iter().map(|r| r.outcomes.clone()).collect();
        let row = update_row(&updater.name(), &runs, cfg.resamples, cfg.eval.seed)?;
        let title = format!("{} split, r_test = {}", cfg.split, cfg.eval.r_test);
        run.write_artifact("results", "results.json", &json_bytes(&results)?)?;
        write_report(run, &Report::new(title, vec![row]))
    })
}

fn ablate(ctx: &Ctx, a: &AblateArgs) -> Result<PathBuf> {
    let mut cfg: AblateConfig = ctx.section("ablate")?;
    set(&mut cfg.axis, a.axis.map(Some));
    set(&mut cfg.values, a.values.clone());
    set(&mut cfg.seed, a.seed);
    apply_objective(&mut cfg.train, &a.objective)?;
    let mut e = EvaluateConfig { updater: UpdaterConfig::default(), eval: cfg.eval.clone(), seeds: cfg.seeds, split: cfg.split, resamples: cfg.resamples };
    apply_eval(&mut e, &a.eval);
    (cfg.eval, cfg.seeds, cfg.split, cfg.resamples) = (e.eval, e.seeds, e.split, e.resamples);
    let axis = cfg.axis.ok_or_else(|| Error::config("axis", "ablate needs --axis"))?;
    if cfg.values.is_empty() {
        return Err(Error::config("values", "ablate needs at least one value"));
    }

    // Resolve every child first so a bad value fails before any training.
    let mut children = Vec::with_capacity(cfg.values.len());
    for v in &cfg.values {
        let mut train = TrainEditorConfig { seed: cfg.seed, train: cfg.train.clone() };
        let mut eval = EvaluateConfig {
            updater: UpdaterConfig { kind: UpdaterKind::Editor, k: cfg.train.k_test(), ..UpdaterConfig::default() },
            eval: cfg.eval.clone(),
            seeds: cfg.seeds,
            split: cfg.split,
            resamples: cfg.resamples,
        };
        let int = || v.parse::<usize>().map_err(|_| Error::config("values", format!("`{v}` is not a count")));
        match axis {
            AblateAxis::R => {
                train.train.objective.r_train = int()?;
                train.train.batch_size = train.train.batch_size.max(int()?);
                eval.eval.r_test = int()?;
            }
            AblateAxis::K => {
                train.train.objective.k_train = int()?;
                train.train.k_test = Some(int()?);
                eval.updater.k = int()?;
            }
            AblateAxis::Label => {
                train.train.objective.label_policy =
                    serde_value::<LabelPolicy>(v).map_err(|e| Error::config("values", e))?;
            }
            AblateAxis::Terms => train.train.objective.enabled_terms = parse_terms(v)?,
        }
        train.train.validate()?;
        validate_evaluate(&eval)?;
        children.push((v.clone(), train, eval));
    }

    let mut inputs = BTreeMap::from([("model".to_string(), file_hash(&a.model)?)]);
    store_inputs(&a.store, &mut inputs)?;
    ctx.execute("ablate", &cfg, cfg.seed, inputs, |run| {
        let mut reports = Vec::new();
        let mut dirs = BTreeMap::new();
        for (v, train, eval) in &children {
            let train_dir = train_editor_run(ctx, train, &a.store, &a.model)?;
            let editor = train_dir.join("editor.ckpt");
            let eval_dir = evaluate_run(ctx, eval, &a.store, &a.model, Some(&editor))?;
            let mut r = Report::from_json(&std::fs::read_to_string(eval_dir.join("report.json"))?)?;
            let axis_name = serde_json::to_value(axis)?;
            for row in &mut r.rows {
                row.name = format!("{}={v}", axis_name.as_str().unwrap_or("value"));
            }
            dirs.insert(v.clone(), serde_json::json!({ "train": train_dir, "evaluate": eval_dir }));
            reports.push(r);
        }
        run.write_artifact("children", "children.json", &json_bytes(&dirs)?)?;
        let title = format!("Ablation over {} ({} split)", serde_json::to_value(axis)?.as_str().unwrap_or(""), cfg.split);
        write_report(run, &Report::merge(title, &reports))
    })
}

fn stats_markdown(s: &GraphStats) -> String {
    let transitivity = s.pct_update_transitivity.map_or_else(|| "n/a".to_string(), |t| format!("{t:.1}"));
    format!(
        "| Nodes | Edges | % Edgeless | In-edges p95 | Out-edges p95 | # Corrupted p95 | % Update-Transitivity | Flip failures |\n\
         |---|---|---|---|---|---|---|---|\n\
         | {} | {} | {:.1} | {} | {} | {} | {} | {} |\n",
        s.num_nodes, s.num_edges, s.pct_edgeless, s.in_edges_p95, s.out_edges_p95, s.corrupted_p95, transitivity, s.num_flip_failures
    )
}

fn write_stats(run: &mut Run, s: &GraphStats) -> Result<()> {
    run.write_artifact("stats", "stats.json", &json_bytes(s)?)?;
    run.write_artifact("stats_md", "stats.md", stats_markdown(s).as_bytes())?;
    Ok(())
}

fn graph_build(ctx: &Ctx, a: &GraphBuildArgs) -> Result<PathBuf> {
    let mut cfg: GraphConfig = ctx.section("graph")?;
    apply_updater(&mut cfg.updater, &a.updater);
    set(&mut cfg.split, a.split);
    if a.max_records.is_some() {
        cfg.max_records = a.max_records;
    }
    set(&mut cfg.threads, a.threads);
    let model_hash = file_hash(&a.model)?;
    let mut inputs = BTreeMap::from([("model".to_string(), model_hash.clone())]);
    store_inputs(&a.store, &mut inputs)?;
    updater_inputs(&cfg.updater, a.updater.editor.as_deref(), &mut inputs)?;
    ctx.execute("graph-build", &cfg, 0, inputs, |run| {
        let stores = Stores::load(&a.store)?;
        let model = TaskModel::load(&a.model)?;
        let store = stores.get(cfg.split);
        let store = cfg.max_records.map_or_else(|| store.clone(), |n| store.truncated(n));
        let updater = build_updater(&cfg.updater, a.updater.editor.as_deref(), &model, &stores.dev, &cfg.tune_eval, run)?;
        let opts = GraphBuildOptions { journal: Some(run.path("graph.journal")), model_id: model_hash.clone(), threads: cfg.threads };
        let g = build_belief_graph(&model, updater.as_ref(), &store, &opts)?;
        run.write_artifact("graph", "graph.json", write_graph(&g, GraphFormat::Json)?.as_bytes())?;
        write_stats(run, &graph_stats(&g)?)
    })
}

fn graph_stats_cmd(ctx: &Ctx, a: &GraphFileArg) -> Result<PathBuf> {
    let inputs = BTreeMap::from([("graph".to_string(), file_hash(&a.graph)?)]);
    let g = import_graph_json(&std::fs::read_to_string(&a.graph)?)?;
    ctx.execute("graph-stats", &serde_json::Value::Null, 0, inputs, |run| write_stats(run, &graph_stats(&g)?))
}

fn graph_export(ctx: &Ctx, a: &GraphExportArgs) -> Result<PathBuf> {
    let inputs = BTreeMap::from([("graph".to_string(), file_hash(&a.graph)?)]);
    let g = import_graph_json(&std::fs::read_to_string(&a.graph)?)?;
    ctx.execute("graph-export", &serde_json::json!({ "format": a.format }), 0, inputs, |run| {
        let ext = serde_json::to_value(a.format)?.as_str().unwrap_or("out").to_string();
        run.write_artifact("graph", &format!("graph.{ext}"), write_graph(&g, a.format)?.as_bytes())?;
        Ok(())
    })
}

fn report(ctx: &Ctx, a: &ReportArgs) -> Result<PathBuf> {
    let title = a.title.clone().unwrap_or_else(|| "Combined results".into());
    let mut inputs = BTreeMap::new();
    let mut reports = Vec::with_capacity(a.inputs.len());
    for (i, p) in a.inputs.iter().enumerate() {
        let file = if p.is_dir() { p.join("report.json") } else { p.clone() };
        let text = std::fs::read_to_string(&file)?;
        inputs.insert(format!("report.{i:03}"), super::run::sha256_hex(text.as_bytes()));
        reports.push(Report::from_json(&text)?);
    }
    ctx.execute("report", &serde_json::json!({ "title": title }), 0, inputs, |run| write_report(run, &Report::merge(title.clone(), &reports)))
}
