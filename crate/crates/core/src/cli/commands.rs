use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use nambert::chardata::{
    build_vocab, load_glyphs, load_pinyin_table, rasterize_font, write_glyphs, GlyphAtlas, PinyinTable, Vocab,
};
use nambert::corpus::{parse_parallel, Example, ParallelCorpus};
use nambert::llm::{evaluate_llm, replay, ChatClient, LlmEvaluation, LlmRunOptions};
use nambert::macu::{
    build_confusion_sets, build_filter_set, graphemic_features, kmeans, pinyin_initial_class, probe, run_macu,
    CscMetrics, MacuReport,
};
use nambert::model::{ModelConfig, NamBert};
use nambert::nn::{Graph, Real};
use nambert::trainer::{
    evaluate, pretrain_glyph, pretrain_mlm, restoration_accuracy, train, Ablation, Evaluation, TrainReport,
};
use nambert::{par, Error, Result};

use super::config::{Loaded, Precision, RunConfig, Split};

pub const MODEL_FILE: &str = "model.namb";
pub const BASELINE_FILE: &str = "baseline.namb";
pub const GLYPH_ENCODER_FILE: &str = "glyph_encoder.namb";

pub struct Ctx {
    pub command: &'static str,
    pub cfg: RunConfig,
    pub loaded: Loaded,
    pub out: PathBuf,
}

impl Ctx {
    pub fn new(command: &'static str, loaded: Loaded, out: PathBuf) -> Result<Self> {
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        par::set_enabled(loaded.config.parallel);
        Ok(Self {
            command,
            cfg: loaded.config.clone(),
            loaded,
            out,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json<S: Serialize>(&self, name: &str, value: &S) -> Result<PathBuf> {
        write_json(&self.path(name), value)
    }

    /// `<out>/<command>.manifest.json`: enough to rerun the command exactly.
    pub fn write_manifest(&self) -> Result<()> {
        let manifest = json!({
            "command": self.command,
            "seed": self.cfg.seed,
            "config_sha256": self.loaded.hash,
            "precision": self.cfg.precision,
            "parallel": par::enabled(),
            "versions": {
                "nambert": env!("CARGO_PKG_VERSION"),
                "checkpoint_format": nambert::model::CHECKPOINT_VERSION,
            },
            "config": self.loaded.effective,
        });
        self.write_json(&format!("{}.manifest.json", self.command), &manifest)?;
        Ok(())
    }
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<PathBuf> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct Resources {
    pinyin: PinyinTable,
    glyphs: GlyphAtlas,
    train: ParallelCorpus,
    test: ParallelCorpus,
    vocab: Vocab,
}

impl Resources {
    fn load(cfg: &RunConfig) -> Result<Self> {
        let pinyin = load_pinyin_table(&cfg.data.pinyin)?;
        let glyphs = load_glyphs(&cfg.data.glyphs)?;
        Self::with(cfg, pinyin, glyphs)
    }

    fn with(cfg: &RunConfig, pinyin: PinyinTable, glyphs: GlyphAtlas) -> Result<Self> {
        let train = parse_parallel(&cfg.data.train)?;
        let test = parse_parallel(&cfg.data.test)?;
        if train.examples.is_empty() {
            return Err(Error::Input(format!(
                "{} has no usable sentences",
                cfg.data.train.display()
            )));
        }
        let vocab = vocab_of(&train.examples);
        Ok(Self {
            pinyin,
            glyphs,
            train,
            test,
            vocab,
        })
    }

    fn split(&self, s: Split) -> &[Example] {
        match s {
            Split::Train => &self.train.examples,
            Split::Test => &self.test.examples,
        }
    }
}

/// Vocabulary over both sides of the training corpus.
fn vocab_of(examples: &[Example]) -> Vocab {
    let text: Vec<String> = examples.iter().flat_map(|e| [e.source_str(), e.target_str()]).collect();
    build_vocab(&text)
}

fn model_config(cfg: &RunConfig, vocab: &Vocab, ablation: &Ablation) -> Result<ModelConfig> {
    let mut mc = cfg.model.clone();
    mc.vocab_size = vocab.len();
    ablation.apply(&mut mc)?;
    mc.validate()?;
    Ok(mc)
}

fn or_default(explicit: &Option<PathBuf>, out: &Path, file: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| out.join(file))
}

/// Dispatch on the configured float precision.
macro_rules! with_precision {
    ($ctx:expr, $f:ident) => {
        match $ctx.cfg.precision {
            Precision::F32 => $f::<f32>($ctx),
            Precision::F64 => $f::<f64>($ctx),
        }
    };
}

pub fn prepare_data(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let pinyin = load_pinyin_table(&cfg.data.pinyin)?;
    let mut font_missing = None;
    let glyphs = match &cfg.data.font {
        Some(font) => {
            let bytes = fs::read(font).map_err(|e| Error::io(font, e))?;
            let train = parse_parallel(&cfg.data.train)?;
            let test = parse_parallel(&cfg.data.test)?;
            let mut chars: Vec<char> = pinyin
                .entries()
                .map(|(c, _)| c)
                .chain(
                    train
                        .examples
                        .iter()
                        .chain(&test.examples)
                        .flat_map(|e| e.source.iter().chain(&e.target).copied()),
                )
                .collect();
            chars.sort_unstable();
            chars.dedup();
            let (atlas, missing) = rasterize_font(&bytes, &chars)?;
            let path = ctx.path("glyphs.gly");
            write_glyphs(&path, &atlas)?;
            log::info!("rasterized {} glyphs into {}", atlas.len(), path.display());
            font_missing = Some(missing.into_iter().collect::<String>());
            atlas
        }
        None => load_glyphs(&cfg.data.glyphs)?,
    };
    let res = Resources::with(cfg, pinyin, glyphs)?;
    let vocab_chars = res.vocab.chars();
    let no_pinyin: String = vocab_chars.iter().filter(|&&c| res.pinyin.get(c).is_none()).collect();
    let no_glyph: String = vocab_chars.iter().filter(|&&c| res.glyphs.get(c).is_none()).collect();
    let test_oov: usize = res
        .test
        .examples
        .iter()
        .filter(|e| e.source.iter().chain(&e.target).any(|&c| !res.vocab.contains(c)))
        .count();
    let vocab_text: String = vocab_chars.iter().map(|c| format!("{c}\n")).collect();
    write_text(&ctx.path("vocab.txt"), &vocab_text)?;
    let report = json!({
        "pinyin_entries": res.pinyin.len(),
        "pinyin_warnings": res.pinyin.warnings(),
        "glyphs": res.glyphs.len(),
        "glyph_warnings": res.glyphs.warnings(),
        "font_missing": font_missing,
        "train_sentences": res.train.examples.len(),
        "train_erroneous": res.train.examples.iter().filter(|e| e.has_error()).count(),
        "train_skipped": res.train.skipped,
        "test_sentences": res.test.examples.len(),
        "test_erroneous": res.test.examples.iter().filter(|e| e.has_error()).count(),
        "test_skipped": res.test.skipped,
        "test_sentences_with_oov": test_oov,
        "vocab_size": res.vocab.len(),
        "vocab_without_pinyin": no_pinyin,
        "vocab_without_glyph": no_glyph,
    });
    ctx.write_json("prepare.json", &report)?;
    println!(
        "vocab {} ids; {} train / {} test sentences",
        res.vocab.len(),
        res.train.examples.len(),
        res.test.examples.len()
    );
    Ok(())
}

pub fn pretrain_glyph_cmd(ctx: &Ctx) -> Result<()> {
    with_precision!(ctx, pretrain_glyph_typed)
}

fn pretrain_glyph_typed<T: Real>(ctx: &Ctx) -> Result<()> {
    let res = Resources::load(&ctx.cfg)?;
    let mc = model_config(&ctx.cfg, &res.vocab, &ctx.cfg.ablation)?;
    let start = Instant::now();
    let enc = pretrain_glyph::<T>(&res.glyphs, &mc, &ctx.cfg.glyph)?;
    log::info!("glyph pretraining took {:.1}s", start.elapsed().as_secs_f64());
    nambert::model::save_glyph_encoder(&enc.params, &mc, ctx.path(GLYPH_ENCODER_FILE))?;
    write_text(&ctx.path("glyph_metrics.jsonl"), &enc.report.to_jsonl())?;
    ctx.write_json(
        "glyph_pretrain.json",
        &json!({
            "characters": res.glyphs.len(),
            "accuracy": enc.accuracy,
            "final_loss": enc.report.final_loss(),
            "encoder": ctx.path(GLYPH_ENCODER_FILE),
        }),
    )?;
    println!("glyph identification accuracy {:.4}", enc.accuracy);
    Ok(())
}

/// Train a context-only model with masked-LM restoration on the training
/// targets.
fn train_baseline<T: Real>(ctx: &Ctx, res: &Resources) -> Result<(NamBert<T>, TrainReport)> {
    let ablation = Ablation {
        no_multimodal: true,
        no_focal: true,
        ..ctx.cfg.ablation
    };
    let mc = model_config(&ctx.cfg, &res.vocab, &ablation)?;
    let mut model = NamBert::<T>::new(mc, res.vocab.clone(), &res.pinyin, &res.glyphs, ctx.cfg.mlm.seed)?;
    let sentences: Vec<Vec<char>> = res.train.examples.iter().map(|e| e.target.clone()).collect();
    let report = pretrain_mlm(&mut model, &sentences, &ctx.cfg.mlm)?;
    Ok((model, report))
}

pub fn pretrain_mlm_cmd(ctx: &Ctx) -> Result<()> {
    with_precision!(ctx, pretrain_mlm_typed)
}

fn pretrain_mlm_typed<T: Real>(ctx: &Ctx) -> Result<()> {
    let res = Resources::load(&ctx.cfg)?;
    let (model, report) = train_baseline::<T>(ctx, &res)?;
    let path = or_default(&ctx.cfg.baseline, &ctx.out, BASELINE_FILE);
    model.save(&path)?;
    let held_out: Vec<Vec<char>> = res.test.examples.iter().map(|e| e.target.clone()).collect();
    let acc = restoration_accuracy(&model, &held_out)?;
    write_text(&ctx.path("mlm_metrics.jsonl"), &report.to_jsonl())?;
    ctx.write_json(
        "mlm.json",
        &json!({
            "final_loss": report.final_loss(),
            "test_restoration_accuracy": acc,
            "checkpoint": path,
        }),
    )?;
    println!("masked restoration accuracy on test targets {acc:.4}");
    Ok(())
}

pub fn train_cmd(ctx: &Ctx) -> Result<()> {
    with_precision!(ctx, train_typed)
}

fn train_typed<T: Real>(ctx: &Ctx) -> Result<()> {
    let res = Resources::load(&ctx.cfg)?;
    let mc = model_config(&ctx.cfg, &res.vocab, &ctx.cfg.ablation)?;
    let mut model = NamBert::<T>::new(mc, res.vocab.clone(), &res.pinyin, &res.glyphs, ctx.cfg.seed)?;
    let encoder = match &ctx.cfg.glyph_encoder {
        Some(p) => Some(p.clone()),
        None => Some(ctx.path(GLYPH_ENCODER_FILE)).filter(|p| p.exists()),
    };
    if let Some(p) = &encoder {
        model.load_glyph_encoder(p)?;
        log::info!("graphemic encoder initialized from {}", p.display());
    }
    let start = Instant::now();
    let report = train(&mut model, &res.train.examples, &ctx.cfg.train)?;
    log::info!("training took {:.1}s", start.elapsed().as_secs_f64());
    let path = or_default(&ctx.cfg.checkpoint, &ctx.out, MODEL_FILE);
    model.save(&path)?;
    write_text(&ctx.path("train_metrics.jsonl"), &report.to_jsonl())?;
    let on_train = evaluate(&model, &res.train.examples)?;
    ctx.write_json(
        "train.json",
        &json!({
            "epochs": report.epochs.len(),
            "final_loss": report.final_loss(),
            "train_metrics": on_train.metrics,
            "glyph_encoder": encoder,
            "checkpoint": path,
        }),
    )?;
    println!("training-set F1 {:.4}", on_train.metrics.f1);
    Ok(())
}

#[derive(Serialize)]
struct EvaluateReport {
    checkpoint: PathBuf,
    train: Evaluation,
    test: Evaluation,
    extra: std::collections::BTreeMap<String, Evaluation>,
}

pub fn evaluate_cmd(ctx: &Ctx) -> Result<()> {
    with_precision!(ctx, evaluate_typed)
}

fn evaluate_typed<T: Real>(ctx: &Ctx) -> Result<()> {
    let res = Resources::load(&ctx.cfg)?;
    let path = or_default(&ctx.cfg.checkpoint, &ctx.out, MODEL_FILE);
    let model = NamBert::<T>::load(&path)?;
    let mut extra = std::collections::BTreeMap::new();
    for (name, p) in &ctx.cfg.data.extra_tests {
        let corpus = parse_parallel(p)?;
        let ev = evaluate(&model, &corpus.examples)?;
        println!("{name} F1 {:.4}", ev.metrics.f1);
        extra.insert(name.clone(), ev);
    }
    let report = EvaluateReport {
        train: evaluate(&model, &res.train.examples)?,
        test: evaluate(&model, &res.test.examples)?,
        extra,
        checkpoint: path,
    };
    let tsv: String = res
        .test
        .examples
        .iter()
        .zip(&report.test.predictions)
        .map(|(e, p)| format!("{}\t{}\t{p}\n", e.source_str(), e.target_str()))
        .collect();
    write_text(&ctx.path("test_predictions.tsv"), &tsv)?;
    ctx.write_json("evaluation.json", &report)?;
    let m = &report.test.metrics;
    println!("test P {:.4} R {:.4} F1 {:.4}", m.precision, m.recall, m.f1);
    Ok(())
}

#[derive(Serialize)]
struct MacuOutput {
    checkpoint: PathBuf,
    baseline: PathBuf,
    filter_sentences: usize,
    filter_positions: usize,
    probed_positions: usize,
    phonetic: MacuOutcome,
    graphemic: MacuOutcome,
}

/// A report, or why none could be computed for that kind.
#[derive(Serialize)]
#[serde(untagged)]
enum MacuOutcome {
    Report(MacuReport),
    Failed { error: String },
}

impl From<std::result::Result<MacuReport, String>> for MacuOutcome {
    fn from(r: std::result::Result<MacuReport, String>) -> Self {
        match r {
            Ok(r) => Self::Report(r),
            Err(error) => Self::Failed { error },
        }
    }
}

pub fn macu_cmd(ctx: &Ctx, report: Option<&Path>) -> Result<()> {
    match ctx.cfg.precision {
        Precision::F32 => macu_typed::<f32>(ctx, report),
        Precision::F64 => macu_typed::<f64>(ctx, report),
    }
}

fn macu_typed<T: Real>(ctx: &Ctx, report_path: Option<&Path>) -> Result<()> {
    let res = Resources::load(&ctx.cfg)?;
    let model_path = or_default(&ctx.cfg.checkpoint, &ctx.out, MODEL_FILE);
    let model = NamBert::<T>::load(&model_path)?;
    let baseline_path = or_default(&ctx.cfg.baseline, &ctx.out, BASELINE_FILE);
    let baseline = if baseline_path.exists() {
        NamBert::<T>::load(&baseline_path)?
    } else {
        log::info!("no baseline at {}; training one", baseline_path.display());
        let (b, _) = train_baseline::<T>(ctx, &res)?;
        b.save(&baseline_path)?;
        b
    };
    let sentences: Vec<Vec<char>> = res.split(ctx.cfg.macu.split).iter().map(|e| e.target.clone()).collect();
    let m = ctx.cfg.macu.filter_sentences.unwrap_or(sentences.len());
    let filter = build_filter_set(&sentences, &baseline, m)?;

    let mut chars: Vec<char> = model
        .vocab()
        .chars()
        .iter()
        .copied()
        .chain(model.extra_chars())
        .filter(|&c| model.pinyin().get(c).is_some() && model.glyphs().get(c).is_some_and(|g| !g.is_blank()))
        .collect();
    chars.sort_unstable();
    let (cp, cg) = build_confusion_sets(&chars, model.pinyin(), model.glyphs(), ctx.cfg.macu.thresholds)?;
    let seed = ctx.cfg.macu.seed;
    let phonetic = run_macu(&model, &filter, &cp, seed).map_err(|e| e.to_string());
    let graphemic = run_macu(&model, &filter, &cg, seed).map_err(|e| e.to_string());
    if let (Err(a), Err(b)) = (&phonetic, &graphemic) {
        return Err(Error::Protocol(format!("phonetic: {a}; graphemic: {b}")));
    }
    for (name, r) in [("phonetic", &phonetic), ("graphemic", &graphemic)] {
        match r {
            Ok(r) => {
                write_text(&ctx.path(&format!("macu_{name}.csv")), &r.to_csv())?;
                println!(
                    "{name} MACU {:.4} over {} substitutions",
                    r.score,
                    r.substitutions.len()
                );
            }
            Err(e) => eprintln!("{name} MACU not computed: {e}"),
        }
    }
    let out = MacuOutput {
        checkpoint: model_path,
        baseline: baseline_path,
        filter_sentences: filter.sentences.len(),
        filter_positions: filter.len(),
        probed_positions: filter.probed,
        phonetic: phonetic.into(),
        graphemic: graphemic.into(),
    };
    match report_path {
        Some(p) => write_json(p, &out)?,
        None => ctx.write_json("macu.json", &out)?,
    };
    Ok(())
}

pub fn probe_cmd(ctx: &Ctx) -> Result<()> {
    with_precision!(ctx, probe_typed)
}

/// Per-character hidden states of single-character inputs: `(semantic, fused)`.
type States = Vec<Vec<f64>>;

fn char_states<T: Real>(model: &NamBert<T>, chars: &[char]) -> Result<(States, States)> {
    let (mut sem, mut fused) = (Vec::new(), Vec::new());
    for chunk in chars.chunks(64) {
        let examples: Vec<Example> = chunk
            .iter()
            .map(|&c| Example::new(String::new(), &c.to_string(), &c.to_string()))
            .collect::<Result<_>>()?;
        let batch = model.batch(&examples);
        let mut g = Graph::new();
        let trace = model.build(&mut g, &batch)?;
        for (var, dst) in [(trace.semantic, &mut sem), (trace.fused, &mut fused)] {
            let t = g.value(var);
            let d = *t.shape().last().expect("hidden state has a width");
            dst.extend(
                t.data()
                    .chunks(d)
                    .map(|r| r.iter().map(|v| v.f64()).collect::<Vec<f64>>()),
            );
        }
    }
    Ok((sem, fused))
}

fn split_probe(x: &[Vec<f64>], y: &[usize], test: &[bool], cfg: &nambert::macu::ProbeConfig) -> Result<f64> {
    let pick = |want: bool| -> (Vec<Vec<f64>>, Vec<usize>) {
        x.iter()
            .zip(y)
            .zip(test)
            .filter(|(_, &t)| t == want)
            .map(|((a, &b), _)| (a.clone(), b))
            .unzip()
    };
    let (tx, ty) = pick(false);
    let (vx, vy) = pick(true);
    probe(&tx, &ty, &vx, &vy, cfg)
}

fn probe_typed<T: Real>(ctx: &Ctx) -> Result<()> {
    let path = or_default(&ctx.cfg.checkpoint, &ctx.out, MODEL_FILE);
    let model = NamBert::<T>::load(&path)?;
    let sec = &ctx.cfg.probe;
    let mut chars: Vec<char> = model
        .vocab()
        .chars()
        .iter()
        .copied()
        .filter(|&c| model.pinyin().get(c).is_some() && model.glyphs().get(c).is_some_and(|g| !g.is_blank()))
        .collect();
    if chars.len() < 4 {
        return Err(Error::Input(format!(
            "only {} characters have pinyin and glyphs",
            chars.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sec.seed);
    chars.shuffle(&mut rng);
    let n_test = ((chars.len() as f64 * sec.test_fraction).round() as usize).clamp(1, chars.len() - 1);
    let is_test: Vec<bool> = (0..chars.len()).map(|i| i < n_test).collect();

    let phon_y: Vec<usize> = chars
        .iter()
        .map(|&c| pinyin_initial_class(model.pinyin().code(c)))
        .collect();
    let pixels: Vec<Vec<f64>> = chars
        .iter()
        .map(|&c| graphemic_features(model.glyphs().bitmap(c)))
        .collect();
    let glyph_y = kmeans(&pixels, sec.clusters.min(chars.len()), 50, sec.seed)?;
    let (sem, fused) = char_states(&model, &chars)?;

    let mut out = serde_json::Map::new();
    for (label, y) in [("phonetic", &phon_y), ("graphemic", &glyph_y)] {
        let mut row = serde_json::Map::new();
        for (name, x) in [("semantic", &sem), ("fused", &fused)] {
            let v = match split_probe(x, y, &is_test, &sec.classifier) {
                Ok(a) => json!(a),
                Err(e) => json!({ "error": e.to_string() }),
            };
            row.insert(name.into(), v);
        }
        out.insert(label.into(), Value::Object(row));
    }
    out.insert("characters".into(), json!(chars.len()));
    out.insert("test_characters".into(), json!(n_test));
    out.insert("checkpoint".into(), json!(path));
    ctx.write_json("probe.json", &Value::Object(out.clone()))?;
    println!("{}", serde_json::to_string(&out)?);
    Ok(())
}

#[derive(Serialize)]
struct LlmOutput<'a> {
    log: PathBuf,
    replayed: bool,
    #[serde(flatten)]
    evaluation: &'a LlmEvaluation,
}

pub fn llm_eval_cmd(ctx: &Ctx) -> Result<()> {
    let sec = &ctx.cfg.llm;
    let (evaluation, log, replayed) = match &sec.replay {
        Some(p) => (replay(p)?, p.clone(), true),
        None => {
            let res = Resources::load(&ctx.cfg)?;
            let mut examples = res.split(sec.split).to_vec();
            if let Some(n) = sec.limit {
                examples.truncate(n);
            }
            let client = ChatClient::new(sec.endpoint.clone().with_env())?;
            let cfg = client.config();
            let opts = LlmRunOptions {
                concurrency: cfg.concurrency,
                retries: cfg.retries,
                backoff_ms: cfg.backoff_ms,
            };
            let log = ctx.path("llm_log.jsonl");
            (
                evaluate_llm(&examples, &client, &sec.template, opts, Some(&log))?,
                log,
                false,
            )
        }
    };
    ctx.write_json(
        "llm_eval.json",
        &LlmOutput {
            log,
            replayed,
            evaluation: &evaluation,
        },
    )?;
    let m: &CscMetrics = &evaluation.metrics;
    println!(
        "P {:.4} R {:.4} F1 {:.4}; {} unanswered, {} length mismatches",
        m.precision, m.recall, m.f1, evaluation.transport_failures, evaluation.length_mismatches
    );
    Ok(())
}

pub fn correct_cmd(checkpoint: &Path, text: &str) -> Result<()> {
    let model = NamBert::<f32>::load(checkpoint)?;
    println!("{}", model.correct_str(text)?);
    Ok(())
}
