use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use ragate::corpus::{corpus_stats, human_labels, load_corpus, save_corpus, AdapterMapping, CorpusFormat, Dialogue, TurnKey};
use ragate::decision::GateDecision;
use ragate::gate_exchange::{
    export_instruction_dataset, import_gate_predictions, AuxiliaryFeatures, FeatureSet, InstructionClauses,
};
use ragate::gate_mha::{
    architecture_grid, build_vocabulary, encode_examples, load_checkpoint, predict, raw_examples, save_checkpoint,
    sweep, train, write_training_log, ClassWeighting, MhaGateConfig, MhaGateModel, RawExample, ThresholdPolicy,
    TrainingConfig,
};
use ragate::gate_prompt::{run_prompt_gate, ChatEndpointConfig, PromptItem, PromptKind, PromptTemplate};
use ragate::http::EndpointSettings;
use ragate::metrics::{
    aligned_table, augmentation_frequency, classification_report, HistogramAxis,
};
use ragate::orchestrator::{
    compare_policies, run_policy, write_records, BigramGenerator, ExternalGenerator, GeneratorEndpoint,
    KnowledgeSource, PolicyKind, PolicySpec, PolicySummary, SnippetSelection,
};
use ragate::retrieval::{
    build_index, load_external_rankings, load_knowledge, rank, recall_at_k, write_rankings, KnowledgeBase,
    RankedList, TfIdfIndex,
};

use crate::args::{
    Cli, Command, EvalGateArgs, ExportPeftArgs, Format, GateKind, ImportPredsArgs, IndexArgs, IngestArgs,
    ReportArgs, RetrievalArgs, RetrieveEvalArgs, RunAdaptiveArgs, TrainGateArgs,
};
use crate::error::{invalid, CliError};
use crate::manifest::RunManifest;

type Result<T> = std::result::Result<T, CliError>;

struct Ctx {
    out: PathBuf,
    seed: u64,
    manifest: RunManifest,
}

impl Ctx {
    fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest
            .input(path)
            .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))
    }

    fn output_path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.manifest.output(&p);
        p
    }

    fn write(&mut self, name: &str, content: &str) -> Result<PathBuf> {
        let p = self.output_path(name);
        fs::write(&p, content)?;
        Ok(p)
    }

    fn write_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<fs::File>> {
        let p = self.output_path(name);
        Ok(BufWriter::new(fs::File::create(p)?))
    }
}

pub fn run(cli: Cli, argv: &[String]) -> Result<()> {
    let name = match &cli.command {
        Command::Ingest(_) => "ingest",
        Command::Index(_) => "index",
        Command::RetrieveEval(_) => "retrieve-eval",
        Command::TrainGate(_) => "train-gate",
        Command::EvalGate(_) => "eval-gate",
        Command::ExportPeft(_) => "export-peft",
        Command::ImportPreds(_) => "import-preds",
        Command::RunAdaptive(_) => "run-adaptive",
        Command::Report(_) => "report",
    };
    fs::create_dir_all(&cli.out)?;
    let mut ctx = Ctx {
        out: cli.out.clone(),
        seed: cli.seed,
        manifest: RunManifest::new(name, argv, cli.config.as_deref(), cli.seed),
    };
    if let Some(c) = &cli.config {
        ctx.input(c)?;
    }
    match cli.command {
        Command::Ingest(a) => ingest(&mut ctx, a)?,
        Command::Index(a) => index(&mut ctx, a)?,
        Command::RetrieveEval(a) => retrieve_eval(&mut ctx, a)?,
        Command::TrainGate(a) => train_gate(&mut ctx, a)?,
        Command::EvalGate(a) => eval_gate(&mut ctx, a)?,
        Command::ExportPeft(a) => export_peft(&mut ctx, a)?,
        Command::ImportPreds(a) => import_preds(&mut ctx, a)?,
        Command::RunAdaptive(a) => run_adaptive(&mut ctx, a)?,
        Command::Report(a) => report(&mut ctx, a)?,
    }
    let out = ctx.out.clone();
    ctx.manifest.write(&out)?;
    Ok(())
}

fn corpus(ctx: &mut Ctx, path: &Path) -> Result<Vec<Dialogue>> {
    ctx.input(path)?;
    Ok(load_corpus(path, CorpusFormat::Canonical, None)?)
}

fn ingest(ctx: &mut Ctx, a: IngestArgs) -> Result<()> {
    ctx.input(&a.corpus)?;
    let mapping = match (&a.mapping, a.format) {
        (Some(p), _) => {
            ctx.input(p)?;
            Some(AdapterMapping::from_file(p)?)
        }
        (None, Format::Ketod) => return Err(invalid("--format ketod needs --mapping")),
        (None, Format::Canonical) => None,
    };
    let format = match a.format {
        Format::Canonical => CorpusFormat::Canonical,
        Format::Ketod => CorpusFormat::KetodAdapter,
    };
    let dialogues = load_corpus(&a.corpus, format, mapping.as_ref())?;
    let stats = corpus_stats(&dialogues);
    let p = ctx.output_path("corpus.jsonl");
    save_corpus(&dialogues, &p)?;
    ctx.write_json("corpus_stats.json", &stats)?;
    println!(
        "{} dialogues, {} system turns, {} labeled ({} positive)",
        stats.n_dialogues, stats.n_system_turns, stats.n_labeled_system_turns, stats.n_positive_labels
    );
    Ok(())
}

fn index(ctx: &mut Ctx, a: IndexArgs) -> Result<()> {
    ctx.input(&a.knowledge)?;
    let kb = load_knowledge(&a.knowledge)?;
    let idx = build_index(kb.snippets())?;
    let p = ctx.output_path("index.json");
    idx.save(&p)?;
    println!("indexed {} snippets, {} terms", idx.n_docs(), idx.vocabulary_size());
    Ok(())
}

/// Loaded retrieval inputs.
struct Retrieval {
    kb: Option<KnowledgeBase>,
    index: Option<TfIdfIndex>,
    rankings: Option<BTreeMap<String, RankedList>>,
}

impl Retrieval {
    fn load(ctx: &mut Ctx, a: &RetrievalArgs) -> Result<Option<Self>> {
        let kb = match &a.knowledge {
            Some(p) => {
                ctx.input(p)?;
                Some(load_knowledge(p)?)
            }
            None => None,
        };
        let mut r = Retrieval {
            kb,
            index: None,
            rankings: None,
        };
        if let Some(p) = &a.rankings {
            ctx.input(p)?;
            let kb = r.kb.as_ref().ok_or_else(|| invalid("--rankings needs --knowledge"))?;
            let ext = load_external_rankings(p, kb)?;
            r.rankings = Some(ext.lists);
        } else if let Some(p) = &a.index {
            ctx.input(p)?;
            r.index = Some(TfIdfIndex::load(p)?);
        } else if let Some(kb) = &r.kb {
            r.index = Some(build_index(kb.snippets())?);
        } else {
            return Ok(None);
        }
        Ok(Some(r))
    }

    /// Needs snippet texts, so a knowledge file must be present.
    fn source(&self) -> Result<KnowledgeSource<'_>> {
        let kb = self
            .kb
            .as_ref()
            .ok_or_else(|| invalid("snippet texts need --knowledge"))?;
        Ok(match (&self.rankings, &self.index) {
            (Some(lists), _) => KnowledgeSource::Rankings { lists, kb },
            (None, Some(index)) => KnowledgeSource::Index { index, kb },
            (None, None) => unreachable!("retrieval loaded without index or rankings"),
        })
    }
}

fn retrieve_eval(ctx: &mut Ctx, a: RetrieveEvalArgs) -> Result<()> {
    let dialogues = corpus(ctx, &a.corpus)?;
    if a.k.contains(&0) {
        return Err(invalid("--k must be at least 1"));
    }
    let r = Retrieval::load(ctx, &a.retrieval)?
        .ok_or_else(|| invalid("retrieve-eval needs --index, --knowledge or --rankings"))?;
    let max_k = *a.k.iter().max().expect("clap requires --k");
    let mut lists = Vec::new();
    let mut sums = vec![0.0; a.k.len()];
    let mut n = 0usize;
    for d in &dialogues {
        for (t, turn) in d.system_turns() {
            let c = ragate::corpus::build_context(d, t)?;
            let qid = c.key().query_id();
            let list = match (&r.rankings, &r.index) {
                (Some(map), _) => map.get(&qid).cloned().unwrap_or_else(|| RankedList {
                    query_id: qid.clone(),
                    entries: Vec::new(),
                    empty_query: false,
                }),
                (None, Some(idx)) => rank(idx, &c, max_k)?,
                (None, None) => unreachable!(),
            };
            if !turn.gold_snippet_ids.is_empty() {
                let gold: HashSet<String> = turn.gold_snippet_ids.iter().cloned().collect();
                for (s, &k) in sums.iter_mut().zip(&a.k) {
                    *s += recall_at_k(&list, &gold, k)?;
                }
                n += 1;
            }
            lists.push(list);
        }
    }
    if n == 0 {
        return Err(invalid("no system turn carries gold snippet ids"));
    }
    let recalls: BTreeMap<String, f64> = a
        .k
        .iter()
        .zip(&sums)
        .map(|(k, s)| (format!("recall@{k}"), s / n as f64))
        .collect();
    for (k, s) in a.k.iter().zip(&sums) {
        println!("Recall@{k}: {:.4}", s / n as f64);
    }
    println!("queries: {n}");
    ctx.write_json("retrieval_eval.json", &serde_json::json!({"n_queries": n, "recall": recalls}))?;
    if r.index.is_some() {
        let mut w = ctx.create("rankings.tsv")?;
        write_rankings(&lists, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

/// Gate examples with retrieved snippet texts attached as knowledge when `k > 0`.
fn gate_examples(
    dialogues: &[Dialogue],
    retrieval: Option<&Retrieval>,
    k: usize,
    labeled_only: bool,
) -> Result<Vec<RawExample>> {
    let mut raw = raw_examples(dialogues, None, labeled_only)?;
    if let Some(r) = retrieval {
        let source = r.source()?;
        let by_id: HashMap<&str, &Dialogue> = dialogues.iter().map(|d| (d.dialogue_id.as_str(), d)).collect();
        for ex in &mut raw {
            let c = ragate::corpus::build_context(by_id[ex.key.dialogue_id.as_str()], ex.key.turn_index)?;
            let texts = match source.select(&c, SnippetSelection::TopK(k)) {
                Ok(s) => s.into_iter().map(|(_, t)| t).collect::<Vec<_>>().join(" "),
                Err(ragate::orchestrator::OrchestratorError::NoSnippets(_)) => String::new(),
                Err(e) => return Err(e.into()),
            };
            ex.knowledge = Some(texts);
        }
    }
    Ok(raw)
}

fn train_gate(ctx: &mut Ctx, a: TrainGateArgs) -> Result<()> {
    let fusion: ragate::gate_mha::FusionMode = a.fusion.parse().map_err(invalid)?;
    let train_corpus = corpus(ctx, &a.corpus)?;
    let dev_corpus = a.dev_corpus.as_ref().map(|p| corpus(ctx, p)).transpose()?;
    let retrieval = if fusion.needs_knowledge() {
        Some(
            Retrieval::load(ctx, &a.retrieval)?
                .ok_or_else(|| invalid(format!("fusion `{}` needs --knowledge", a.fusion)))?,
        )
    } else {
        None
    };
    let train_raw = gate_examples(&train_corpus, retrieval.as_ref(), a.k, true)?;
    let dev_raw = dev_corpus
        .as_ref()
        .map(|d| gate_examples(d, retrieval.as_ref(), a.k, true))
        .transpose()?;
    if train_raw.is_empty() {
        return Err(invalid("training corpus has no labeled system turns"));
    }
    let knowledge_texts = train_raw.iter().filter_map(|r| r.knowledge.as_deref());
    let vocab = build_vocabulary(&train_corpus, knowledge_texts, a.min_freq);
    let train_set = encode_examples(&train_raw, &vocab);
    let dev_set = dev_raw.as_ref().map(|d| encode_examples(d, &vocab));

    let config = MhaGateConfig {
        ffn_dim: a.ffn.unwrap_or(4 * a.emb),
        max_seq_len: a.max_seq_len,
        fusion_mode: fusion,
        dropout_rate: a.dropout,
        seed: ctx.seed,
        ..MhaGateConfig::new(a.heads, a.layers, a.emb, vocab.len())
    };
    let tc = TrainingConfig {
        learning_rate: a.lr,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        early_stop_patience: a.patience,
        class_weighting: if a.unweighted { ClassWeighting::None } else { ClassWeighting::InverseFrequency },
        threshold_policy: if a.fixed_threshold { ThresholdPolicy::Fixed } else { ThresholdPolicy::DevF1Max },
        seed: ctx.seed,
    };
    tc.validate()?;

    let chosen = if a.sweep {
        let dev = dev_set.as_deref().unwrap_or_else(|| {
            log::warn!("no --dev-corpus; sweep selects on the training set");
            &train_set
        });
        let table = sweep(&architecture_grid(&config), &train_set, dev, &tc)?;
        ctx.write("sweep.txt", &table.to_text())?;
        ctx.write_json("sweep.json", &table)?;
        print!("{}", table.to_text());
        let best = table
            .best_row()
            .ok_or_else(|| CliError::Runtime("every sweep cell failed".into()))?;
        println!("best: {}", best.label);
        best.config.clone()
    } else {
        config
    };
    let model = MhaGateModel::new(chosen)?.with_vocabulary(vocab);
    let outcome = train(model, &train_set, dev_set.as_deref(), &tc)?;
    let mut w = ctx.create("training_log.jsonl")?;
    write_training_log(&outcome.log, &mut w)?;
    w.flush()?;
    let p = ctx.output_path("gate.ckpt");
    save_checkpoint(&outcome.model, &p)?;
    let best = &outcome.log[outcome.best_epoch];
    println!(
        "{}: best epoch {} (F1 {:.4}, AUC {:.4}), threshold {:.4}",
        outcome.model.config.label(),
        outcome.best_epoch,
        best.dev_f1,
        best.dev_auc,
        outcome.threshold
    );
    Ok(())
}

fn endpoint(url: &str, timeout: f64, retries: u32, max_in_flight: usize) -> Result<EndpointSettings> {
    let settings = EndpointSettings {
        timeout: Duration::try_from_secs_f64(timeout).map_err(|e| invalid(format!("--timeout: {e}")))?,
        retries,
        max_in_flight,
        ..EndpointSettings::new(url)
    };
    settings.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(settings)
}

fn write_decisions(ctx: &mut Ctx, decisions: &BTreeMap<TurnKey, GateDecision>) -> Result<()> {
    let mut w = ctx.create("predictions.tsv")?;
    for d in decisions.values() {
        writeln!(w, "{}", d.to_tsv())?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the classification report when the corpus has labels.
fn score_against_labels(
    ctx: &mut Ctx,
    dialogues: &[Dialogue],
    decisions: &BTreeMap<TurnKey, GateDecision>,
) -> Result<()> {
    let labels = human_labels(dialogues);
    if labels.is_empty() {
        println!("{} decisions; corpus has no labels to score against", decisions.len());
        return Ok(());
    }
    let report = classification_report(decisions, &labels)?;
    ctx.write_json("gate_report.json", &report)?;
    print!("{}", report.to_text());
    Ok(())
}

fn eval_gate(ctx: &mut Ctx, a: EvalGateArgs) -> Result<()> {
    let dialogues = corpus(ctx, &a.corpus)?;
    let decisions = match a.gate {
        GateKind::Imported => {
            let p = a.predictions.as_ref().ok_or_else(|| invalid("--gate imported needs --predictions"))?;
            ctx.input(p)?;
            import_gate_predictions(p, &dialogues)?
        }
        GateKind::Mha => {
            let p = a.checkpoint.as_ref().ok_or_else(|| invalid("--gate mha needs --checkpoint"))?;
            ctx.input(p)?;
            let model = load_checkpoint(p)?;
            let vocab = model
                .vocabulary
                .clone()
                .ok_or_else(|| invalid("checkpoint carries no vocabulary"))?;
            let retrieval = if model.config.fusion_mode.needs_knowledge() {
                Some(
                    Retrieval::load(ctx, &a.retrieval)?
                        .ok_or_else(|| invalid("this checkpoint needs --knowledge"))?,
                )
            } else {
                None
            };
            let raw = gate_examples(&dialogues, retrieval.as_ref(), a.k, false)?;
            let scores = predict(&model, &encode_examples(&raw, &vocab))?;
            raw.iter()
                .zip(scores)
                .map(|(r, s)| (r.key.clone(), GateDecision::from_score(&r.key, s, model.threshold, "mha")))
                .collect()
        }
        GateKind::Prompt => {
            let url = a.endpoint.as_deref().ok_or_else(|| invalid("--gate prompt needs --endpoint"))?;
            let template = match &a.template {
                Some(p) => {
                    ctx.input(p)?;
                    PromptTemplate::from_file(p)?
                }
                None => PromptTemplate::builtin(a.prompt.parse::<PromptKind>().map_err(invalid)?),
            };
            let retrieval = if a.with_knowledge {
                Some(
                    Retrieval::load(ctx, &a.retrieval)?
                        .ok_or_else(|| invalid("--with-knowledge needs --knowledge"))?,
                )
            } else {
                None
            };
            let source = retrieval.as_ref().map(Retrieval::source).transpose()?;
            let mut items = Vec::new();
            for d in &dialogues {
                for (t, _) in d.system_turns() {
                    let c = ragate::corpus::build_context(d, t)?;
                    let knowledge = match &source {
                        Some(s) => Some(
                            s.select(&c, SnippetSelection::TopK(a.k))
                                .map(|v| v.into_iter().map(|(_, t)| t).collect())
                                .unwrap_or_default(),
                        ),
                        None => None,
                    };
                    items.push(PromptItem { context: c, knowledge });
                }
            }
            let cfg = ChatEndpointConfig {
                endpoint: endpoint(url, a.timeout, a.retries, a.max_in_flight)?,
                ..ChatEndpointConfig::new(url, a.model_name.clone())
            };
            let run = run_prompt_gate(&items, &template, &cfg, a.fallback_augment, "prompt")?;
            let completions: Vec<_> = run
                .completions
                .iter()
                .map(|(k, c)| serde_json::json!({"dialogue_id": k.dialogue_id, "turn_index": k.turn_index, "completion": c}))
                .collect();
            let mut w = ctx.create("completions.jsonl")?;
            for c in completions {
                writeln!(w, "{c}")?;
            }
            w.flush()?;
            println!(
                "{} completions, {} unparsed ({:.1}%), {} failed",
                run.completions.len(),
                run.n_unparsed,
                run.unparsed_rate() * 100.0,
                run.failures.len()
            );
            run.decisions
        }
    };
    write_decisions(ctx, &decisions)?;
    score_against_labels(ctx, &dialogues, &decisions)
}

fn export_peft(ctx: &mut Ctx, a: ExportPeftArgs) -> Result<()> {
    let dialogues = corpus(ctx, &a.corpus)?;
    let features: FeatureSet = a.features.parse()?;
    let aux = match &a.aux {
        Some(p) => {
            ctx.input(p)?;
            Some(AuxiliaryFeatures::load(p, &dialogues)?)
        }
        None => None,
    };
    let kb = match &a.knowledge {
        Some(p) => {
            ctx.input(p)?;
            Some(load_knowledge(p)?)
        }
        None => None,
    };
    let lists = match (&a.rankings, &kb) {
        (Some(p), Some(kb)) => {
            ctx.input(p)?;
            Some(load_external_rankings(p, kb)?.lists)
        }
        (Some(_), None) => return Err(invalid("--rankings needs --knowledge")),
        (None, _) => None,
    };
    let clauses = match &a.clauses {
        Some(p) => {
            ctx.input(p)?;
            InstructionClauses::from_file(p)?
        }
        None => InstructionClauses::default(),
    };
    let rankings = lists.as_ref().zip(kb.as_ref());
    let name = format!("peft_{}.jsonl", features.label());
    let mut w = ctx.create(&name)?;
    let n = export_instruction_dataset(&dialogues, &features, aux.as_ref(), rankings, &clauses, &mut w)?;
    println!("wrote {n} instruction triples to {name}");
    Ok(())
}

fn import_preds(ctx: &mut Ctx, a: ImportPredsArgs) -> Result<()> {
    let dialogues = corpus(ctx, &a.corpus)?;
    ctx.input(&a.predictions)?;
    let decisions = import_gate_predictions(&a.predictions, &dialogues)?;
    let total: usize = dialogues.iter().map(Dialogue::n_system_turns).sum();
    println!("predictions cover {} of {total} system turns", decisions.len());
    write_decisions(ctx, &decisions)?;
    score_against_labels(ctx, &dialogues, &decisions)
}

fn parse_policy(s: &str, seed: u64, gate_name: &str) -> Result<PolicyKind> {
    Ok(match s.parse::<PolicyKind>()? {
        PolicyKind::RandomN { n, .. } => PolicyKind::RandomN { n, seed },
        PolicyKind::Gate { .. } if s == "gate" => PolicyKind::Gate {
            gate_name: gate_name.to_string(),
        },
        other => other,
    })
}

fn run_adaptive(ctx: &mut Ctx, a: RunAdaptiveArgs) -> Result<()> {
    let dialogues = corpus(ctx, &a.corpus)?;
    let policies: Vec<PolicyKind> = a
        .policy
        .iter()
        .map(|p| parse_policy(p, ctx.seed, &a.gate_name))
        .collect::<Result<_>>()?;
    let selection = match a.rank {
        Some(0) => return Err(invalid("--rank starts at 1")),
        Some(r) => SnippetSelection::AtRank(r),
        None => SnippetSelection::TopK(a.k),
    };
    let retrieval = Retrieval::load(ctx, &a.retrieval)?
        .ok_or_else(|| invalid("run-adaptive needs --knowledge (with --index or --rankings)"))?;
    let source = retrieval.source()?;
    let gate = match &a.predictions {
        Some(p) => {
            ctx.input(p)?;
            Some(import_gate_predictions(p, &dialogues)?)
        }
        None => None,
    };
    let generator = match &a.generator {
        Some(url) => GeneratorEndpoint::external(ExternalGenerator {
            endpoint: endpoint(url, a.timeout, a.retries, a.max_in_flight)?,
            max_tokens: a.max_tokens,
        })?,
        None => {
            let train_dialogues = match &a.train_corpus {
                Some(p) => corpus(ctx, p)?,
                None => {
                    log::warn!("no --train-corpus; the built-in generator learns from --corpus");
                    dialogues.clone()
                }
            };
            let responses: Vec<&str> = train_dialogues
                .iter()
                .flat_map(|d| d.system_turns().map(|(_, t)| t.text.as_str()))
                .collect();
            GeneratorEndpoint::Builtin(BigramGenerator::train(responses, a.max_tokens))
        }
    };

    let mut summaries = Vec::new();
    for kind in policies {
        let spec = PolicySpec { kind, selection };
        let name = spec.name();
        let run = run_policy(&dialogues, &spec, gate.as_ref(), &source, &generator)?;
        let mut w = ctx.create(&format!("records_{name}.jsonl"))?;
        write_records(&run.records, &mut w)?;
        w.flush()?;
        if !run.failures.is_empty() {
            let mut w = ctx.create(&format!("failures_{name}.tsv"))?;
            for (k, e) in &run.failures {
                writeln!(w, "{}\t{}\t{}", k.dialogue_id, k.turn_index, e.replace(['\t', '\n'], " "))?;
            }
            w.flush()?;
        }
        let augmented: BTreeMap<TurnKey, bool> = ragate::orchestrator::policy_decisions(&dialogues, &spec.kind, gate.as_ref())?.0;
        for (axis, tag) in [(HistogramAxis::PositionDecile, "position"), (HistogramAxis::Domain, "domain")] {
            let h = augmentation_frequency(&augmented, &dialogues, axis, &name)?;
            ctx.write(&format!("histogram_{name}_{tag}.csv"), &h.to_csv())?;
        }
        ctx.write_json(&format!("summary_{name}.json"), &run.summary)?;
        summaries.push(run.summary);
    }
    if summaries.len() >= 2 {
        let table = compare_policies(&summaries)?;
        ctx.write("comparison.txt", &table.to_text())?;
        ctx.write_json("comparison.json", &table)?;
        print!("{}", table.to_text());
    } else {
        let s = &summaries[0];
        let rows = vec![vec![
            s.policy.clone(),
            s.n_augmented.to_string(),
            format!("{:.2}", s.bleu),
            format!("{:.4}", s.rouge_l),
            format!("{:.4}", s.mean_min_probability),
            s.n_failures.to_string(),
        ]];
        print!("{}", aligned_table(&["policy", "#augs", "BLEU", "ROUGE-L", "conf", "failures"], &rows));
    }
    Ok(())
}

fn report(ctx: &mut Ctx, a: ReportArgs) -> Result<()> {
    let mut summaries: Vec<PolicySummary> = Vec::new();
    for p in &a.summaries {
        ctx.input(p)?;
        summaries.push(serde_json::from_reader(BufReader::new(fs::File::open(p)?))?);
    }
    let mut table = compare_policies(&summaries)?;
    for c in &a.columns {
        let (name, path) = c
            .split_once('=')
            .ok_or_else(|| invalid(format!("--column `{c}` is not NAME=FILE")))?;
        let path = Path::new(path);
        ctx.input(path)?;
        let values: BTreeMap<String, f64> = serde_json::from_str(&fs::read_to_string(path)?)?;
        table.append_column(name, &values);
    }
    ctx.write("comparison.txt", &table.to_text())?;
    ctx.write_json("comparison.json", &table)?;
    print!("{}", table.to_text());
    Ok(())
}
