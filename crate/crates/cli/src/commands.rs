use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, IsTerminal, Write};
use std::path::Path;

use groundrag::corpus::{chunk_corpus, export_finetune, pairs_from_documents, Chunk, ChunkingConfig};
use groundrag::eval::{run_benchmark, sample_questions, BenchOptions, IdfTable, ReportFormat, Scorer};
use groundrag::guardrails::Outcome;
use groundrag::pipeline::PipelineWarning;
use groundrag::prompting::PromptTemplates;
use groundrag::{Answer, IndexEntry, Pipeline, VectorIndex};

use crate::cli::{BenchArgs, Cli, Command, CorpusArgs, ExportArgs, Format, IndexCommand, IngestArgs, RailCommand};
use crate::config::Settings;
use crate::error::{CliError, Result};

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let mut settings = Settings::load(cli.config.as_deref(), &cli.overrides())?;
    let format = cli.format;
    match &cli.command {
        Command::Ingest(args) => ingest(&mut settings, args, out),
        Command::Index(IndexCommand::Build { input, opts }) => index_build(&mut settings, input.as_deref(), opts, out),
        Command::Ask { question } => {
            let pipeline = interactive_pipeline(&settings)?;
            let index = settings.load_index()?;
            let answer = pipeline.answer_query(&question.join(" "), &index)?;
            print_answer(&answer, format, out)
        }
        Command::Chat => chat(&settings, format, out),
        Command::Bench(args) => bench(&settings, args, format, out),
        Command::Rail(RailCommand::Check { file }) => {
            let spec = read_rail(file)?;
            writeln!(out, "OK: {}", spec.summary()).map_err(stdout_err)
        }
        Command::Rail(RailCommand::Enforce { file, question }) => {
            read_rail(file)?;
            settings.app.rail_path = Some(file.clone());
            let pipeline = interactive_pipeline(&settings)?;
            let index = settings.load_index()?;
            let answer = pipeline.answer_query(&question.join(" "), &index)?;
            print_answer(&answer, format, out)
        }
        Command::ExportFinetune(args) => export(&mut settings, args, out),
        Command::Serve => crate::server::serve_blocking(settings),
    }
}

fn stdout_err(e: std::io::Error) -> CliError {
    CliError::new("io", format!("stdout: {e}"))
}

fn read_rail(path: &Path) -> Result<groundrag::RailSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    groundrag::parse_rail(&text).map_err(|e| CliError::new("rail", format!("{}: {e}", path.display())))
}

fn apply_corpus_args(settings: &mut Settings, opts: &CorpusArgs) {
    let c = &mut settings.app.corpus;
    if let Some(t) = &opts.text_column {
        c.text_column = t.clone();
    }
    if let Some(id) = &opts.id_column {
        c.id_column = Some(id.clone());
    }
    if !opts.metadata.is_empty() {
        c.metadata_columns = opts.metadata.clone();
    }
    if let Some(d) = opts.delimiter {
        c.delimiter = d;
    }
    if opts.chunking.is_some() || opts.budget.is_some() || opts.overlap.is_some() {
        let base = c.chunking.unwrap_or_default();
        let mode = opts.chunking.map(Into::into).unwrap_or(if c.chunking.is_some() {
            base.mode
        } else {
            groundrag::ChunkMode::Window
        });
        c.chunking = Some(ChunkingConfig {
            mode,
            budget: opts.budget.unwrap_or(base.budget),
            overlap: opts.overlap.unwrap_or(base.overlap),
        });
    }
}

fn ingest(settings: &mut Settings, args: &IngestArgs, out: &mut dyn Write) -> Result<()> {
    apply_corpus_args(settings, &args.opts);
    let docs = settings.load_corpus(args.corpus.as_deref())?;
    let chunks = chunk_corpus(&docs, &settings.chunking())?;
    let file = File::create(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let mut w = BufWriter::new(file);
    for c in &chunks {
        let line = serde_json::to_string(c).expect("chunk serializes");
        writeln!(w, "{line}").map_err(|e| CliError::io(&args.out, e))?;
    }
    w.flush().map_err(|e| CliError::io(&args.out, e))?;
    writeln!(
        out,
        "ingested {} documents into {} chunks -> {}",
        docs.len(),
        chunks.len(),
        args.out.display()
    )
    .map_err(stdout_err)
}

fn read_chunks(path: &Path) -> Result<Vec<Chunk>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut chunks = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let chunk: Chunk = serde_json::from_str(&line)
            .map_err(|e| CliError::new("corpus", format!("{} line {}: {e}", path.display(), i + 1)))?;
        chunks.push(chunk);
    }
    Ok(chunks)
}

fn index_build(settings: &mut Settings, input: Option<&Path>, opts: &CorpusArgs, out: &mut dyn Write) -> Result<()> {
    apply_corpus_args(settings, opts);
    let index_path = settings.index_path()?.to_path_buf();
    let chunks = match input {
        Some(p) if p.extension().is_some_and(|e| e == "jsonl") => read_chunks(p)?,
        _ => chunk_corpus(&settings.load_corpus(input)?, &settings.chunking())?,
    };
    if chunks.is_empty() {
        return Err(CliError::new("corpus", "nothing to index"));
    }
    let embedder = settings.app.embedder.build()?;
    let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
    let vectors = embedder.embed(&texts)?;
    let entries = chunks
        .into_iter()
        .zip(vectors)
        .map(|(c, vector)| {
            let mut metadata = c.metadata;
            metadata.entry("doc_id".into()).or_insert(c.doc_id);
            IndexEntry {
                chunk_id: c.chunk_id,
                vector,
                text: c.text,
                metadata,
            }
        })
        .collect();
    let mut index = VectorIndex::new();
    let n = index.add(entries)?;
    index.persist(&index_path)?;
    writeln!(
        out,
        "indexed {n} chunks (dim {}) -> {}",
        index.dim().unwrap_or(0),
        index_path.display()
    )
    .map_err(stdout_err)
}

/// Pipeline for ask, chat, rail enforce and serve: nothing is held out.
pub fn interactive_pipeline(settings: &Settings) -> Result<Pipeline> {
    let method = settings.method(None, &HashSet::new())?;
    settings.pipeline(method, settings.model(None)?)
}

fn warning_text(w: &PipelineWarning) -> String {
    match w {
        PipelineWarning::RetrievalDisabled => "retrieval disabled (k = 0)".into(),
        PipelineWarning::EmptyIndex => "index is empty; answered without context".into(),
        PipelineWarning::ContextTruncated { dropped } => {
            format!("context budget exceeded; dropped {}", dropped.join(", "))
        }
    }
}

pub fn print_answer(answer: &Answer, format: Option<Format>, out: &mut dyn Write) -> Result<()> {
    let text = match format {
        Some(Format::Json) => serde_json::to_string_pretty(answer).expect("answer serializes") + "\n",
        _ => {
            let mut s = format!("{}\n", answer.text);
            if !answer.citations.is_empty() {
                s.push_str("\ncitations:\n");
                for c in &answer.citations {
                    s.push_str(&format!("  {}. {}  score={:.4}\n", c.rank, c.chunk_id, c.score));
                }
            }
            if !answer.guardrail_events.is_empty() {
                s.push_str("\nguardrails:\n");
                for e in &answer.guardrail_events {
                    let outcome = match e.outcome {
                        Outcome::Pass => "pass".to_string(),
                        Outcome::Fail => match e.action {
                            Some(a) => format!("fail -> {a}"),
                            None => "fail".into(),
                        },
                    };
                    s.push_str(&format!("  attempt {} {} {}\n", e.attempt, e.validator_id, outcome));
                }
            }
            for w in &answer.warnings {
                s.push_str(&format!("warning: {}\n", warning_text(w)));
            }
            s
        }
    };
    out.write_all(text.as_bytes()).map_err(stdout_err)
}

fn chat(settings: &Settings, format: Option<Format>, out: &mut dyn Write) -> Result<()> {
    let pipeline = interactive_pipeline(settings)?;
    let index = settings.load_index()?;
    let stdin = std::io::stdin();
    let interactive = stdin.is_terminal();
    if interactive {
        eprintln!("groundrag chat ({}, {}); blank line or Ctrl-D to quit", pipeline.model_id(), pipeline.method());
    }
    loop {
        if interactive {
            eprint!("> ");
        }
        let mut line = String::new();
        if stdin.lock().read_line(&mut line).map_err(|e| CliError::new("io", e.to_string()))? == 0 {
            break;
        }
        let question = line.trim();
        if question.is_empty() {
            if interactive {
                break;
            }
            continue;
        }
        match pipeline.answer_query(question, &index) {
            Ok(answer) => print_answer(&answer, format, out)?,
            Err(e) => eprintln!("{}", CliError::from(e)),
        }
        out.flush().map_err(stdout_err)?;
    }
    Ok(())
}

fn bench(settings: &Settings, args: &BenchArgs, format: Option<Format>, out: &mut dyn Write) -> Result<()> {
    let app = &settings.app;
    let qa = settings.load_qa(args.qa.as_deref())?;
    // exemplars come from outside the evaluation sample
    let sample = sample_questions(&qa, app.sample_n, app.seed)?;
    let held_out: HashSet<String> = sample.iter().map(|p| p.qa_id.clone()).collect();
    let method = settings.method(Some(&qa), &held_out)?;
    let pipeline = settings.pipeline(method, settings.model(Some(&qa))?)?;
    let index = settings.load_index()?;

    let token_embedder = app.token_embedder.build()?;
    let mut scorer = Scorer::new(token_embedder);
    if app.idf {
        let refs = sample
            .iter()
            .map(|p| scorer.token_embedder.token_embed(&p.reference_answer).map(|s| s.tokens().to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        scorer = scorer.with_idf(IdfTable::from_references(&refs));
    }
    let options = BenchOptions {
        sample_n: app.sample_n,
        seed: app.seed,
        parallelism: app.parallelism,
        config: Some(settings.redacted()),
    };
    let report = run_benchmark(&qa, &pipeline, &index, &scorer, &options)?;
    let rendered = report.render(format.map_or(ReportFormat::Table, Into::into));
    match &args.out {
        Some(path) => {
            std::fs::write(path, rendered).map_err(|e| CliError::io(path, e))?;
            writeln!(out, "wrote report for {} questions -> {}", report.rows.len(), path.display()).map_err(stdout_err)
        }
        None => out.write_all(rendered.as_bytes()).map_err(stdout_err),
    }
}

fn export(settings: &mut Settings, args: &ExportArgs, out: &mut dyn Write) -> Result<()> {
    apply_corpus_args(settings, &args.opts);
    let pairs = match &args.corpus {
        Some(corpus) => {
            let template = args
                .question_template
                .as_deref()
                .ok_or_else(|| CliError::config("--corpus export needs --question-template"))?;
            pairs_from_documents(&settings.load_corpus(Some(corpus))?, template)?
        }
        None => settings.load_qa(args.qa.as_deref())?,
    };
    let system = match &args.system_prompt {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| CliError::io(p, e))?
            .trim_end()
            .to_string(),
        None => PromptTemplates::default().instruction,
    };
    let n = export_finetune(&pairs, &system, &args.out)?;
    writeln!(out, "exported {n} records -> {}", args.out.display()).map_err(stdout_err)
}
