use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use dualsearch::corpus::{
    dgms_build, frequent_words, load_pairs, preprocess_pairs, preprocess_with, read_tokenized, write_tokenized,
    CorpusStats, DatasetSplits, LoadReport, Modality, RawPair, Split, TokenizedPair,
};
use dualsearch::embedding::{read_model, write_model, write_text_vectors, EmbeddingModel, Embeddings};
use dualsearch::encoder::{read_checkpoint, write_checkpoint, DualEncoder, PooledPairs, Precision, Provenance};
use dualsearch::evaluation::{
    default_non_linked_samples, evaluate_full, evaluate_limited, format_reports, similarity_stats, size_sweep,
    sweep_csv, EvalReport, EvalSet, Protocol, SimilarityStats, SweepPoint,
};
use dualsearch::experiment::{ablate as run_ablation, train_embeddings, AblationSetting, RunSummary};
use dualsearch::retrieval::{read_index, write_index, RetrievalIndex};
use dualsearch::synthetic::SyntheticConfig;
use dualsearch::training::{fit_from, load_state, save_state, HyperParams, TrainState};
use dualsearch::{Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::config::{Layout, RunConfig};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn require(path: &Path, what: &str, fix: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::data(format!("no {what} at {}; run `dualsearch {fix}` first", path.display())))
    }
}

fn provenance(cfg: &RunConfig) -> Provenance {
    Provenance { seed: cfg.seed, config_hash: cfg.hash() }
}

pub fn synth(s: &SyntheticConfig, layout: &Layout) -> Result<()> {
    let pairs = s.generate()?;
    let path = layout.raw_dir().join("corpus.jsonl");
    fs::create_dir_all(layout.raw_dir())?;
    let mut out = BufWriter::new(File::create(&path)?);
    for p in &pairs {
        let line = json!({ "id": p.id, "split": p.split, "text": p.text, "code": p.code });
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    println!("wrote {} pairs to {}", pairs.len(), path.display());
    Ok(())
}

pub fn preprocess(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let d = &cfg.data;
    let mut sources: Vec<(&Path, Split)> = Vec::new();
    for (path, split) in [(&d.train, Split::Train), (&d.valid, Split::Valid), (&d.test, Split::Test)] {
        if let Some(p) = path {
            sources.push((p, split));
        }
    }
    sources.extend(d.inputs.iter().map(|p| (p.as_path(), Split::Train)));
    if sources.is_empty() {
        return Err(Error::config("no input files: pass --train/--valid/--test or --input, or set data in the config"));
    }
    if let Some((missing, _)) = sources.iter().find(|(p, _)| !p.is_file()) {
        return Err(Error::data(format!("input file {} does not exist", missing.display())));
    }

    let mut raw: Vec<RawPair> = Vec::new();
    let mut report = LoadReport::default();
    for (path, split) in &sources {
        let (pairs, r) = load_pairs(path, &d.fields, *split)?;
        report.merge(&r);
        raw.extend(pairs);
    }
    let splits = match &d.dgms {
        Some(opts) => dgms_build(&raw, cfg.seed, opts)?,
        None => {
            let (kept, _) = preprocess_pairs(&raw, d.preprocess);
            let splits = DatasetSplits::from_pairs(kept);
            splits.validate()?;
            splits
        }
    };
    let [train, valid, test] = splits.sizes();
    let dropped = raw.len() - (train + valid + test);

    fs::create_dir_all(layout.data_dir())?;
    for split in Split::ALL {
        write_tokenized(&layout.split_file(split), splits.get(split))?;
    }
    let manifest = json!({
        "config_hash": cfg.hash_hex(),
        "seed": cfg.seed,
        "load": report,
        "filtered_out": dropped,
        "sizes": { "train": train, "valid": valid, "test": test },
        "dgms": d.dgms.is_some(),
    });
    write_json(&layout.data_dir().join("manifest.json"), &manifest)?;
    println!(
        "read {} lines, kept {} pairs (train {train}, valid {valid}, test {test}), skipped {} malformed, filtered {dropped}",
        report.lines,
        train + valid + test,
        report.skipped
    );
    Ok(())
}

fn load_splits(layout: &Layout) -> Result<DatasetSplits> {
    let mut pairs = Vec::new();
    for split in Split::ALL {
        let path = layout.split_file(split);
        require(&path, "preprocessed data", "preprocess")?;
        pairs.extend(read_tokenized(&path)?);
    }
    let splits = DatasetSplits::from_pairs(pairs);
    splits.validate()?;
    Ok(splits)
}

const UNIFIED_FILE: &str = "unified.dsem";
const TEXT_FILE: &str = "text.dsem";
const CODE_FILE: &str = "code.dsem";

pub fn train_embed(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let splits = load_splits(layout)?;
    let corpus: Vec<TokenizedPair> = splits.iter().cloned().collect();
    let e = &cfg.embedding;
    let emb = train_embeddings(e.language_model, &corpus, &e.cbow, &e.subword)?;
    let dir = layout.embedding_dir();
    fs::create_dir_all(&dir)?;
    for stale in [UNIFIED_FILE, TEXT_FILE, CODE_FILE] {
        let path = dir.join(stale);
        if path.exists() {
            fs::remove_file(path)?;
        }
    }
    let hash = cfg.hash();
    let save = |mut model: EmbeddingModel, name: &str| -> Result<()> {
        model.config_hash = hash;
        let path = dir.join(name);
        write_model(&path, &model)?;
        if e.text_dump {
            write_text_vectors(&path.with_extension("vec"), &model)?;
        }
        println!("wrote {} ({} words, dim {})", path.display(), model.vocab.len(), model.dim);
        Ok(())
    };
    match emb {
        Embeddings::Unified(m) => save(m, UNIFIED_FILE)?,
        Embeddings::Separate { text, code } => {
            save(text, TEXT_FILE)?;
            save(code, CODE_FILE)?;
        }
    }
    write_json(
        &dir.join("manifest.json"),
        &json!({ "language_model": e.language_model, "config_hash": cfg.hash_hex(), "seed": cfg.seed }),
    )
}

fn load_embeddings(layout: &Layout) -> Result<Embeddings> {
    let dir = layout.embedding_dir();
    let unified = dir.join(UNIFIED_FILE);
    if unified.exists() {
        return Ok(Embeddings::Unified(read_model(&unified)?));
    }
    let (text, code) = (dir.join(TEXT_FILE), dir.join(CODE_FILE));
    if text.exists() && code.exists() {
        return Ok(Embeddings::Separate { text: read_model(&text)?, code: read_model(&code)? });
    }
    Err(Error::data(format!("no embedding model in {}; run `dualsearch train-embed` first", dir.display())))
}

fn load_checkpoint(layout: &Layout) -> Result<(DualEncoder, Provenance)> {
    let path = layout.checkpoint();
    require(&path, "encoder checkpoint", "train")?;
    read_checkpoint(&path)
}

pub fn train(cfg: &RunConfig, layout: &Layout, resume: bool) -> Result<()> {
    let hp: &HyperParams = &cfg.training;
    hp.validate()?;
    let splits = load_splits(layout)?;
    let emb = load_embeddings(layout)?;
    if splits.valid.is_empty() {
        return Err(Error::data("the validation split is empty"));
    }
    let train = PooledPairs::build(&emb, &splits.train);
    let valid = PooledPairs::build(&emb, &splits.valid);
    let prov = provenance(cfg);
    fs::create_dir_all(layout.model_dir())?;

    let state = if resume {
        let dir = layout.state_dir();
        if !dir.join("state.json").exists() {
            return Err(Error::config(format!("no training state to resume in {}", dir.display())));
        }
        let (state, saved) = load_state(&dir)?;
        if saved.seed != prov.seed {
            return Err(Error::config(format!("saved state used seed {}, this run uses {}", saved.seed, prov.seed)));
        }
        if saved.config_hash != prov.config_hash {
            log::warn!("configuration changed since the saved state was written");
        }
        if state.dual.config != hp.encoder_config(emb.dim()) {
            return Err(Error::config("saved state has a different encoder shape than the configuration"));
        }
        println!("resuming after epoch {}", state.epoch);
        state
    } else {
        TrainState::new(DualEncoder::new(hp.encoder_config(emb.dim()), hp.seed)?)
    };
    let mut log = BufWriter::new(
        OpenOptions::new().create(true).write(true).append(resume).truncate(!resume).open(layout.train_log())?,
    );
    let state_dir = layout.state_dir();
    let outcome = fit_from(state, &train, &valid, hp, |entry, st| {
        serde_json::to_writer(&mut log, entry)?;
        log.write_all(b"\n")?;
        log.flush()?;
        save_state(&state_dir, st, prov)
    })?;

    write_checkpoint(&layout.checkpoint(), &outcome.best, Precision::F32, prov)?;
    // serve from the stored checkpoint so queries and the index agree
    let (best, _) = read_checkpoint(&layout.checkpoint())?;
    let artifacts: Vec<(String, Vec<String>)> =
        splits.test.iter().map(|p| (p.id.clone(), p.code_tokens.clone())).collect();
    if !artifacts.is_empty() {
        let tag = format!("ckpt:{:016x}:{}|{}", prov.config_hash, prov.seed, emb.provenance());
        let index = RetrievalIndex::build(&best, &emb, &artifacts, tag)?;
        fs::create_dir_all(layout.index().parent().expect("index has a parent"))?;
        write_index(&layout.index(), &index)?;
    }
    write_json(
        &layout.model_dir().join("summary.json"),
        &json!({
            "config_hash": cfg.hash_hex(),
            "seed": cfg.seed,
            "best_epoch": outcome.best_epoch,
            "best_val_loss": outcome.best_val_loss,
            "initial_val_loss": outcome.initial_val_loss,
            "epochs_run": outcome.state.epoch,
            "stopped_early": outcome.stopped_early,
            "hyperparams": hp,
        }),
    )?;
    println!(
        "trained {} epochs, best epoch {} (validation loss {:.6}, initial {:.6}); checkpoint {}",
        outcome.state.epoch,
        outcome.best_epoch,
        outcome.best_val_loss,
        outcome.initial_val_loss,
        layout.checkpoint().display()
    );
    Ok(())
}

#[derive(Serialize)]
struct LabelledReport {
    label: String,
    report: EvalReport,
}

pub fn eval(cfg: &RunConfig, layout: &Layout, untrained: bool) -> Result<()> {
    let splits = load_splits(layout)?;
    if splits.test.is_empty() {
        return Err(Error::data("the test split is empty"));
    }
    let emb = load_embeddings(layout)?;
    let (dual, prov) = load_checkpoint(layout)?;
    let mut models = vec![("trained", dual.clone())];
    if untrained {
        models.push(("untrained", DualEncoder::new(dual.config.clone(), cfg.training.seed)?));
    }
    let ev = &cfg.eval;
    let samples = ev.similarity_samples.unwrap_or_else(|| default_non_linked_samples(splits.test.len()));

    let mut rows: Vec<(String, EvalReport)> = Vec::new();
    let mut similarity: Vec<SimilarityStats> = Vec::new();
    let mut sweep: Vec<SweepPoint> = Vec::new();
    for (name, model) in &models {
        let set = EvalSet::encode(model, &emb, &splits.test);
        for protocol in &ev.protocols {
            match protocol {
                Protocol::Full => rows.push((format!("{name}/full"), evaluate_full(&set)?)),
                Protocol::Limited => {
                    rows.push((format!("{name}/limited"), evaluate_limited(&set, ev.chunk_size, cfg.seed)?))
                }
                Protocol::Sweep if *name == "trained" => {
                    sweep = size_sweep(&set, &ev.sweep_sizes, cfg.seed, ev.repeats)?;
                }
                Protocol::Sweep => {}
            }
        }
        if ev.protocols.iter().any(|p| *p != Protocol::Sweep) {
            similarity.push(similarity_stats(&set, samples, cfg.seed, *name == "trained")?);
        }
    }

    let dir = layout.eval_dir();
    fs::create_dir_all(&dir)?;
    if !sweep.is_empty() {
        let csv = sweep_csv(&sweep);
        fs::write(dir.join("sweep.csv"), &csv)?;
        print!("{csv}");
    }
    if !rows.is_empty() {
        let table = format_reports(&rows);
        fs::write(dir.join("report.txt"), &table)?;
        print!("{table}");
        for s in &similarity {
            println!(
                "{:<10} linked {:.4}  non-linked {:.4}  ({} draws)",
                if s.trained { "trained" } else { "untrained" },
                s.mean_linked,
                s.mean_non_linked,
                s.sample_size
            );
        }
        let reports: Vec<LabelledReport> =
            rows.into_iter().map(|(label, report)| LabelledReport { label, report }).collect();
        write_json(
            &dir.join("report.json"),
            &json!({
                "config_hash": cfg.hash_hex(),
                "seed": cfg.seed,
                "checkpoint": { "config_hash": format!("{:016x}", prov.config_hash), "seed": prov.seed },
                "config": cfg,
                "reports": reports,
                "similarity": similarity,
                "sweep": sweep,
            }),
        )?;
    }
    Ok(())
}

fn snippets(cfg: &RunConfig, path: &Path) -> Result<HashMap<String, String>> {
    let (pairs, _) = load_pairs(path, &cfg.data.fields, Split::Test)?;
    Ok(pairs.into_iter().map(|p| (p.id, p.code)).collect())
}

fn answer<W: Write>(
    out: &mut W,
    query: &str,
    k: usize,
    cfg: &RunConfig,
    (dual, emb, index): (&DualEncoder, &Embeddings, &RetrievalIndex),
    code: &HashMap<String, String>,
) -> io::Result<()> {
    let tokens = preprocess_with(query, cfg.data.preprocess);
    if tokens.is_empty() {
        return writeln!(out, "(the query has no usable tokens)");
    }
    for (rank, hit) in index.query(dual, emb, &tokens, k).hits.iter().enumerate() {
        writeln!(out, "{:>3}  {:.4}  {}", rank + 1, hit.score, hit.id)?;
        if let Some(src) = code.get(&hit.id) {
            for line in src.lines().take(8) {
                writeln!(out, "       | {line}")?;
            }
        }
    }
    Ok(())
}

pub fn query(cfg: &RunConfig, layout: &Layout, text: Option<&str>, k: usize, corpus: Option<&Path>) -> Result<()> {
    require(&layout.index(), "search index", "train")?;
    let index = read_index(&layout.index())?;
    let emb = load_embeddings(layout)?;
    let (dual, _) = load_checkpoint(layout)?;
    if index.dim() != dual.config.output_size {
        return Err(Error::data("the index was built with a different encoder; rerun `dualsearch train`"));
    }
    let code = match corpus {
        Some(path) => snippets(cfg, path)?,
        None => HashMap::new(),
    };
    let model = (&dual, &emb, &index);
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match text {
        Some(q) => answer(&mut out, q, k, cfg, model, &code)?,
        None => {
            for line in io::stdin().lock().lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                answer(&mut out, &line, k, cfg, model, &code)?;
                writeln!(out)?;
                out.flush()?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SplitStats {
    split: Split,
    pairs: usize,
    text_vocab: usize,
    code_vocab: usize,
    text_tokens: u64,
    code_tokens: u64,
}

pub fn stats(cfg: &RunConfig, layout: &Layout, top: usize) -> Result<()> {
    let splits = load_splits(layout)?;
    let mut per_split = Vec::new();
    for split in Split::ALL {
        let s = CorpusStats::compute(splits.get(split));
        per_split.push(SplitStats {
            split,
            pairs: s.pair_count,
            text_vocab: s.vocab_size(Modality::Text),
            code_vocab: s.vocab_size(Modality::Code),
            text_tokens: s.text_counts.values().sum(),
            code_tokens: s.code_counts.values().sum(),
        });
    }
    let all: Vec<TokenizedPair> = splits.iter().cloned().collect();
    let whole = CorpusStats::compute(&all);
    let text_vocab: HashSet<&String> = whole.text_counts.keys().collect();
    let shared_vocab = whole.code_counts.keys().filter(|w| text_vocab.contains(w)).count();
    let overlapping = all
        .iter()
        .filter(|p| {
            let text: HashSet<&String> = p.text_tokens.iter().collect();
            p.code_tokens.iter().any(|t| text.contains(t))
        })
        .count();
    let top_text = frequent_words(&splits.train, Modality::Text, top);
    let top_code = frequent_words(&splits.train, Modality::Code, top);

    for s in &per_split {
        println!(
            "{:<6} {:>8} pairs  text vocab {:>7}  code vocab {:>7}",
            s.split.as_str(),
            s.pairs,
            s.text_vocab,
            s.code_vocab
        );
    }
    println!("{shared_vocab} code words also occur in text; {overlapping} of {} pairs share a token", all.len());
    println!("{:<20} {:>8}   {:<20} {:>8}", "text word", "count", "code word", "count");
    for i in 0..top_text.len().max(top_code.len()) {
        let cell = |v: &[(String, u64)]| v.get(i).map(|(w, c)| (w.clone(), c.to_string())).unwrap_or_default();
        let ((tw, tc), (cw, cc)) = (cell(&top_text), cell(&top_code));
        println!("{tw:<20} {tc:>8}   {cw:<20} {cc:>8}");
    }

    let mut similarity = Vec::new();
    if layout.checkpoint().exists() && !splits.test.is_empty() {
        let emb = load_embeddings(layout)?;
        let (dual, _) = load_checkpoint(layout)?;
        let untrained = DualEncoder::new(dual.config.clone(), cfg.training.seed)?;
        let samples = cfg.eval.similarity_samples.unwrap_or_else(|| default_non_linked_samples(splits.test.len()));
        for (model, trained) in [(&untrained, false), (&dual, true)] {
            let s = similarity_stats(&EvalSet::encode(model, &emb, &splits.test), samples, cfg.seed, trained)?;
            println!(
                "{:<10} linked {:.4}  non-linked {:.4}",
                if trained { "trained" } else { "untrained" },
                s.mean_linked,
                s.mean_non_linked
            );
            similarity.push(s);
        }
    }
    write_json(
        &layout.root.join("stats.json"),
        &json!({
            "config_hash": cfg.hash_hex(),
            "seed": cfg.seed,
            "splits": per_split,
            "shared_vocabulary": shared_vocab,
            "pairs_with_overlap": overlapping,
            "top_text": top_text,
            "top_code": top_code,
            "similarity": similarity,
        }),
    )
}

fn ablation_table(rows: &[(AblationSetting, RunSummary)]) -> String {
    let mut out = format!(
        "{:<32} {:>8} {:>8} {:>8} {:>10} {:>8} {:>10}\n",
        "setting", "MRR", "MAP@1", "MAA@1", "untrained", "linked", "non-linked"
    );
    for (s, r) in rows {
        out.push_str(&format!(
            "{:<32} {:>8.4} {:>8.4} {:>8.4} {:>10.4} {:>8.4} {:>10.4}\n",
            s.label(),
            r.trained.mrr,
            r.trained.map_at_1,
            r.trained.maa_at_1,
            r.untrained.mrr,
            r.trained_similarity.mean_linked,
            r.trained_similarity.mean_non_linked
        ));
    }
    out
}

pub fn ablate(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let splits = load_splits(layout)?;
    let axes = &cfg.ablation;
    if axes.settings().is_empty() {
        return Err(Error::config("every ablation axis needs at least one value"));
    }
    let e = &cfg.embedding;
    let total = axes.settings().len();
    let mut done = 0;
    let rows = run_ablation(&splits, &e.cbow, &e.subword, &cfg.training, axes, |s, r| {
        done += 1;
        println!("[{done}/{total}] {:<32} MRR {:.4}", s.label(), r.trained.mrr);
    })?;
    let table = ablation_table(&rows);
    let dir = layout.ablation_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("ablation.txt"), &table)?;
    print!("{table}");
    let json_rows: Vec<_> = rows.iter().map(|(s, r)| json!({ "setting": s, "summary": r })).collect();
    write_json(
        &dir.join("ablation.json"),
        &json!({ "config_hash": cfg.hash_hex(), "seed": cfg.seed, "axes": axes, "rows": json_rows }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use dualsearch::experiment::LanguageModel;

    #[test]
    fn missing_artifacts_name_the_fixing_command() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path().to_path_buf());
        let err = load_embeddings(&layout).unwrap_err().to_string();
        assert!(err.contains("train-embed"), "{err}");
        let err = load_splits(&layout).unwrap_err().to_string();
        assert!(err.contains("preprocess"), "{err}");
        let err = query(&RunConfig::default(), &layout, Some("x"), 3, None).unwrap_err().to_string();
        assert!(err.contains("search index") && err.contains("dualsearch train"), "{err}");
    }

    #[test]
    fn language_model_is_recorded_in_the_manifest() {
        let lm: LanguageModel = "separate".parse().unwrap();
        assert_eq!(serde_json::to_value(lm).unwrap(), "separate");
    }
}
