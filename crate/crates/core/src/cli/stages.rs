use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{CliError, PipelineConfig};
use crate::eval_harness::{compute_metrics, read_impressions, synthesize_replay, EvalReport, ImpressionEvent};
use crate::event_log::{read_events, reconstruct_sessions, Session};
use crate::intent_filter::filter_corpus;
use crate::llm_alternator::{
    alternate_journey, mined_record, AlternatorConfig, FewShot, HttpLlmClient, LlmClient, MockLlmClient,
};
use crate::query_repr::{build_profiles, ProfileSimilarity, Profiles, QueryItemProfile, TokenSimilarity};
use crate::sequence_miner::{aggregate_journeys, mine_session, prune_journeys, JourneyContext, QueryChain};
use crate::suggestion_store::{SharedStore, SuggestionRecord, SuggestionStore};

/// Reads a JSONL file, reporting the first bad line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, String> {
    let file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| format!("{}: {e}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<usize, String> {
    let ctx = |e: std::io::Error| format!("{}: {e}", path.display());
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(ctx)?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(ctx)?);
    let mut n = 0;
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| e.to_string())?;
        writeln!(w, "{line}").map_err(ctx)?;
        n += 1;
    }
    w.flush().map_err(ctx)?;
    Ok(n)
}

fn load_sessions(stage: &'static str, cfg: &PipelineConfig) -> Result<Vec<Session>, CliError> {
    let path = &cfg.paths.events;
    let file = File::open(path).map_err(|e| CliError::stage(stage, format!("{}: {e}", path.display())))?;
    let log = read_events(BufReader::new(file)).map_err(|e| CliError::stage(stage, e))?;
    let sessions = reconstruct_sessions(log.events);
    eprintln!(
        "{stage}: {} sessions from {} ({} malformed lines skipped)",
        sessions.len(),
        path.display(),
        log.skipped
    );
    Ok(sessions)
}

pub fn mine(cfg: &PipelineConfig) -> Result<Vec<QueryChain>, CliError> {
    let sessions = load_sessions("mine", cfg)?;
    let chains: Vec<QueryChain> = sessions.par_iter().flat_map_iter(mine_session).collect();
    write_jsonl(&cfg.paths.chains, &chains).map_err(|e| CliError::stage("mine", e))?;
    eprintln!(
        "mine: {} converted chains -> {}",
        chains.len(),
        cfg.paths.chains.display()
    );
    Ok(chains)
}

pub fn profiles(cfg: &PipelineConfig) -> Result<Profiles, CliError> {
    let sessions = load_sessions("profiles", cfg)?;
    let profiles = build_profiles(&sessions);
    write_jsonl(&cfg.paths.profiles, profiles.values()).map_err(|e| CliError::stage("profiles", e))?;
    eprintln!(
        "profiles: {} query profiles -> {}",
        profiles.len(),
        cfg.paths.profiles.display()
    );
    Ok(profiles)
}

fn load_profiles(stage: &'static str, cfg: &PipelineConfig) -> Result<ProfileSimilarity, CliError> {
    let list: Vec<QueryItemProfile> = read_jsonl(&cfg.paths.profiles).map_err(|e| CliError::stage(stage, e))?;
    let profiles = list.into_iter().map(|p| (p.query.clone(), p)).collect();
    Ok(ProfileSimilarity::new(profiles, cfg.similarity))
}

pub fn filter(cfg: &PipelineConfig) -> Result<Vec<JourneyContext>, CliError> {
    let chains: Vec<QueryChain> = read_jsonl(&cfg.paths.chains).map_err(|e| CliError::stage("filter", e))?;
    let sim = load_profiles("filter", cfg)?;
    let kept = filter_corpus(&chains, &sim, &cfg.intent);
    let journeys = prune_journeys(aggregate_journeys(&kept), &cfg.prune).map_err(|e| CliError::stage("filter", e))?;
    let journeys: Vec<JourneyContext> = journeys.into_values().collect();
    write_jsonl(&cfg.paths.journeys, &journeys).map_err(|e| CliError::stage("filter", e))?;
    eprintln!(
        "filter: {}/{} chains intent-consistent, {} journeys -> {}",
        kept.len(),
        chains.len(),
        journeys.len(),
        cfg.paths.journeys.display()
    );
    Ok(journeys)
}

fn llm_client(cfg: &PipelineConfig) -> Result<Box<dyn LlmClient>, CliError> {
    if cfg.alternator.mock {
        let path = cfg.paths.fixtures.as_ref().expect("validated: mock has fixtures");
        let file = File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mock = MockLlmClient::from_reader(BufReader::new(file)).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Box::new(mock))
    } else {
        let client = HttpLlmClient::new(cfg.alternator.client.clone()).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Box::new(client))
    }
}

pub fn alternate(cfg: &PipelineConfig) -> Result<Vec<SuggestionRecord>, CliError> {
    let journeys: Vec<JourneyContext> = read_jsonl(&cfg.paths.journeys).map_err(|e| CliError::stage("alternate", e))?;
    let few_shots: Vec<FewShot> = match &cfg.paths.few_shots {
        Some(p) => read_jsonl(p).map_err(CliError::Config)?,
        None => Vec::new(),
    };
    let sim = load_profiles("alternate", cfg)?;
    let client = llm_client(cfg)?;
    let alt_cfg = AlternatorConfig {
        k: cfg.alternator.k,
        strict_json: cfg.alternator.strict_json,
        diversity: cfg.diversity,
    };

    let results: Vec<_> = journeys
        .par_iter()
        .map(|j| alternate_journey(j, client.as_ref(), &few_shots, &alt_cfg, &sim, cfg.built_at_ms))
        .collect();

    let mut records = Vec::with_capacity(results.len());
    let mut fallbacks = 0;
    for (journey, result) in journeys.iter().zip(results) {
        let out = result
            .map_err(|e| CliError::stage("alternate", format!("journey {:?}: {e}", journey.transitional_query)))?;
        if let Some(reason) = &out.fallback {
            fallbacks += 1;
            eprintln!(
                "alternate: {:?} fell back to mined queries: {reason}",
                journey.transitional_query
            );
        }
        records.push(out.record);
    }
    write_jsonl(&cfg.paths.candidates, &records).map_err(|e| CliError::stage("alternate", e))?;
    eprintln!(
        "alternate: {} records ({} mined fallbacks) -> {}",
        records.len(),
        fallbacks,
        cfg.paths.candidates.display()
    );
    Ok(records)
}

pub fn build_store(cfg: &PipelineConfig) -> Result<SuggestionStore, CliError> {
    let records: Vec<SuggestionRecord> =
        read_jsonl(&cfg.paths.candidates).map_err(|e| CliError::stage("build-store", e))?;
    let mut store = SuggestionStore::new();
    for r in records {
        store.put(r).map_err(|e| CliError::stage("build-store", e))?;
    }
    if let Some(dir) = cfg.paths.store.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::stage("build-store", e))?;
    }
    store
        .snapshot(&cfg.paths.store)
        .map_err(|e| CliError::stage("build-store", e))?;
    eprintln!("build-store: {} records -> {}", store.len(), cfg.paths.store.display());
    Ok(store)
}

fn write_impressions(cfg: &PipelineConfig, name: &str, events: &[ImpressionEvent]) -> Result<(), CliError> {
    if let Some(dir) = &cfg.paths.impressions_dir {
        write_jsonl(&dir.join(name), events).map_err(|e| CliError::stage("eval", e))?;
    }
    Ok(())
}

/// Mined-only suggestions (the intent-filtered arm) against the store's records.
pub fn eval(cfg: &PipelineConfig) -> Result<EvalReport, CliError> {
    let stage = |e| CliError::stage("eval", e);
    let (baseline_events, variant_events) = match (&cfg.eval.baseline_log, &cfg.eval.variant_log) {
        (Some(b), Some(v)) => {
            let read = |p: &Path| -> Result<Vec<ImpressionEvent>, CliError> {
                let file = File::open(p).map_err(|e| stage(format!("{}: {e}", p.display())))?;
                read_impressions(BufReader::new(file)).map_err(|e| stage(e.to_string()))
            };
            (read(b)?, read(v)?)
        }
        _ => {
            let journeys: Vec<JourneyContext> = read_jsonl(&cfg.paths.journeys).map_err(stage)?;
            let store = SuggestionStore::load(&cfg.paths.store).map_err(|e| stage(e.to_string()))?;
            let model = &cfg.eval.click_model;
            let mined: Vec<SuggestionRecord> = journeys
                .iter()
                .filter_map(|j| mined_record(j, model.slots, cfg.built_at_ms))
                .collect();
            let llm: Vec<SuggestionRecord> = store.records().cloned().collect();
            let n = cfg.eval.n_impressions;
            let baseline =
                synthesize_replay(&mined, model, n, cfg.seed, &TokenSimilarity).map_err(|e| stage(e.to_string()))?;
            let variant =
                synthesize_replay(&llm, model, n, cfg.seed, &TokenSimilarity).map_err(|e| stage(e.to_string()))?;
            write_impressions(cfg, "baseline.jsonl", &baseline)?;
            write_impressions(cfg, "variant.jsonl", &variant)?;
            (baseline, variant)
        }
    };

    let report = EvalReport::new(
        "Intent filtered",
        compute_metrics(&baseline_events),
        "LLM Alternator",
        compute_metrics(&variant_events),
    );
    if let Some(dir) = cfg.paths.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| stage(e.to_string()))?;
    }
    fs::write(&cfg.paths.report, report.to_json() + "\n").map_err(|e| stage(e.to_string()))?;
    let table = report.to_table();
    fs::write(cfg.paths.report_table(), &table).map_err(|e| stage(e.to_string()))?;
    eprint!("{table}");
    Ok(report)
}

pub fn serve(cfg: &PipelineConfig) -> Result<(), CliError> {
    let store = SuggestionStore::load(&cfg.paths.store).map_err(|e| CliError::stage("serve", e))?;
    eprintln!("serve: {} records from {}", store.len(), cfg.paths.store.display());
    let addr = cfg.bind_addr()?;
    let watch = (cfg.serve.reload_interval_ms > 0).then(|| {
        (
            cfg.paths.store.clone(),
            Duration::from_millis(cfg.serve.reload_interval_ms),
        )
    });
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::stage("serve", e))?;
    runtime
        .block_on(crate::suggestion_store::serve(SharedStore::new(store), addr, watch))
        .map_err(|e| CliError::stage("serve", e))
}

pub fn pipeline(cfg: &PipelineConfig) -> Result<(), CliError> {
    mine(cfg)?;
    profiles(cfg)?;
    filter(cfg)?;
    alternate(cfg)?;
    build_store(cfg)?;
    eval(cfg)?;
    Ok(())
}
