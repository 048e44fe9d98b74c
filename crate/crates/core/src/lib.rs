//! Query-journey mining and related-search suggestion engine.
//!
//! The batch side reads behavioral logs, mines source → transitional → converging
//! query chains, keeps the intent-consistent part of each chain, aggregates journey
//! contexts per transitional query and asks an LLM for diverse alternate converging
//! queries. The serving side loads the resulting suggestion records and answers
//! related-search lookups over HTTP. An offline harness compares suggestion sets by
//! CTR and conversion rate.

pub mod cli;
pub mod eval_harness;
pub mod event_log;
pub mod intent_filter;
pub mod llm_alternator;
pub mod query_repr;
pub mod sequence_miner;
pub mod suggestion_store;
