//! Identity-harm extraction from AI incident reports, counterfactual
//! relevance filtering, and exact intersectional metrics.
//!
//! The stages in [`pipeline`] tie the modules together: [`prompting`] and
//! [`extraction`] turn a [`corpus`] into typed subjects, [`relevance`] keeps
//! causally relevant markers, [`normalization`] groups raw values,
//! [`metrics`] counts them and [`reporting`] writes tables and charts.

pub mod agreement;
pub mod corpus;
pub mod extraction;
pub mod metrics;
pub mod names;
pub mod normalization;
pub mod pipeline;
pub mod prompting;
pub mod relevance;
pub mod reporting;
pub mod rubric;
pub mod synth;
