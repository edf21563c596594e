//! Boundary to the system under test. Every SUT implements [`SutBinding`];
//! the reference store is available in-process or over the wire protocol
//! described in `docs/wire-protocol.md`.

mod external;
mod server;
pub mod wire;

use serde::{Deserialize, Serialize};

use crate::error::SutError;
use crate::records::{AnnotatedRecord, EventReport, Query, QueryResult};
use crate::store::{InsertAck, TimeSeriesStore};

pub use external::ExternalBinding;
pub use server::{serve, spawn_server, ServerHandle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub supports_event_reports: bool,
    pub supports_scan: bool,
}

impl Default for Capabilities {
    fn default() -> Self {
        Capabilities {
            supports_event_reports: true,
            supports_scan: true,
        }
    }
}

/// Data handed to the SUT for ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestItem {
    Record(AnnotatedRecord),
    EventReport(EventReport),
}

pub trait SutBinding: Send {
    fn capabilities(&self) -> Capabilities;

    fn ingest(&mut self, item: &IngestItem) -> Result<InsertAck, SutError>;

    /// With `materialize` false the SUT may return counts only.
    fn query(&mut self, q: &Query, materialize: bool) -> Result<QueryResult, SutError>;
}

/// Direct calls into a reference store owned by the harness.
#[derive(Debug, Clone)]
pub struct InProcessBinding {
    pub store: TimeSeriesStore,
}

impl InProcessBinding {
    pub fn new(store: TimeSeriesStore) -> Self {
        InProcessBinding { store }
    }
}

/// Applies an ingest item to a store; shared by the in-process binding and
/// the server.
pub fn apply_ingest(store: &mut TimeSeriesStore, item: &IngestItem) -> InsertAck {
    match item {
        IngestItem::Record(r) => store.insert(r.clone()),
        IngestItem::EventReport(e) => InsertAck {
            instance: store.archive(e),
            evicted: Vec::new(),
        },
    }
}

impl SutBinding for InProcessBinding {
    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    fn ingest(&mut self, item: &IngestItem) -> Result<InsertAck, SutError> {
        Ok(apply_ingest(&mut self.store, item))
    }

    fn query(&mut self, q: &Query, materialize: bool) -> Result<QueryResult, SutError> {
        Ok(self.store.query(q, materialize))
    }
}
