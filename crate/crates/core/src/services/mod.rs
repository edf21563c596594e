//! Reference implementations of the pipeline services, written as message
//! handlers with declared compute costs: gateway aggregation and event
//! detection, windowed inference on premises, and the local warning path.

mod gateway;
mod inference;
mod quorum;

pub use gateway::{ForwardAction, GatewayService, RoutingError};
pub use inference::{logistic, Annotator, InferenceOutcome, InferenceService, LogisticSurrogate, SiteWindow, Z_SCALE};
pub use quorum::{CollectionTrigger, QuorumCounter};
