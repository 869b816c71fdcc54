pub mod assemble;
pub mod backend;
pub mod dataset;
pub mod error;
pub mod evalkit;
pub mod instance;
pub mod interactions;
pub mod label;
pub mod nle;
pub mod pipeline;
pub mod relations;
pub mod report;
pub mod steering;
pub mod synthetic;
pub mod tokenizer;
pub mod uncertainty;

pub use assemble::{assemble_input, AssembledInput, PartRange, PartSpan, PromptTemplate};
pub use backend::{AttentionMatrix, Backend, DecodeParams, HeadId, MockBackend, MockFixture, SteeringSpec};
pub use error::{Error, Result};
pub use instance::{Instance, PartId, PartPair};
pub use interactions::{InteractionSet, SpanInteraction};
pub use label::{Label, LabelMap};
pub use nle::{NLEOutput, PromptKind};
pub use relations::RelationLabel;
pub use tokenizer::{Tokenizer, WordTokenizer};
pub use uncertainty::{LabelDistribution, UncertaintyScore};
