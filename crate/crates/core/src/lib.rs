//! Intent-based RAN management: formalized intents are translated into
//! transmit-power strategies by an agent pipeline and applied to a
//! simulated RAN over an O1-style CM/PM interface until the intent is met,
//! found already satisfied, or abandoned at a plateau.

pub mod agents;
pub mod closed_loop;
pub mod history;
pub mod inference;
pub mod intent;
pub mod o1;
pub mod prompt;
pub mod sim;
