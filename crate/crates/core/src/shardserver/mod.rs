//! Network-facing shard node: the wire protocol, request dispatch to the
//! transaction manager and proof generator, and a TCP front end.

mod net;
mod node;
pub mod protocol;

pub use net::ShardServer;
pub(crate) use net::read_frames;
pub use node::{EquivocatingShard, Fault, Service, ShardConfig, ShardNode};
pub use protocol::{ErrorCode, Frame, Reply, Request};
