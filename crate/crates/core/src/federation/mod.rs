//! The round protocol: message framing, transports, communication
//! accounting, privacy noise and the label-inference evaluator.

mod attack;
mod comm;
mod noise;
mod protocol;
mod transport;
mod wire;

pub use attack::label_inference_attack;
pub use comm::{comm_cost, CommCost, CommLog, CommRecord, Direction, Phase};
pub use noise::{inject_noise, NoiseConfig, NoiseTarget};
pub use protocol::{init_params, train_head, FedConfig, FedState, Federation, PriorState, RoundSummary};
pub use transport::{inproc_channel, open_channels, socket_channel, Channel, InprocLink, Link, TcpLink, TransportKind};
pub use wire::{decode_message, encode_message, frame_len_for, RoundMessage, FRAME_HEADER, TAG_PROTO_DOWN, TAG_REPR_UP};
