//! MQTT 3.1.1 subset over one QUIC stream, used as a comparison baseline.

pub mod client;
pub mod packet;
pub mod server;

pub use client::{MqClientConfig, MqError, MqSession};
pub use packet::{MqttError, MqttPacket, QosMode};
pub use server::serve_mq_broker;
