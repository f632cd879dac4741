//! Publish-subscribe over HTTP/3 for constrained links, with an
//! MQTT-over-QUIC baseline, a datagram impairment proxy and a benchmark
//! harness.

pub mod auth;
pub mod bench;
pub mod broker;
pub mod events;
pub mod governor;
pub mod h3;
pub mod mq;
pub mod netlab;
pub mod pubsub;
pub mod quic;
pub mod tuning;
