//! Publish-subscribe over HTTP/3.

pub mod buffer;
pub mod client;
pub mod frame;
pub mod huffman;
pub mod qpack;
pub mod route;
pub mod server;

pub use buffer::WriteBufferPolicy;
pub use client::{ClientError, H3ClientConfig, H3Session, H3Subscription, SubscribedEvent, SubscriptionEnd};
pub use route::{Method, RequestRoute};
pub use server::serve_broker;
