#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::Args;
use nbquic::events::EventRecorder;
use nbquic::quic::{QlogSink, QlogTarget, ServerTrust};
use nbquic::tuning::TuningProfile;

pub type CliResult<T = ()> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

pub fn init_logging() {
    let level = match std::env::var("NBQUIC_LOG").as_deref() {
        Ok("debug") => tracing::Level::DEBUG,
        Ok("trace") => tracing::Level::TRACE,
        Ok("warn") => tracing::Level::WARN,
        _ => tracing::Level::INFO,
    };
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).with_max_level(level).try_init();
}

#[derive(Args, Debug, Clone)]
pub struct TuningArgs {
    /// Network profile the transport is tuned for (nbiot2, loopback).
    #[arg(long, default_value = "nbiot2")]
    pub profile: String,
    /// File of `key = value` tuning overrides.
    #[arg(long)]
    pub tuning: Option<PathBuf>,
}

impl TuningArgs {
    pub fn load(&self) -> CliResult<TuningProfile> {
        let mut t = TuningProfile::by_name(&self.profile)?;
        if let Some(p) = &self.tuning {
            t.load_overrides(p)?;
        }
        Ok(t)
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrustArgs {
    /// PEM file with the broker certificate (or its CA).
    #[arg(long, conflicts_with = "insecure")]
    pub ca: Option<PathBuf>,
    /// Skip certificate verification.
    #[arg(long)]
    pub insecure: bool,
    /// TLS server name; defaults to the host part of the address.
    #[arg(long)]
    pub server_name: Option<String>,
}

impl TrustArgs {
    pub fn trust(&self) -> CliResult<ServerTrust> {
        match (&self.ca, self.insecure) {
            (Some(p), _) => Ok(ServerTrust::from_pem_file(p)?),
            (None, true) => Ok(ServerTrust::InsecureAnyCert),
            (None, false) => Err("either --ca <pem> or --insecure is required".into()),
        }
    }
}

/// Splits `host:port` and resolves it.
pub async fn resolve(hostport: &str) -> CliResult<(String, SocketAddr)> {
    let host = match hostport.rsplit_once(':') {
        Some((h, _)) => h.trim_start_matches('[').trim_end_matches(']').to_string(),
        None => return Err(format!("{hostport:?} is not host:port").into()),
    };
    let addr = tokio::net::lookup_host(hostport)
        .await?
        .next()
        .ok_or_else(|| format!("{hostport} did not resolve"))?;
    Ok((host, addr))
}

pub fn unspecified_for(addr: &SocketAddr) -> SocketAddr {
    if addr.is_ipv4() { "0.0.0.0:0".parse().unwrap() } else { "[::]:0".parse().unwrap() }
}

pub fn client_qlog(dir: Option<&Path>, name: &str) -> CliResult<QlogTarget> {
    match dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            let sink = QlogSink::create(&d.join(format!("{name}.qlog")), name, "client", std::time::Instant::now())?;
            Ok(QlogTarget::Shared(sink))
        }
        None => Ok(QlogTarget::Off),
    }
}

pub fn write_events(path: Option<&Path>, events: &EventRecorder) -> CliResult {
    if let Some(p) = path {
        std::fs::write(p, events.snapshot().sorted().to_csv()?)?;
    }
    Ok(())
}

pub fn payload(size: usize, seq: u32) -> Vec<u8> {
    let mut p = vec![b'.'; size];
    let tag = seq.to_string();
    let n = tag.len().min(size);
    p[..n].copy_from_slice(&tag.as_bytes()[..n]);
    p
}
