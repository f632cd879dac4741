//! Experiment matrix and its key=value override file.

use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    H3,
    MqFf,
    MqAd,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::H3, Mode::MqFf, Mode::MqAd];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::H3 => "h3",
            Self::MqFf => "mq-ff",
            Self::MqAd => "mq-ad",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = MatrixError;

    fn from_str(s: &str) -> Result<Self, MatrixError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "h3" => Ok(Self::H3),
            "mq-ff" | "mqff" => Ok(Self::MqFf),
            "mq-ad" | "mqad" => Ok(Self::MqAd),
            other => Err(MatrixError::Invalid(format!("unknown mode {other:?}"))),
        }
    }
}

pub fn parse_modes(s: &str) -> Result<Vec<Mode>, MatrixError> {
    let modes = s.split(',').filter(|m| !m.trim().is_empty()).map(str::parse).collect::<Result<Vec<_>, _>>()?;
    if modes.is_empty() {
        return Err(MatrixError::Invalid("no modes given".into()));
    }
    Ok(modes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExperimentClass {
    Load,
    Rtt,
    Size,
    Loss,
}

impl ExperimentClass {
    pub const ALL: [ExperimentClass; 4] = [Self::Load, Self::Rtt, Self::Size, Self::Loss];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Load => "load",
            Self::Rtt => "rtt",
            Self::Size => "size",
            Self::Loss => "loss",
        }
    }

    /// Axis label for the swept variable.
    pub fn axis(self) -> &'static str {
        match self {
            Self::Load => "messages",
            Self::Rtt => "rtt_ms",
            Self::Size => "message_bytes",
            Self::Loss => "loss_pct",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub class: ExperimentClass,
    pub mode: Mode,
    pub message_count: u32,
    pub message_size: usize,
    pub interval_ms: u64,
    pub rtt_ms: u64,
    pub loss_pct: f64,
    pub iterations: u32,
    pub seed_base: u64,
}

impl ExperimentSpec {
    pub fn seed(&self, iteration: u32) -> u64 {
        self.seed_base.wrapping_add(iteration as u64)
    }

    /// Identifies the network/workload point; shared across modes.
    pub fn id(&self) -> String {
        format!(
            "{}-n{}-s{}-rtt{}-loss{}",
            self.class.as_str(),
            self.message_count,
            self.message_size,
            self.rtt_ms,
            self.loss_pct
        )
    }

    /// Value of the swept variable.
    pub fn x(&self) -> f64 {
        match self.class {
            ExperimentClass::Load => self.message_count as f64,
            ExperimentClass::Rtt => self.rtt_ms as f64,
            ExperimentClass::Size => self.message_size as f64,
            ExperimentClass::Loss => self.loss_pct,
        }
    }

    pub fn validate(&self) -> Result<(), MatrixError> {
        if self.iterations < 1 {
            return Err(MatrixError::Invalid("iterations must be at least 1".into()));
        }
        if self.message_count < 1 {
            return Err(MatrixError::Invalid("message_count must be at least 1".into()));
        }
        if !(0.0..=100.0).contains(&self.loss_pct) {
            return Err(MatrixError::Invalid("loss_pct must be within [0, 100]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MatrixError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassConfig {
    pub enabled: bool,
    pub counts: Vec<u32>,
    pub sizes: Vec<usize>,
    pub rtts: Vec<u64>,
    pub losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixConfig {
    pub modes: Vec<Mode>,
    pub iterations: u32,
    pub interval_ms: u64,
    pub seed_base: u64,
    pub load: ClassConfig,
    pub rtt: ClassConfig,
    pub size: ClassConfig,
    pub loss: ClassConfig,
}

const NBIOT_RTT_MS: u64 = 2000;

impl Default for MatrixConfig {
    fn default() -> Self {
        let class = |counts: &[u32], sizes: &[usize], rtts: &[u64], losses: &[f64]| ClassConfig {
            enabled: true,
            counts: counts.to_vec(),
            sizes: sizes.to_vec(),
            rtts: rtts.to_vec(),
            losses: losses.to_vec(),
        };
        Self {
            modes: Mode::ALL.to_vec(),
            iterations: 20,
            interval_ms: 100,
            seed_base: 1,
            load: class(&[1, 10, 25, 50, 100], &[32], &[NBIOT_RTT_MS], &[0.0]),
            rtt: class(&[50], &[32], &[0, 500, 1000, 1500, 2000], &[0.0]),
            size: class(&[50], &[32, 2048, 4096], &[NBIOT_RTT_MS], &[0.0]),
            loss: class(&[50], &[2048], &[NBIOT_RTT_MS], &[0.0, 2.0, 4.0, 6.0]),
        }
    }
}

fn list<T: FromStr>(v: &str, line: usize) -> Result<Vec<T>, MatrixError> {
    v.split(',')
        .map(|x| {
            x.trim().parse().map_err(|_| MatrixError::Syntax { line, msg: format!("bad list item {x:?}") })
        })
        .collect()
}

fn scalar<T: FromStr>(v: &str, line: usize) -> Result<T, MatrixError> {
    v.trim().parse().map_err(|_| MatrixError::Syntax { line, msg: format!("bad value {v:?}") })
}

impl MatrixConfig {
    /// Parses `[section]` headers and `key = value` lines over the defaults.
    /// Sections: `global`, `load`, `rtt`, `size`, `loss`.
    pub fn parse(text: &str) -> Result<Self, MatrixError> {
        let mut cfg = Self::default();
        let mut section = "global".to_string();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            if let Some(name) = l.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                section = name.trim().to_string();
                if !["global", "load", "rtt", "size", "loss"].contains(&section.as_str()) {
                    return Err(MatrixError::Syntax { line, msg: format!("unknown section {section:?}") });
                }
                continue;
            }
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| MatrixError::Syntax { line, msg: "expected key = value".into() })?;
            let (k, v) = (k.trim(), v.trim());
            if section == "global" {
                match k {
                    "modes" => cfg.modes = parse_modes(v)?,
                    "iterations" => cfg.iterations = scalar(v, line)?,
                    "interval_ms" => cfg.interval_ms = scalar(v, line)?,
                    "seed_base" => cfg.seed_base = scalar(v, line)?,
                    _ => return Err(MatrixError::Syntax { line, msg: format!("unknown key {k:?}") }),
                }
                continue;
            }
            let class = match section.as_str() {
                "load" => &mut cfg.load,
                "rtt" => &mut cfg.rtt,
                "size" => &mut cfg.size,
                _ => &mut cfg.loss,
            };
            match k {
                "enabled" => class.enabled = scalar(v, line)?,
                "counts" | "count" => class.counts = list(v, line)?,
                "sizes" | "size" => class.sizes = list(v, line)?,
                "rtts" | "rtt_ms" => class.rtts = list(v, line)?,
                "losses" | "loss_pct" => class.losses = list(v, line)?,
                _ => return Err(MatrixError::Syntax { line, msg: format!("unknown key {k:?}") }),
            }
        }
        Ok(cfg)
    }

    pub fn class(&self, c: ExperimentClass) -> &ClassConfig {
        match c {
            ExperimentClass::Load => &self.load,
            ExperimentClass::Rtt => &self.rtt,
            ExperimentClass::Size => &self.size,
            ExperimentClass::Loss => &self.loss,
        }
    }

    pub fn build(&self) -> Result<Vec<ExperimentSpec>, MatrixError> {
        let mut out = Vec::new();
        for class in ExperimentClass::ALL {
            let c = self.class(class);
            if !c.enabled {
                continue;
            }
            for &count in &c.counts {
                for &size in &c.sizes {
                    for &rtt in &c.rtts {
                        for &loss in &c.losses {
                            for &mode in &self.modes {
                                let spec = ExperimentSpec {
                                    class,
                                    mode,
                                    message_count: count,
                                    message_size: size,
                                    interval_ms: self.interval_ms,
                                    rtt_ms: rtt,
                                    loss_pct: loss,
                                    iterations: self.iterations,
                                    seed_base: self.seed_base,
                                };
                                spec.validate()?;
                                out.push(spec);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// The default experiment matrix.
pub fn matrix() -> Vec<ExperimentSpec> {
    MatrixConfig::default().build().expect("default matrix is valid")
}
