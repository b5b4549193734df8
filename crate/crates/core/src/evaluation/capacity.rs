use std::fmt::Write;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::networks::{build_discriminator, build_generator_pair, count_parameters, NetworkConfig, SharingMode};
use crate::{Error, Result};

/// How many separately trained models a method needs for `m` domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelCount {
    /// One model per ordered pair of domains.
    OrderedPairs,
    /// One model per unordered pair.
    UnorderedPairs,
    /// One model per domain.
    PerDomain,
    Single,
}

impl ModelCount {
    pub fn evaluate(self, m: usize) -> usize {
        match self {
            ModelCount::OrderedPairs => m * (m - 1),
            ModelCount::UnorderedPairs => m * (m - 1) / 2,
            ModelCount::PerDomain => m,
            ModelCount::Single => 1,
        }
    }

    pub fn formula(self) -> &'static str {
        match self {
            ModelCount::OrderedPairs => "m(m-1)",
            ModelCount::UnorderedPairs => "m(m-1)/2",
            ModelCount::PerDomain => "m",
            ModelCount::Single => "1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityEntry {
    pub method: String,
    pub model_count: ModelCount,
    pub models: usize,
    pub parameters_per_model: u64,
    /// Counted from our own networks rather than quoted.
    pub measured: bool,
}

impl CapacityEntry {
    pub fn total(&self) -> u64 {
        self.models as u64 * self.parameters_per_model
    }
}

/// Published per-model sizes of the baselines on 256x256 faces.
const BASELINES: [(&str, ModelCount, u64); 8] = [
    ("pix2pix", ModelCount::OrderedPairs, 57_200_000),
    ("BicycleGAN", ModelCount::OrderedPairs, 64_300_000),
    ("CycleGAN", ModelCount::UnorderedPairs, 52_600_000),
    ("DiscoGAN", ModelCount::UnorderedPairs, 16_600_000),
    ("DualGAN", ModelCount::UnorderedPairs, 178_700_000),
    ("DistanceGAN", ModelCount::UnorderedPairs, 52_600_000),
    ("ComboGAN", ModelCount::PerDomain, 14_400_000),
    ("StarGAN", ModelCount::Single, 53_200_000),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub m: usize,
    pub entries: Vec<CapacityEntry>,
}

/// Trainable parameters of both generators plus the discriminator.
pub fn model_parameters(net: &NetworkConfig, mode: SharingMode) -> Result<u64> {
    let pair = build_generator_pair(net, mode, DType::F32)?;
    let d = build_discriminator(&net.discriminator(), "disc", DType::F32)?;
    Ok(count_parameters(&[&pair, &d]) as u64)
}

/// Model counts and sizes for `m` domains. Baseline sizes are the published
/// constants; our rows are counted from networks built with `net` and `m`.
pub fn capacity_report(m: usize, net: &NetworkConfig) -> Result<CapacityReport> {
    if m < 2 {
        return Err(Error::Config(format!("capacity needs at least 2 domains, got {m}")));
    }
    let net = NetworkConfig { m, ..*net };
    net.validate()?;
    let mut entries: Vec<CapacityEntry> = BASELINES
        .iter()
        .map(|&(method, model_count, params)| CapacityEntry {
            method: method.into(),
            model_count,
            models: model_count.evaluate(m),
            parameters_per_model: params,
            measured: false,
        })
        .collect();
    for mode in [SharingMode::Full, SharingMode::Partial, SharingMode::None] {
        entries.push(CapacityEntry {
            method: format!("G2GAN ({mode} sharing)"),
            model_count: ModelCount::Single,
            models: 1,
            parameters_per_model: model_parameters(&net, mode)?,
            measured: true,
        });
    }
    Ok(CapacityReport { m, entries })
}

fn millions(n: u64) -> String {
    format!("{:.1}M", n as f64 / 1e6)
}

impl CapacityReport {
    pub fn to_text(&self) -> String {
        let header = ["method", "# models", "params/model", "total"];
        let rows: Vec<[String; 4]> = self
            .entries
            .iter()
            .map(|e| {
                [
                    e.method.clone(),
                    format!("{} = {}", e.model_count.formula(), e.models),
                    millions(e.parameters_per_model),
                    millions(e.total()),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for r in &rows {
            for (w, cell) in widths.iter_mut().zip(r) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = format!("model capacity for m = {}\n", self.m);
        let line = |cells: [&str; 4]| {
            format!(
                "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}\n",
                cells[0],
                cells[1],
                cells[2],
                cells[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2],
                w3 = widths[3]
            )
        };
        out.push_str(&line(header));
        for r in &rows {
            out.push_str(&line([&r[0], &r[1], &r[2], &r[3]]));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,formula,models,parameters_per_model,total,measured\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.method,
                e.model_count.formula(),
                e.models,
                e.parameters_per_model,
                e.total(),
                e.measured
            );
        }
        out
    }
}
