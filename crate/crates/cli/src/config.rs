//! Flat TOML run configuration. Keys mirror the long flag names with `-`
//! replaced by `_`; a flag given on the command line always wins.
//!
//! ```toml
//! seed = 3
//! lr = 0.1
//! loss = "combined"
//! width = 10
//! masks = "data/masks"
//! ```

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, Context};
use bsn_core::kernels::{GlobalMode, NormMode};
use bsn_core::net::LossMode;
use serde::{Deserialize, Deserializer};

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub iterations: Option<usize>,
    pub phase2_iterations: Option<usize>,
    pub crop: Option<usize>,
    pub flip: Option<f64>,
    #[serde(default, deserialize_with = "parse_opt")]
    pub loss: Option<LossMode>,
    pub width: Option<u32>,
    #[serde(default, deserialize_with = "parse_opt")]
    pub norm: Option<NormMode>,
    #[serde(default, deserialize_with = "parse_opt")]
    pub mode: Option<GlobalMode>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub lambda: Option<f64>,
    pub band_width: Option<u32>,
    pub images: Option<PathBuf>,
    pub masks: Option<PathBuf>,
    pub attributes: Option<PathBuf>,
}

fn parse_opt<'de, D, T>(d: D) -> Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: FromStr,
    T::Err: Display,
{
    Option::<String>::deserialize(d)?
        .map(|s| s.parse().map_err(serde::de::Error::custom))
        .transpose()
}

/// Parses config text. Errors are single-line and carry the line number.
pub fn parse_config(text: &str) -> anyhow::Result<FileConfig> {
    toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        let msg = e.message().replace('\n', " ");
        match line {
            Some(l) => anyhow!("line {l}: {msg}"),
            None => anyhow!("{msg}"),
        }
    })
}

pub fn load_config(path: &Path) -> anyhow::Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
    parse_config(&text).with_context(|| format!("{}", path.display()))
}
