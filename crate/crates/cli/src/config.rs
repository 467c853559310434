//! Plain-text `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use grammarscope_core::data::{Family, PhotometricParams};
use grammarscope_core::syntax::{LrSchedule, TraversalKind};
use grammarscope_core::validate::Method;

use crate::error::CliError;

pub struct KeyDef {
    pub name: &'static str,
    /// `None` marks a required key.
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> KeyDef {
    KeyDef { name, default: Some(default), help }
}

pub const KEYS: &[KeyDef] = &[
    KeyDef { name: "seed", default: None, help: "master seed; every stage derives its own seed from it" },
    key("family", "face", "synthetic dataset family: face | room"),
    key("height", "64", "image height in pixels"),
    key("width", "64", "image width in pixels"),
    key("n", "3000", "images generated"),
    key("split", "2000/500/500", "train/val/test image counts (sum <= n)"),
    key("feature_dim", "32", "pixel feature dimension of the segmentation model"),
    key("k", "10", "PiCIE cluster count K"),
    key("km_init", "5", "batches collected before the first clustering"),
    key("km_num", "4", "batches between re-clusterings"),
    key("km_iter", "30", "K-means iterations per clustering"),
    key("km_sample", "256", "feature rows per image kept for clustering (0 = all)"),
    key("picie_images", "200", "train images used for PiCIE (0 skips PiCIE)"),
    key("picie_epochs", "5", "PiCIE epochs"),
    key("picie_lr", "1e-3", "PiCIE learning rate"),
    key("picie_batch", "8", "PiCIE batch size"),
    key("jitter_gain", "0.1", "photometric jitter gain amplitude"),
    key("jitter_bias", "0.1", "photometric jitter bias amplitude"),
    key("geometric", "false", "random crop and flip on the second PiCIE stream"),
    key("crop_min", "0.5", "smallest PiCIE crop side as a fraction of the image side"),
    key("prior_images", "100", "labeled train images for the supervised fine-tune"),
    key("prior_epochs", "10", "supervised fine-tune epochs"),
    key("prior_lr", "1e-2", "supervised fine-tune learning rate"),
    key("prior_batch", "10", "supervised fine-tune batch size"),
    key("traversal", "five-crop", "patch traversal: five-crop | zig-zag"),
    key("ps", "8", "patch size in pixels"),
    key("circular", "false", "five-crop only: train on random rotations of the sequence"),
    key("mask_res", "0", "side of the encoded patch mask (0 = min(ps, 64))"),
    key("enc_dim", "128", "mask encoder output size"),
    key("hidden", "0", "LSTM hidden size (0 = enc_dim + C)"),
    key("syntax_epochs", "15", "syntax model epochs"),
    key("syntax_lr", "3e-3", "syntax model base learning rate"),
    key("schedule", "step:10:0.1", "learning-rate schedule: constant | step:EPOCH:GAMMA | multistep:E1,E2,...:GAMMA"),
    key("syntax_batch", "16", "syntax model batch size"),
    key("corruption", "shuffle", "corruption kind: shuffle | blackout | blur"),
    key("num_patch", "all", "patches corrupted per image: a count or all"),
    key("kernel_size", "7", "blur kernel size (odd)"),
    key("sigma", "3.0", "blur standard deviation"),
    key("num_perm", "3", "fake copies per puzzle"),
    key("puzzles", "200", "test images turned into puzzles"),
    key("method", "baseline", "grammar test: baseline | avg-semantics | miou"),
];

/// Every key with its default, one per line, for `--help`.
pub fn keys_help() -> String {
    let mut out = String::from("Config keys (key = value, one per line, # comments):\n");
    for k in KEYS {
        let default = k.default.map_or_else(|| "required".to_string(), |d| format!("default {d}"));
        let _ = writeln!(out, "  {:<14} {} [{}]", k.name, k.help, default);
    }
    out
}

/// Patches corrupted per image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NumPatch {
    All,
    Count(usize),
}

impl NumPatch {
    pub fn resolve(self, available: usize) -> usize {
        match self {
            NumPatch::All => available,
            NumPatch::Count(n) => n,
        }
    }

    pub fn as_option(self) -> Option<usize> {
        match self {
            NumPatch::All => None,
            NumPatch::Count(n) => Some(n),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorruptionChoice {
    Shuffle,
    Blackout,
    Blur,
}

impl CorruptionChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionChoice::Shuffle => "shuffle",
            CorruptionChoice::Blackout => "blackout",
            CorruptionChoice::Blur => "blur",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub family: Family,
    pub height: usize,
    pub width: usize,
    pub n: usize,
    pub split: [usize; 3],
    pub feature_dim: usize,
    pub k: usize,
    pub km_init: usize,
    pub km_num: usize,
    pub km_iter: usize,
    pub km_sample: usize,
    pub picie_images: usize,
    pub picie_epochs: usize,
    pub picie_lr: f64,
    pub picie_batch: usize,
    pub jitter: PhotometricParams,
    pub geometric: bool,
    pub crop_min: f64,
    pub prior_images: usize,
    pub prior_epochs: usize,
    pub prior_lr: f64,
    pub prior_batch: usize,
    pub traversal: TraversalKind,
    pub ps: usize,
    pub circular: bool,
    pub mask_res: usize,
    pub enc_dim: usize,
    pub hidden: usize,
    pub syntax_epochs: usize,
    pub syntax_lr: f64,
    pub schedule: LrSchedule,
    pub syntax_batch: usize,
    pub corruption: CorruptionChoice,
    pub num_patch: NumPatch,
    pub kernel_size: usize,
    pub sigma: f64,
    pub num_perm: usize,
    pub puzzles: usize,
    pub method: Method,
}

fn bad(key: &str, msg: impl Into<String>) -> CliError {
    CliError::Config(format!("{key}: {}", msg.into()))
}

fn parse_schedule(v: &str) -> Result<LrSchedule, CliError> {
    let err = || bad("schedule", format!("cannot parse '{v}'"));
    let parts: Vec<&str> = v.split(':').collect();
    let gamma = |s: &str| -> Result<f64, CliError> {
        let g: f64 = s.parse().map_err(|_| err())?;
        if !(g > 0.0 && g <= 1.0) {
            return Err(bad("schedule", format!("gamma {g} outside (0, 1]")));
        }
        Ok(g)
    };
    match parts.as_slice() {
        ["constant"] => Ok(LrSchedule::Constant),
        ["step", after, g] => Ok(LrSchedule::Step { after: after.parse().map_err(|_| err())?, gamma: gamma(g)? }),
        ["multistep", ms, g] => {
            let milestones = ms.split(',').map(|m| m.parse().map_err(|_| err())).collect::<Result<Vec<usize>, _>>()?;
            Ok(LrSchedule::MultiStep { milestones, gamma: gamma(g)? })
        }
        _ => Err(err()),
    }
}

/// Raw pairs with typed, range-checked accessors.
struct Pairs(BTreeMap<String, String>);

impl Pairs {
    fn raw(&self, key: &str) -> Result<&str, CliError> {
        if let Some(v) = self.0.get(key) {
            return Ok(v);
        }
        KEYS.iter()
            .find(|k| k.name == key)
            .and_then(|k| k.default)
            .ok_or_else(|| bad(key, "required key is missing"))
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let v = self.raw(key)?;
        v.parse().map_err(|_| bad(key, format!("cannot parse '{v}'")))
    }

    fn positive(&self, key: &str) -> Result<usize, CliError> {
        let v: usize = self.parse(key)?;
        if v == 0 {
            return Err(bad(key, "must be at least 1"));
        }
        Ok(v)
    }

    fn rate(&self, key: &str) -> Result<f64, CliError> {
        let v: f64 = self.parse(key)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(bad(key, format!("{v} must be positive and finite")));
        }
        Ok(v)
    }

    fn unit(&self, key: &str) -> Result<f64, CliError> {
        let v: f64 = self.parse(key)?;
        if !(0.0..=1.0).contains(&v) {
            return Err(bad(key, format!("{v} outside [0, 1]")));
        }
        Ok(v)
    }
}

impl RunConfig {
    /// Parses config text; later `overrides` replace file values.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim().to_string();
            if map.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key {k}", n + 1)));
            }
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| CliError::Config(format!("override '{o}': expected key=value")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        if let Some(k) = map.keys().find(|k| !KEYS.iter().any(|d| d.name == k.as_str())) {
            return Err(CliError::Config(format!("unknown key '{k}'")));
        }
        Self::from_pairs(&Pairs(map))
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, overrides)
    }

    fn from_pairs(p: &Pairs) -> Result<Self, CliError> {
        let family = match p.raw("family")? {
            "face" => Family::Face,
            "room" => Family::Room,
            other => return Err(bad("family", format!("unknown family '{other}' (face | room)"))),
        };
        let n = p.positive("n")?;
        let split_raw = p.raw("split")?;
        let parts = split_raw.split('/').map(|s| s.trim().parse::<usize>()).collect::<Result<Vec<_>, _>>();
        let split: [usize; 3] = match parts.as_deref() {
            Ok([a, b, c]) => [*a, *b, *c],
            _ => return Err(bad("split", format!("expected TRAIN/VAL/TEST, got '{split_raw}'"))),
        };
        if split[0] == 0 || split.iter().sum::<usize>() > n {
            return Err(bad("split", format!("{split_raw} needs a non-empty train split and must sum to at most n = {n}")));
        }
        let traversal: TraversalKind = p.raw("traversal")?.parse().map_err(|e| bad("traversal", format!("{e}")))?;
        if traversal == TraversalKind::FiveCrop && family != Family::Face {
            return Err(bad("traversal", "five-crop needs the landmark anchors of the face family"));
        }
        let circular: bool = p.parse("circular")?;
        if circular && traversal != TraversalKind::FiveCrop {
            return Err(bad("circular", "applies to five-crop only"));
        }
        let ps = p.positive("ps")?;
        let mask_res = match p.parse::<usize>("mask_res")? {
            0 => ps.min(64),
            r => r,
        };
        let corruption = match p.raw("corruption")? {
            "shuffle" => CorruptionChoice::Shuffle,
            "blackout" => CorruptionChoice::Blackout,
            "blur" => CorruptionChoice::Blur,
            other => return Err(bad("corruption", format!("unknown corruption '{other}' (shuffle | blackout | blur)"))),
        };
        let num_patch = match p.raw("num_patch")? {
            "all" => NumPatch::All,
            _ => NumPatch::Count(p.positive("num_patch")?),
        };
        let kernel_size = p.positive("kernel_size")?;
        if kernel_size % 2 == 0 {
            return Err(bad("kernel_size", "must be odd"));
        }
        let k = p.positive("k")?;
        if !(2..=256).contains(&k) {
            return Err(bad("k", "must be within 2..=256"));
        }
        let crop_min = p.unit("crop_min")?;
        if crop_min == 0.0 {
            return Err(bad("crop_min", "must be positive"));
        }
        Ok(Self {
            seed: p.parse("seed")?,
            family,
            height: p.positive("height")?,
            width: p.positive("width")?,
            n,
            split,
            feature_dim: p.positive("feature_dim")?,
            k,
            km_init: p.positive("km_init")?,
            km_num: p.positive("km_num")?,
            km_iter: p.positive("km_iter")?,
            km_sample: p.parse("km_sample")?,
            picie_images: p.parse("picie_images")?,
            picie_epochs: p.parse("picie_epochs")?,
            picie_lr: p.rate("picie_lr")?,
            picie_batch: p.positive("picie_batch")?,
            jitter: PhotometricParams { gain: p.unit("jitter_gain")? as f32, bias: p.unit("jitter_bias")? as f32 },
            geometric: p.parse("geometric")?,
            crop_min,
            prior_images: p.positive("prior_images")?,
            prior_epochs: p.parse("prior_epochs")?,
            prior_lr: p.rate("prior_lr")?,
            prior_batch: p.positive("prior_batch")?,
            traversal,
            ps,
            circular,
            mask_res,
            enc_dim: p.positive("enc_dim")?,
            hidden: p.parse("hidden")?,
            syntax_epochs: p.parse("syntax_epochs")?,
            syntax_lr: p.rate("syntax_lr")?,
            schedule: parse_schedule(p.raw("schedule")?)?,
            syntax_batch: p.positive("syntax_batch")?,
            corruption,
            num_patch,
            kernel_size,
            sigma: p.rate("sigma")?,
            num_perm: p.positive("num_perm")?,
            puzzles: p.positive("puzzles")?,
            method: p.raw("method")?.parse().map_err(|e| bad("method", format!("{e}")))?,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.family.num_classes()
    }

    /// Name of the current corruption scenario, e.g. `shuffle-all`.
    pub fn scenario_tag(&self) -> String {
        let n = match self.num_patch {
            NumPatch::All => "all".to_string(),
            NumPatch::Count(n) => n.to_string(),
        };
        match self.corruption {
            CorruptionChoice::Blur => format!("blur-{n}-k{}-s{}", self.kernel_size, self.sigma),
            c => format!("{}-{n}", c.as_str()),
        }
    }
}
