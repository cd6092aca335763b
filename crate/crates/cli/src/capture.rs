//! Receiver captures: a CSV body with one sample per line under a `sample`
//! header row, plus a JSON header in a sidecar file with the same stem.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFormat {
    F64,
    /// Raw signed ADC counts.
    I16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureHeader {
    pub rate_hz: f64,
    pub channels: usize,
    pub sample_format: SampleFormat,
    /// Samples per processing window; one frame when absent.
    #[serde(default)]
    pub window_samples: Option<usize>,
    /// Number of windows the body should hold, if known.
    #[serde(default)]
    pub buffers: Option<usize>,
}

impl CaptureHeader {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.rate_hz > 0.0,
            "capture header: rate_hz must be positive, got {}",
            self.rate_hz
        );
        ensure!(
            self.channels == 1,
            "capture header: expected 1 channel, got {}",
            self.channels
        );
        if let Some(w) = self.window_samples {
            ensure!(w > 0, "capture header: window_samples must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    pub header: CaptureHeader,
    pub samples: Vec<f64>,
}

/// `capture.csv` → `capture.json`.
pub fn sidecar_path(body: &Path) -> PathBuf {
    body.with_extension("json")
}

impl Capture {
    pub fn read(body: &Path) -> Result<Self> {
        let side = sidecar_path(body);
        let header_json =
            std::fs::read_to_string(&side).with_context(|| format!("cannot read capture header {}", side.display()))?;
        let header: CaptureHeader = serde_json::from_str(&header_json)
            .with_context(|| format!("malformed capture header {}", side.display()))?;
        header.validate()?;
        let text = std::fs::read_to_string(body).with_context(|| format!("cannot read capture {}", body.display()))?;
        let samples = parse_body(&text, header.sample_format).with_context(|| format!("in {}", body.display()))?;
        ensure!(!samples.is_empty(), "capture {} holds no samples", body.display());
        Ok(Self { header, samples })
    }

    pub fn write(&self, body: &Path) -> Result<()> {
        self.header.validate()?;
        let mut text = String::with_capacity(self.samples.len() * 24 + 8);
        text.push_str("sample\n");
        for x in &self.samples {
            match self.header.sample_format {
                SampleFormat::F64 => writeln!(text, "{x}"),
                SampleFormat::I16 => writeln!(text, "{}", *x as i16),
            }
            .expect("writing to a String");
        }
        std::fs::write(body, text).with_context(|| format!("cannot write {}", body.display()))?;
        let side = sidecar_path(body);
        let json = serde_json::to_string_pretty(&self.header)? + "\n";
        std::fs::write(&side, json).with_context(|| format!("cannot write {}", side.display()))?;
        Ok(())
    }
}

fn parse_body(text: &str, format: SampleFormat) -> Result<Vec<f64>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "sample" => {}
        Some((_, h)) => bail!("expected header row `sample`, found `{h}`"),
        None => bail!("empty capture"),
    }
    let mut samples = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let x = match format {
            SampleFormat::F64 => line.parse::<f64>().ok().filter(|x| x.is_finite()),
            SampleFormat::I16 => line.parse::<i16>().ok().map(f64::from),
        };
        match x {
            Some(x) => samples.push(x),
            None => bail!("line {}: cannot parse `{line}` as {format:?}", i + 1),
        }
    }
    Ok(samples)
}
