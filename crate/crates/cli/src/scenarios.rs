use std::path::Path;

use anyhow::{Context, Result};
use ulps_core::Scenario;

/// Scenarios shipped with the binary, by name.
pub const BUNDLED: [(&str, &str); 3] = [
    ("uex_noreflector", include_str!("../scenarios/uex_noreflector.json")),
    ("uex_reflector", include_str!("../scenarios/uex_reflector.json")),
    ("box_room_images", include_str!("../scenarios/box_room_images.json")),
];

pub fn parse(json: &str) -> Result<Scenario> {
    let scenario: Scenario = serde_json::from_str(json).context("invalid scenario")?;
    scenario.validate().context("invalid scenario")?;
    Ok(scenario)
}

pub fn bundled(name: &str) -> Option<Result<Scenario>> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, json)| parse(json))
}

/// A bundled scenario name, or the path of a scenario JSON file.
pub fn load(name_or_path: &str) -> Result<Scenario> {
    if let Some(s) = bundled(name_or_path) {
        return s;
    }
    let path = Path::new(name_or_path);
    let json = std::fs::read_to_string(path).with_context(|| {
        let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
        format!(
            "cannot read scenario file {} (bundled scenarios: {})",
            path.display(),
            names.join(", ")
        )
    })?;
    parse(&json).with_context(|| format!("in {}", path.display()))
}
