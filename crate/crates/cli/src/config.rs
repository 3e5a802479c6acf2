//! Model selection: named variants, configuration ids and JSON files.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use dite_core::network::ModelConfig;

use crate::CliError;

/// Directory searched for relative `--config` paths that do not exist as
/// given.
pub const CONFIG_DIR_ENV: &str = "DITE_CONFIG_DIR";

/// `18`, `30` or any configuration id (`dite18`, `lite18+acm`, `tiny`, ...).
pub fn from_variant(variant: &str) -> Result<ModelConfig, CliError> {
    let id = match variant {
        "18" => "dite18",
        "30" => "dite30",
        other => other,
    };
    ModelConfig::from_id(id).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn locate(path: &Path) -> Result<PathBuf, CliError> {
    if path.exists() {
        return Ok(path.to_path_buf());
    }
    if path.is_relative() {
        if let Some(dir) = env::var_os(CONFIG_DIR_ENV) {
            let p = Path::new(&dir).join(path);
            if p.exists() {
                return Ok(p);
            }
        }
    }
    Err(CliError::Usage(format!(
        "configuration file {} not found (also searched ${CONFIG_DIR_ENV})",
        path.display()
    )))
}

pub fn from_file(path: &Path) -> Result<ModelConfig, CliError> {
    let path = locate(path)?;
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let cfg: ModelConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    cfg.validate()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

/// Parses `HxW`.
pub fn parse_input(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let h = h
        .trim()
        .parse()
        .map_err(|_| format!("bad height in `{s}`"))?;
    let w = w
        .trim()
        .parse()
        .map_err(|_| format!("bad width in `{s}`"))?;
    Ok((h, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_and_inputs() {
        assert_eq!(from_variant("18").unwrap(), ModelConfig::dite18());
        assert_eq!(from_variant("30").unwrap(), ModelConfig::dite30());
        assert!(from_variant("19").is_err());
        assert_eq!(parse_input("256x192"), Ok((256, 192)));
        assert!(parse_input("256").is_err());
    }

    #[test]
    fn shipped_configs_match_constructors() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
        assert_eq!(
            from_file(&dir.join("dite18.json")).unwrap(),
            ModelConfig::dite18()
        );
        assert_eq!(
            from_file(&dir.join("dite30.json")).unwrap(),
            ModelConfig::dite30()
        );
        assert_eq!(
            from_file(&dir.join("tiny.json")).unwrap(),
            ModelConfig::tiny()
        );
    }
}
