//! TOML config files. Keys are the long flag names; flags given on the
//! command line win over the file.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::CliError;

pub fn resolve<T: Serialize + DeserializeOwned>(flags: &T, file: Option<&Path>, keys: &[String]) -> Result<T, CliError> {
    let mut table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
            let table: toml::Table = text
                .parse()
                .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
            if let Some(k) = table.keys().find(|k| !keys.contains(k)) {
                return Err(CliError::Usage(format!(
                    "config {}: unknown key `{k}` (expected one of: {})",
                    path.display(),
                    keys.join(", ")
                )));
            }
            table
        }
        None => toml::Table::new(),
    };
    let given = toml::Table::try_from(flags).map_err(|e| CliError::Usage(e.to_string()))?;
    table.extend(given);
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::Usage(format!("config: {e}")))
}
