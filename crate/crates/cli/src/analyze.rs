//! Model-size analysis: per spec, the layer/width columns, the parameter
//! total, and the size relative to the first spec.

use std::path::Path;

use distilkit::models::ModelSpec;

use crate::CliError;

/// Render the size table for the given spec files. The first spec is the
/// reference for the relative-size column.
pub fn analyze_specs(paths: &[String]) -> Result<String, CliError> {
    if paths.is_empty() {
        return Err(CliError::Validation("analyze requires at least one spec file".into()));
    }
    let mut rows: Vec<(String, ModelSpec, usize)> = Vec::with_capacity(paths.len());
    for path in paths {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read spec {path}: {e}")))?;
        let spec = ModelSpec::from_json_str(&text)?;
        let count = spec.count_parameters()?;
        let name = Path::new(path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.clone());
        rows.push((name, spec, count.total));
    }
    let reference = rows[0].2 as f64;

    let mut out = String::new();
    out.push_str(&format!(
        "{:<20} {:<20} {:>6} {:>7} {:>13} {:>12} {:>9}\n",
        "model", "kind", "layers", "hidden", "feed-forward", "parameters", "relative"
    ));
    for (name, spec, total) in &rows {
        let ff = spec.feed_forward_size.map_or("-".to_string(), |v| v.to_string());
        out.push_str(&format!(
            "{:<20} {:<20} {:>6} {:>7} {:>13} {:>12} {:>8.1}%\n",
            name,
            spec.kind.name(),
            spec.num_layers,
            spec.hidden_size,
            ff,
            total,
            100.0 * *total as f64 / reference,
        ));
    }
    Ok(out)
}
