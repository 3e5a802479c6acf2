//! Expectation CSV files: one row per (configuration, input size) with the
//! printed parameter count (millions) and multiply-adds (millions).
//!
//! Columns: `config_id, input_h, input_w, params, mflops, tol_params,
//! tol_flops` and optionally `params_step, mflops_step`, the unit of the
//! last printed digit (zero or absent for an exact figure).

use dite_core::complexity::Expectation;

use crate::CliError;

/// Files shipped with the crate, in the order they are checked.
pub const BUNDLED: &[(&str, &str)] = &[
    ("variants.csv", include_str!("../expectations/variants.csv")),
    (
        "resolution.csv",
        include_str!("../expectations/resolution.csv"),
    ),
    ("grid.csv", include_str!("../expectations/grid.csv")),
    ("ablation.csv", include_str!("../expectations/ablation.csv")),
    (
        "acceptance.csv",
        include_str!("../expectations/acceptance.csv"),
    ),
];

pub fn parse(text: &str) -> Result<Vec<Expectation>, String> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| format!("row {}: {e}", i + 1)))
        .collect()
}

pub fn bundled() -> Result<Vec<(String, Vec<Expectation>)>, CliError> {
    BUNDLED
        .iter()
        .map(|(name, text)| {
            parse(text)
                .map(|v| (name.to_string(), v))
                .map_err(|e| CliError::Usage(format!("{name}: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_files_parse() {
        let sets = bundled().unwrap();
        let sizes: Vec<usize> = sets.iter().map(|(_, v)| v.len()).collect();
        assert_eq!(sizes, [4, 2, 16, 10, 4]);
    }

    #[test]
    fn step_columns_are_optional() {
        let v = parse("config_id,input_h,input_w,params,mflops,tol_params,tol_flops\ndite18,256,192,1.1,209.8,0.05,0.02\n")
            .unwrap();
        assert_eq!(v[0].mflops_step, 0.0);
        assert!(parse("config_id,input_h\ndite18,256\n").is_err());
    }
}
