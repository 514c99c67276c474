//! Configuration-file support: a TOML file with one section per subcommand
//! whose keys mirror the long flags. Command-line flags always win; config
//! entries only fill in flags that were not passed.
//!
//! ```toml
//! [eval]
//! mode = "sp-moji"
//! threshold = 0.5
//!
//! [elo]
//! steps = 100000
//! seed = 7
//! ```

use uqeval::error::{Error, Result};

const SUBCOMMANDS: &[&str] = &[
    "score",
    "judge",
    "eval",
    "perturb",
    "elo",
    "verify-auroc",
    "bootstrap-sd",
    "report",
];

const REPORT_KINDS: &[&str] = &["agreement", "ranking", "adversarial"];

/// Expands argv with flag values taken from the `--config` file, if any.
pub fn expand_with_config(argv: Vec<String>) -> Result<Vec<String>> {
    let config_path = find_config_value(&argv);
    let Some(path) = config_path else {
        return Ok(argv);
    };
    let raw = std::fs::read_to_string(&path).map_err(|e| Error::Io {
        path: path.clone().into(),
        source: e,
    })?;
    let parsed: toml::Table =
        toml::from_str(&raw).map_err(|e| Error::Config(format!("bad config file: {e}")))?;

    let Some(subcommand) = argv.iter().skip(1).find(|a| SUBCOMMANDS.contains(&a.as_str()))
    else {
        return Ok(argv);
    };
    // `report` nests one level: [report.agreement] etc.
    let section = if subcommand == "report" {
        let kind = argv
            .iter()
            .skip(1)
            .find(|a| REPORT_KINDS.contains(&a.as_str()));
        match (parsed.get("report"), kind) {
            (Some(toml::Value::Table(report)), Some(kind)) => match report.get(kind.as_str()) {
                Some(toml::Value::Table(t)) => Some(t.clone()),
                _ => None,
            },
            _ => None,
        }
    } else {
        match parsed.get(subcommand.as_str()) {
            Some(toml::Value::Table(t)) => Some(t.clone()),
            _ => None,
        }
    };
    let Some(section) = section else {
        return Ok(argv);
    };

    let mut expanded = argv.clone();
    for (key, value) in &section {
        let flag = format!("--{key}");
        let already_passed = argv
            .iter()
            .any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if already_passed {
            continue;
        }
        match value {
            toml::Value::Boolean(true) => expanded.push(flag),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                let joined = items
                    .iter()
                    .map(toml_scalar_to_string)
                    .collect::<Result<Vec<_>>>()?
                    .join(",");
                expanded.push(flag);
                expanded.push(joined);
            }
            other => {
                expanded.push(flag);
                expanded.push(toml_scalar_to_string(other)?);
            }
        }
    }
    Ok(expanded)
}

fn toml_scalar_to_string(value: &toml::Value) -> Result<String> {
    match value {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        other => Err(Error::Config(format!(
            "unsupported config value {other}; use scalars or arrays"
        ))),
    }
}

fn find_config_value(argv: &[String]) -> Option<String> {
    for (idx, arg) in argv.iter().enumerate() {
        if arg == "--config" {
            return argv.get(idx + 1).cloned();
        }
        if let Some(rest) = arg.strip_prefix("--config=") {
            return Some(rest.to_string());
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(parts: &[&str]) -> Vec<String> {
        parts.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn no_config_is_passthrough() {
        let args = argv(&["uqeval", "elo", "--results", "r.csv", "--out", "o.csv"]);
        assert_eq!(expand_with_config(args.clone()).unwrap(), args);
    }

    #[test]
    fn config_fills_missing_flags_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("uqeval.toml");
        std::fs::write(&path, "[elo]\nsteps = 5000\nseed = 9\n").unwrap();
        let args = argv(&[
            "uqeval",
            "elo",
            "--config",
            path.to_str().unwrap(),
            "--seed",
            "1",
            "--results",
            "r.csv",
            "--out",
            "o.csv",
        ]);
        let out = expand_with_config(args).unwrap();
        assert!(out.contains(&"--steps".to_string()));
        assert!(out.contains(&"5000".to_string()));
        // --seed was passed explicitly; the config must not add another.
        assert_eq!(out.iter().filter(|a| *a == "--seed").count(), 1);
    }

    #[test]
    fn arrays_join_with_commas_and_bools_become_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("uqeval.toml");
        std::fs::write(
            &path,
            "[eval]\ntags = [\"qa\", \"it\"]\nmetrics = [\"rouge_1@0.5\"]\n",
        )
        .unwrap();
        let args = argv(&["uqeval", "eval", "--config", path.to_str().unwrap()]);
        let out = expand_with_config(args).unwrap();
        let tags_idx = out.iter().position(|a| a == "--tags").unwrap();
        assert_eq!(out[tags_idx + 1], "qa,it");
    }
}
