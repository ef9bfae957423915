//! `key = value` config files, spliced into argv ahead of the explicit flags
//! so that anything given on the command line overrides them.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use crate::CliError;

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_config(text: &str, source: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Validation(format!("{source}:{}: expected `key = value`, got `{raw}`", i + 1)));
        };
        let key = k.trim().replace('_', "-");
        if key.is_empty() || key.starts_with('-') || key == "config" {
            return Err(CliError::Validation(format!("{source}:{}: bad key `{}`", i + 1, k.trim())));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn as_flags(pairs: &[(String, String)]) -> Vec<OsString> {
    let mut flags = Vec::new();
    for (k, v) in pairs {
        match v.as_str() {
            "true" => flags.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                flags.push(format!("--{k}").into());
                flags.push(v.into());
            }
        }
    }
    flags
}

/// Removes `--config FILE` (or `--config=FILE`) from `argv` and inserts the
/// file's flags before the first flag, after the subcommand names.
pub fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut path = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            let p = it
                .next()
                .ok_or_else(|| CliError::Validation("--config: missing FILE".into()))?;
            path = Some(p);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.into());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let path = Path::new(&path);
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("--config: cannot read {}: {e}", path.display())))?;
    let flags = as_flags(&parse_config(&text, &path.display().to_string())?);
    let at = rest
        .iter()
        .skip(1)
        .position(|a| a.to_string_lossy().starts_with('-'))
        .map_or(rest.len(), |i| i + 1);
    rest.splice(at..at, flags);
    Ok(rest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn parses_comments_and_underscores() {
        let p = parse_config("# top\nlearning_rate = 0.01  # fast\n\nseed=3\n", "c").unwrap();
        assert_eq!(p, vec![("learning-rate".into(), "0.01".into()), ("seed".into(), "3".into())]);
        assert!(parse_config("novalue\n", "c").is_err());
        assert!(parse_config("= 3\n", "c").is_err());
    }

    #[test]
    fn splices_before_explicit_flags() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("run.cfg");
        fs::write(&f, "seed = 1\nno_clamp = true\nquiet = false\n").unwrap();
        let argv = os(&["serlab", "predict", "--seed", "2", "--config", f.to_str().unwrap()]);
        let got = expand_config(argv).unwrap();
        assert_eq!(got, os(&["serlab", "predict", "--seed", "1", "--no-clamp", "--seed", "2"]));
    }

    #[test]
    fn missing_file_names_the_flag() {
        let err = expand_config(os(&["serlab", "x", "--config", "/nonexistent/c"])).unwrap_err();
        assert!(err.to_string().contains("--config"));
    }
}
