//! `key = value` config files, merged into argv ahead of the real flags.

use std::ffi::OsString;

use clap::{ArgAction, CommandFactory};

use super::Cli;
use crate::error::{Error, Result};

/// Parses `key = value` lines; `#` starts a comment. Keys are normalized to
/// flag spelling (`n_plays` and `n-plays` are the same key).
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
        let k = k.trim().replace('_', "-");
        if k.is_empty() {
            return Err(Error::Config(format!("config line {}: empty key", i + 1)));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<(usize, OsString)> {
    for (i, a) in args.iter().enumerate().skip(1) {
        let s = a.to_string_lossy();
        if s == "--config" {
            return args.get(i + 1).map(|v| (i, v.clone()));
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some((i, OsString::from(v)));
        }
    }
    None
}

/// Inserts config entries for the chosen subcommand right after its name, so
/// that flags given on the command line override them.
pub fn inject_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some((_, path)) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Config(format!("{}: {e}", path.to_string_lossy())))?;
    let entries = parse_config(&text)?;
    let root = Cli::command();
    let subs: Vec<String> = root.get_subcommands().map(|c| c.get_name().to_string()).collect();
    let Some(pos) = args
        .iter()
        .position(|a| subs.iter().any(|s| a.to_string_lossy() == s.as_str()))
    else {
        return Ok(args);
    };
    let sub_name = args[pos].to_string_lossy().to_string();
    let find = |sub: &str, key: &str| {
        root.find_subcommand(sub)
            .and_then(|c| c.get_arguments().find(|a| a.get_long() == Some(key)).cloned())
    };
    let mut injected: Vec<OsString> = Vec::new();
    for (key, value) in entries {
        let (scope, k) = match key.split_once('.') {
            Some((s, k)) => {
                if !subs.iter().any(|x| x == s) {
                    return Err(Error::Config(format!("unknown subcommand in config key {key}")));
                }
                (Some(s.to_string()), k.to_string())
            }
            None => (None, key.clone()),
        };
        if k == "config" {
            return Err(Error::Config("config files cannot include other config files".into()));
        }
        let target = scope.clone().unwrap_or_else(|| sub_name.clone());
        let arg = find(&target, &k);
        if arg.is_none() {
            let known_somewhere = subs.iter().any(|s| find(s, &k).is_some());
            if scope.is_some() || !known_somewhere {
                return Err(Error::Config(format!("unknown config key {key}")));
            }
        }
        if target != sub_name {
            continue;
        }
        let Some(arg) = arg else { continue };
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" | "1" | "yes" => injected.push(format!("--{k}").into()),
                "false" | "0" | "no" => {}
                _ => return Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
            },
            ArgAction::Append => {
                for v in value.split(',').map(str::trim).filter(|v| !v.is_empty()) {
                    injected.push(format!("--{k}={v}").into());
                }
            }
            _ => injected.push(format!("--{k}={value}").into()),
        }
    }
    let mut out = args[..=pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::Command;
    use clap::Parser;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn parses_comments_and_normalizes_keys() {
        let e = parse_config("# top\n n_plays = 50  # inline\n\ntrain.max_lr=0.01\n").unwrap();
        assert_eq!(e, vec![("n-plays".into(), "50".into()), ("train.max-lr".into(), "0.01".into())]);
        assert!(parse_config("novalue\n").is_err());
        assert!(parse_config(" = 3\n").is_err());
    }

    #[test]
    fn injects_after_subcommand_so_cli_wins() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.cfg");
        std::fs::write(&f, "seed = 5\nn_plays = 10\ntrain.epochs = 3\nno_augmentation = true\n").unwrap();
        let fs = f.to_str().unwrap();
        let out = inject_config(os(&["covresp", "--config", fs, "gen", "--out", "d", "--seed", "9"])).unwrap();
        assert_eq!(
            out,
            os(&["covresp", "--config", fs, "gen", "--seed=5", "--n-plays=10", "--out", "d", "--seed", "9"])
        );
        let cli = Cli::try_parse_from(out).unwrap();
        let Command::Gen(g) = cli.command else { panic!() };
        assert_eq!((g.seed, g.n_plays), (Some(9), Some(10)));
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.cfg");
        for bad in ["colour = red\n", "gen.epochs = 3\n", "nosuch.seed = 1\n", "no_augmentation = maybe\n"] {
            std::fs::write(&f, bad).unwrap();
            let args = os(&["covresp", "train", "--config", f.to_str().unwrap()]);
            assert!(matches!(inject_config(args), Err(Error::Config(_))), "{bad}");
        }
        let args = os(&["covresp", "gen", "--config", "/nonexistent/c.cfg"]);
        assert!(inject_config(args).is_err());
    }
}
