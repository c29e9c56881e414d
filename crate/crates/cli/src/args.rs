//! Flag parsing for the subcommands. Flags override config keys; the
//! precedence is defaults < config file < --set < dedicated flags.

use std::path::PathBuf;

#[derive(Debug, Default, Clone)]
pub struct Args {
    pub subcommand: String,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub input: Option<String>,
    pub input_a: Option<String>,
    pub input_b: Option<String>,
    pub base: Option<String>,
    pub layers: Vec<String>,
    pub views: Option<i64>,
    pub seed: Option<i64>,
    pub tau: Option<f64>,
    pub arms: Option<String>,
    pub sets: Vec<(String, String)>,
}

pub const SUBCOMMANDS: &[&str] = &[
    "corpus",
    "train-appearance",
    "train-structure",
    "recover",
    "edit",
    "interp",
    "eval",
    "ablate",
];

pub fn usage() -> String {
    format!(
        "usage: uvforge <{}> [--config FILE] [--out DIR] [--corpus DIR] [--model DIR]\n\
         \x20      [--input ID] [--input-a ID] [--input-b ID] [--base ID] [--layer ID:REGION]...\n\
         \x20      [--views N] [--seed N] [--tau T] [--arms LIST] [--set section.key=value]...",
        SUBCOMMANDS.join("|")
    )
}

pub fn parse(argv: &[String]) -> Result<Args, String> {
    let mut args = Args::default();
    let mut it = argv.iter();
    args.subcommand = it
        .next()
        .ok_or_else(|| format!("missing subcommand\n{}", usage()))?
        .clone();
    if !SUBCOMMANDS.contains(&args.subcommand.as_str()) {
        return Err(format!(
            "unknown subcommand `{}`\n{}",
            args.subcommand,
            usage()
        ));
    }
    while let Some(flag) = it.next() {
        let mut value = |name: &str| -> Result<String, String> {
            it.next()
                .cloned()
                .ok_or_else(|| format!("flag {name} needs a value"))
        };
        match flag.as_str() {
            "--config" => args.config = Some(PathBuf::from(value("--config")?)),
            "--out" => args.out = Some(PathBuf::from(value("--out")?)),
            "--corpus" => args.corpus = Some(PathBuf::from(value("--corpus")?)),
            "--model" => args.model = Some(PathBuf::from(value("--model")?)),
            "--input" => args.input = Some(value("--input")?),
            "--input-a" => args.input_a = Some(value("--input-a")?),
            "--input-b" => args.input_b = Some(value("--input-b")?),
            "--base" => args.base = Some(value("--base")?),
            "--layer" => args.layers.push(value("--layer")?),
            "--views" => {
                args.views = Some(value("--views")?.parse().map_err(|_| "--views expects an integer".to_string())?)
            }
            "--seed" => {
                args.seed = Some(value("--seed")?.parse().map_err(|_| "--seed expects an integer".to_string())?)
            }
            "--tau" => {
                args.tau = Some(value("--tau")?.parse().map_err(|_| "--tau expects a number".to_string())?)
            }
            "--arms" => args.arms = Some(value("--arms")?),
            "--set" => {
                let kv = value("--set")?;
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| format!("--set expects section.key=value, got `{kv}`"))?;
                args.sets.push((k.trim().to_string(), v.trim().to_string()));
            }
            other => return Err(format!("unknown flag `{other}`\n{}", usage())),
        }
    }
    Ok(args)
}

/// Sample id from forms like `face_0007`, `0007`, `7`.
pub fn parse_sample_id(s: &str) -> Result<u64, String> {
    let digits: String = s.chars().filter(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return Err(format!("no sample id in `{s}`"));
    }
    digits
        .parse::<u64>()
        .map_err(|_| format!("bad sample id `{s}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn parses_recover_flags() {
        let a = parse(&v(&[
            "recover", "--model", "runs/m", "--input", "face_0007", "--views", "2", "--seed", "11",
        ]))
        .unwrap();
        assert_eq!(a.subcommand, "recover");
        assert_eq!(a.views, Some(2));
        assert_eq!(a.seed, Some(11));
        assert_eq!(parse_sample_id(a.input.as_deref().unwrap()).unwrap(), 7);
    }

    #[test]
    fn rejects_unknown_flag_and_subcommand() {
        assert!(parse(&v(&["fly"])).is_err());
        assert!(parse(&v(&["corpus", "--frobnicate"])).is_err());
    }

    #[test]
    fn collects_repeated_layers_and_sets() {
        let a = parse(&v(&[
            "edit", "--base", "3", "--layer", "4:lips", "--layer", "5:beard", "--set",
            "sample.seed=9",
        ]))
        .unwrap();
        assert_eq!(a.layers.len(), 2);
        assert_eq!(a.sets[0], ("sample.seed".to_string(), "9".to_string()));
    }
}
