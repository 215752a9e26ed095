//! Run configuration: a line-oriented `[section]` / `key = value` file,
//! overridden field by field from the command line.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use asep_blocks::contour::Precision;
use asep_blocks::finite::{Method, ParticleConfig};
use asep_blocks::weights::Params;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

type Res<T> = std::result::Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> Res<T> {
    Err(ConfigError(msg.into()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// `[model] p`, kept as written (`7/10`, `0.7`).
    pub p: String,
    /// `[initial] y`: comma list or `step`.
    pub y: ParticleConfig,
    /// `[query] x`: `a..b` inclusive, or a comma list of positions for
    /// transition probabilities.
    pub x: String,
    pub m: Vec<usize>,
    pub l: Vec<usize>,
    pub t: Vec<f64>,
    /// Empty means the subcommand's default.
    pub methods: Vec<Method>,
    /// `[contour]`
    pub nodes: Option<usize>,
    pub tol: f64,
    pub precision: Precision,
    pub series_k: usize,
    pub enclose_zero: bool,
    /// `[oracle]`
    pub samples: u64,
    pub seed: u64,
    pub oracle_tol: f64,
    /// `[compare]`
    pub compare_tol: f64,
    pub max_z: f64,
    /// `[identities]`
    pub n_max: usize,
    pub l_max: usize,
    pub m_max: usize,
    pub trials: usize,
    pub corrupt: bool,
    /// `[output]`
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            p: "7/10".into(),
            y: ParticleConfig::Step,
            x: "-2..3".into(),
            m: vec![1],
            l: vec![1],
            t: vec![0.5],
            methods: Vec::new(),
            nodes: None,
            tol: 1e-10,
            precision: Precision::Auto,
            series_k: 4,
            enclose_zero: false,
            samples: 100_000,
            seed: 1,
            oracle_tol: 1e-13,
            compare_tol: 1e-8,
            max_z: 4.0,
            n_max: 5,
            l_max: 2,
            m_max: 5,
            trials: 3,
            corrupt: false,
            out: None,
            workers: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Res<T> {
    v.trim().parse::<T>().map_err(|_| ConfigError(format!("invalid value for {key}: {v:?}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Res<Vec<T>> {
    let items: Vec<T> = v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s)).collect::<Res<_>>()?;
    if items.is_empty() {
        return err(format!("{key} is empty"));
    }
    Ok(items)
}

fn parse_bool(key: &str, v: &str) -> Res<bool> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => err(format!("invalid boolean for {key}: {v:?}")),
    }
}

fn parse_precision(v: &str) -> Res<Precision> {
    match v.trim() {
        "double" => Ok(Precision::Double),
        "double-double" | "dd" => Ok(Precision::DoubleDouble),
        "auto" => Ok(Precision::Auto),
        _ => err(format!("invalid precision {v:?} (double, double-double, auto)")),
    }
}

fn precision_name(p: Precision) -> &'static str {
    match p {
        Precision::Double => "double",
        Precision::DoubleDouble => "double-double",
        Precision::Auto => "auto",
    }
}

/// `a..b` (inclusive) or a single integer.
pub fn parse_range(v: &str) -> Res<(i64, i64)> {
    let v = v.trim();
    let (a, b) = match v.split_once("..") {
        Some((a, b)) => (parse::<i64>("x", a)?, parse::<i64>("x", b.trim_start_matches('='))?),
        None => {
            let a = parse::<i64>("x", v)?;
            (a, a)
        }
    };
    if b < a {
        return err(format!("empty x range {v:?}"));
    }
    Ok((a, b))
}

impl RunConfig {
    pub fn params(&self) -> Res<Params> {
        self.p.parse::<Params>().map_err(|e| ConfigError(format!("invalid p {:?}: {e}", self.p)))
    }

    pub fn x_range(&self) -> Res<(i64, i64)> {
        parse_range(&self.x)
    }

    /// Sets one key; `section` is the bracketed header it appeared under.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Res<()> {
        let v = value.trim();
        match (section, key) {
            ("model", "p") => {
                self.p = v.to_string();
                self.params()?;
            }
            ("initial", "y") => self.y = v.parse().map_err(|e| ConfigError(format!("invalid y {v:?}: {e}")))?,
            ("query", "x") => {
                if v.is_empty() {
                    return err("x is empty");
                }
                self.x = v.to_string();
            }
            ("query", "m") => self.m = parse_list(key, v)?,
            ("query", "L") | ("query", "l") => self.l = parse_list(key, v)?,
            ("query", "t") => self.t = parse_list(key, v)?,
            ("query", "methods") | ("query", "method") => {
                self.methods = v.split(',').map(|s| s.parse::<Method>().map_err(|e| ConfigError(e.to_string()))).collect::<Res<_>>()?
            }
            ("contour", "nodes") => self.nodes = Some(parse(key, v)?),
            ("contour", "tol") => self.tol = parse(key, v)?,
            ("contour", "precision") => self.precision = parse_precision(v)?,
            ("contour", "series_k") => self.series_k = parse(key, v)?,
            ("contour", "enclose_zero") => self.enclose_zero = parse_bool(key, v)?,
            ("oracle", "samples") => self.samples = parse(key, v)?,
            ("oracle", "seed") => self.seed = parse(key, v)?,
            ("oracle", "tol") => self.oracle_tol = parse(key, v)?,
            ("compare", "tol") => self.compare_tol = parse(key, v)?,
            ("compare", "max_z") => self.max_z = parse(key, v)?,
            ("identities", "n_max") => self.n_max = parse(key, v)?,
            ("identities", "l_max") => self.l_max = parse(key, v)?,
            ("identities", "m_max") => self.m_max = parse(key, v)?,
            ("identities", "trials") => self.trials = parse(key, v)?,
            ("identities", "corrupt") => self.corrupt = parse_bool(key, v)?,
            ("output", "out") => self.out = Some(PathBuf::from(v)),
            ("output", "workers") => self.workers = Some(parse(key, v)?),
            _ => return err(format!("unknown key {key:?} in section [{section}]")),
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Res<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let Some(name) = name.strip_suffix(']') else {
                    return err(format!("line {}: unterminated section header", lineno + 1));
                };
                section = name.trim().to_string();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return err(format!("line {}: expected `key = value`", lineno + 1));
            };
            if section.is_empty() {
                return err(format!("line {}: key outside any section", lineno + 1));
            }
            cfg.set(&section, k.trim(), v).map_err(|e| ConfigError(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    /// Text that [`RunConfig::parse_text`] reads back to the same value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[String]| v.join(",");
        let _ = writeln!(s, "[model]\np = {}\n", self.p);
        let _ = writeln!(s, "[initial]\ny = {}\n", self.y);
        let _ = writeln!(s, "[query]\nx = {}", self.x);
        let _ = writeln!(s, "m = {}", join(&self.m.iter().map(|v| v.to_string()).collect::<Vec<_>>()));
        let _ = writeln!(s, "L = {}", join(&self.l.iter().map(|v| v.to_string()).collect::<Vec<_>>()));
        let _ = writeln!(s, "t = {}", join(&self.t.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>()));
        if !self.methods.is_empty() {
            let _ = writeln!(s, "methods = {}", join(&self.methods.iter().map(|v| v.name().to_string()).collect::<Vec<_>>()));
        }
        let _ = writeln!(s, "\n[contour]");
        if let Some(n) = self.nodes {
            let _ = writeln!(s, "nodes = {n}");
        }
        let _ = writeln!(s, "tol = {:?}\nprecision = {}\nseries_k = {}\nenclose_zero = {}\n", self.tol, precision_name(self.precision), self.series_k, self.enclose_zero);
        let _ = writeln!(s, "[oracle]\nsamples = {}\nseed = {}\ntol = {:?}\n", self.samples, self.seed, self.oracle_tol);
        let _ = writeln!(s, "[compare]\ntol = {:?}\nmax_z = {:?}\n", self.compare_tol, self.max_z);
        let _ = writeln!(s, "[identities]\nn_max = {}\nl_max = {}\nm_max = {}\ntrials = {}\ncorrupt = {}\n", self.n_max, self.l_max, self.m_max, self.trials, self.corrupt);
        let _ = writeln!(s, "[output]");
        if let Some(o) = &self.out {
            let _ = writeln!(s, "out = {}", o.display());
        }
        if let Some(w) = self.workers {
            let _ = writeln!(s, "workers = {w}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn parses_sections_and_rejects_unknown_keys() {
        let text = "# sweep\n[model]\np = 3/5\n[initial]\ny = 0,2,5\n[query]\nx = 1..4\nm = 1,2\nL = 2\nt = 0.3, 1.0\nmethods = thm1,thm2,oracle\n[oracle]\nseed = 9\n";
        let c = RunConfig::parse_text(text).unwrap();
        assert_eq!(c.p, "3/5");
        assert_eq!(c.x_range().unwrap(), (1, 4));
        assert_eq!(c.m, vec![1, 2]);
        assert_eq!(c.t, vec![0.3, 1.0]);
        assert_eq!(c.methods, vec![Method::Thm1, Method::Thm2, Method::Uniformization]);
        assert_eq!(c.seed, 9);
        assert_eq!(RunConfig::parse_text(&c.to_text()).unwrap(), c);
        assert!(RunConfig::parse_text("[model]\nq = 1/2\n").is_err());
        assert!(RunConfig::parse_text("p = 1/2\n").is_err());
        assert!(RunConfig::parse_text("[query]\nx = 3..1\n").unwrap().x_range().is_err());
        assert!(RunConfig::parse_text("[model]\np = 2\n").is_err());
    }
}
