use std::collections::BTreeMap;
use std::str::FromStr;
use std::time::Duration;

use problm::io::{parse_key_values, FormatError};
use problm::{KernelKind, Method, SolverConfig};

use crate::args::SolverFlags;
use crate::error::CliError;

const KEYS: &[&str] = &[
    "method",
    "seed",
    "delta",
    "alpha",
    "eta",
    "k0_frac",
    "kernel",
    "tau",
    "gnc_levels",
    "budget_ms",
    "max_iter",
    "grad_tol",
    "init_noise",
    "audit",
    "no_timing",
];

/// Fully resolved run options.
#[derive(Debug, Clone)]
pub struct Settings {
    pub method: Method,
    pub solver: SolverConfig,
    /// `None` leaves the choice to the instance kind.
    pub kernel: Option<KernelKind>,
    pub tau: Option<f64>,
    pub gnc_levels: usize,
    pub init_noise: Option<f64>,
    pub no_timing: bool,
}

struct Layer {
    file: BTreeMap<String, String>,
}

impl Layer {
    fn get<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("config key `{key}`: cannot parse `{v}`"))),
        }
    }

    fn switch(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        if flag {
            return Ok(true);
        }
        match self.file.get(key).map(String::as_str) {
            None | Some("false") | Some("0") => Ok(false),
            Some("true") | Some("1") => Ok(true),
            Some(v) => Err(CliError::Usage(format!("config key `{key}`: expected true or false, got `{v}`"))),
        }
    }
}

fn load_file(flags: &SolverFlags) -> Result<BTreeMap<String, String>, CliError> {
    let Some(path) = &flags.config else {
        return Ok(BTreeMap::new());
    };
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let raw = parse_key_values(&text).map_err(|e| match e {
        FormatError::Io(source) => CliError::Io { path: path.clone(), source },
        other => CliError::Usage(format!("{}: {other}", path.display())),
    })?;
    let mut map = BTreeMap::new();
    for (k, v) in raw {
        let key = k.replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Usage(format!("{}: unknown key `{k}`", path.display())));
        }
        map.insert(key, v);
    }
    Ok(map)
}

/// Defaults, overridden by the config file, overridden by flags.
pub fn resolve(flags: &SolverFlags, method: Option<&str>) -> Result<Settings, CliError> {
    let layer = Layer { file: load_file(flags)? };
    let defaults = SolverConfig::default();

    let method = match layer.get(method.map(str::to_string), "method")? {
        Some(m) => Method::from_str(&m).map_err(CliError::Usage)?,
        None => Method::Problm,
    };
    let kernel = match layer.get(flags.kernel.clone(), "kernel")? {
        Some(k) => Some(KernelKind::from_str(&k).map_err(CliError::Usage)?),
        None => None,
    };

    let solver = SolverConfig {
        seed: layer.get(flags.seed, "seed")?.unwrap_or(defaults.seed),
        delta: layer.get(flags.delta, "delta")?.unwrap_or(defaults.delta),
        alpha: layer.get(flags.alpha, "alpha")?.unwrap_or(defaults.alpha),
        eta: layer.get(flags.eta, "eta")?.unwrap_or(defaults.eta),
        k0_fraction: layer.get(flags.k0_frac, "k0_frac")?.unwrap_or(defaults.k0_fraction),
        max_iter: layer.get(flags.max_iter, "max_iter")?.unwrap_or(defaults.max_iter),
        grad_tol: layer.get(flags.grad_tol, "grad_tol")?.unwrap_or(defaults.grad_tol),
        budget: layer.get(flags.budget_ms, "budget_ms")?.map(Duration::from_millis),
        audit: layer.switch(flags.audit, "audit")?,
        ..defaults
    };
    solver.validate()?;

    let tau = layer.get(flags.tau, "tau")?;
    if let Some(t) = tau {
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::Usage(format!("tau must be positive, got {t}")));
        }
    }
    let gnc_levels = layer.get(flags.gnc_levels, "gnc_levels")?.unwrap_or(5);
    if !(1..=30).contains(&gnc_levels) {
        return Err(CliError::Usage(format!("gnc-levels must be between 1 and 30, got {gnc_levels}")));
    }
    let init_noise = layer.get(flags.init_noise, "init_noise")?;
    if let Some(a) = init_noise {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(CliError::Usage(format!("init-noise must be non-negative, got {a}")));
        }
    }

    Ok(Settings {
        method,
        solver,
        kernel,
        tau,
        gnc_levels,
        init_noise,
        no_timing: layer.switch(flags.no_timing, "no_timing")?,
    })
}
