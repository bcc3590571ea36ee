use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use lpci_core::{Boundary, Centering, HcFlavor, Kernel};

use crate::error::CliError;

/// Bandwidth rule requested on the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BwRule {
    Mse,
    Ce,
    TradeOff,
    Fixed(f64),
}

/// Key=value defaults file. Flags take precedence; keys nobody consumed are
/// rejected so typos fail loudly.
#[derive(Debug, Default)]
pub struct Overlay {
    entries: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl Overlay {
    pub fn load(path: Option<&Path>) -> Result<Overlay, CliError> {
        let Some(path) = path else {
            return Ok(Overlay::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::input(format!(
                    "config line {}: expected key=value, found '{line}'",
                    i + 1
                )));
            };
            entries.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Overlay { entries, used: BTreeSet::new() })
    }

    fn get(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.entries.get(key).cloned()
    }

    /// Call after all known keys were consumed.
    pub fn finish(self) -> Result<(), CliError> {
        for key in self.entries.keys() {
            if !self.used.contains(key) {
                return Err(CliError::input(format!("unknown config key '{key}'")));
            }
        }
        Ok(())
    }
}

/// Flag value, else file value, else default.
pub fn pick<T>(
    flag: Option<T>,
    file: &mut Overlay,
    key: &str,
    default: T,
    parse: impl FnOnce(&str) -> Result<T, CliError>,
) -> Result<T, CliError> {
    match flag {
        Some(v) => {
            file.get(key);
            Ok(v)
        }
        None => match file.get(key) {
            Some(s) => parse(&s),
            None => Ok(default),
        },
    }
}

/// As [`pick`] without a default.
pub fn pick_opt<T>(
    flag: Option<T>,
    file: &mut Overlay,
    key: &str,
    parse: impl FnOnce(&str) -> Result<T, CliError>,
) -> Result<Option<T>, CliError> {
    match flag {
        Some(v) => {
            file.get(key);
            Ok(Some(v))
        }
        None => file.get(key).map(|s| parse(&s)).transpose(),
    }
}

pub fn parse_number<T: std::str::FromStr>(key: &str) -> impl FnOnce(&str) -> Result<T, CliError> + '_ {
    move |s| s.parse().map_err(|_| CliError::input(format!("config key '{key}': cannot parse '{s}'")))
}

pub fn parse_kernel(s: &str) -> Result<Kernel, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "uniform" | "uni" => Ok(Kernel::Uniform),
        "triangular" | "tri" => Ok(Kernel::Triangular),
        "epanechnikov" | "epa" => Ok(Kernel::Epanechnikov),
        _ => Err(CliError::input(format!(
            "unknown kernel '{s}'; choose uniform, triangular, or epanechnikov"
        ))),
    }
}

pub fn parse_boundary(s: &str) -> Result<Boundary, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "auto" => Ok(Boundary::Auto),
        "interior" => Ok(Boundary::Interior),
        "left" => Ok(Boundary::Left),
        "right" => Ok(Boundary::Right),
        _ => Err(CliError::input(format!(
            "unknown boundary '{s}'; choose auto, interior, left, or right"
        ))),
    }
}

pub fn parse_method(s: &str) -> Result<Centering, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "conventional" | "conv" => Ok(Centering::Conventional),
        "rbc" | "robust" => Ok(Centering::Rbc),
        _ => Err(CliError::input(format!("unknown method '{s}'; choose conventional or rbc"))),
    }
}

pub fn parse_flavor(s: &str) -> Result<HcFlavor, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "hc0" => Ok(HcFlavor::Hc0),
        "hc1" => Ok(HcFlavor::Hc1),
        "hc2" => Ok(HcFlavor::Hc2),
        "hc3" => Ok(HcFlavor::Hc3),
        _ => Err(CliError::input(format!("unknown variance flavor '{s}'; choose hc0..hc3"))),
    }
}

pub fn parse_bw(s: &str) -> Result<BwRule, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "mse" | "mse-rot" => Ok(BwRule::Mse),
        "ce" | "ce-optimal" => Ok(BwRule::Ce),
        "to" | "trade-off" | "tradeoff" => Ok(BwRule::TradeOff),
        other => match other.parse::<f64>() {
            Ok(h) if h.is_finite() && h > 0.0 => Ok(BwRule::Fixed(h)),
            _ => Err(CliError::input(format!(
                "bandwidth rule '{s}' is neither mse, ce, to, nor a positive number"
            ))),
        },
    }
}

/// `auto` means select the ratio from the kernel shape; a number fixes it.
pub fn parse_rho(s: &str) -> Result<Option<f64>, CliError> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(r) if r.is_finite() && r > 0.0 => Ok(Some(r)),
        _ => Err(CliError::input(format!("rho '{s}' is neither auto nor a positive number"))),
    }
}

pub fn parse_bool(s: &str) -> Result<bool, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::input(format!("cannot parse '{s}' as a boolean"))),
    }
}
