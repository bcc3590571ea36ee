use std::io;

use serde::Serialize;
use serde_json::ser::{Formatter, Serializer};

/// JSON formatter carrying 17 significant digits on every float, enough to
/// round-trip an f64 exactly.
struct SigFigs;

impl Formatter for SigFigs {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = Serializer::with_formatter(&mut buf, SigFigs);
    value.serialize(&mut ser).expect("document serialization cannot fail");
    String::from_utf8(buf).expect("serializer emits utf-8")
}

/// Fit and interval report for `fit` and `ci`.
#[derive(Serialize)]
pub struct FitDocument {
    pub estimate: f64,
    pub se: f64,
    pub ci: [f64; 2],
    pub h: f64,
    pub b: f64,
    pub rho: f64,
    pub p: usize,
    pub deriv: usize,
    pub kernel: String,
    pub method: String,
    pub flavor: String,
    pub boundary: String,
    pub n_effective: usize,
    pub diagnostics: Vec<String>,
}

/// Bandwidth report for `bwselect`.
#[derive(Serialize)]
pub struct BwDocument {
    pub h: f64,
    pub h_const: f64,
    pub eta: f64,
    pub method: String,
    pub weight: Option<f64>,
    pub rho: f64,
    pub p: usize,
    pub deriv: usize,
    pub kernel: String,
    pub eval: f64,
    pub boundary: String,
    pub n: usize,
    pub diagnostics: Vec<String>,
}
