//! Audit report assembly and emission as canonical JSON, CSV histogram
//! sidecars and SVG figures.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::ser;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchrel::ReliabilityReport;
use crate::biomet::{BiometricSummary, Histogram};
use crate::error::{Error, Result};
use crate::leakage::LeakageReport;
use crate::verify::{GroupGap, GroupReport, VerificationResult};

pub const SCHEMA: &str = "faceaudit/1";
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SIGNIFICANT_DIGITS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiometricSection {
    pub mated_sampler: String,
    pub n_per_kind: usize,
    #[serde(flatten)]
    pub summary: BiometricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSection {
    #[serde(flatten)]
    pub groups: GroupReport,
    pub gap: Option<GroupGap>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Sections {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub biometric: Option<BiometricSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leakage: Option<LeakageReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<BiasSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reliability: Option<ReliabilityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema: String,
    pub toolkit_version: String,
    pub inputs: Vec<InputDigest>,
    pub seeds: BTreeMap<String, u64>,
    pub timestamp: String,
    pub sections: Sections,
}

impl AuditReport {
    pub fn new() -> Self {
        Self {
            schema: SCHEMA.to_string(),
            toolkit_version: TOOLKIT_VERSION.to_string(),
            inputs: Vec::new(),
            seeds: BTreeMap::new(),
            timestamp: timestamp(),
            sections: Sections::default(),
        }
    }

    /// Records the SHA-256 of `path` under `role`.
    pub fn add_input(&mut self, role: &str, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.inputs.push(InputDigest {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }
}

impl Default for AuditReport {
    fn default() -> Self {
        Self::new()
    }
}

/// RFC 3339 UTC time, taken from `SOURCE_DATE_EPOCH` when it is set.
pub fn timestamp() -> String {
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<u64>().ok())
        .map(|secs| std::time::UNIX_EPOCH + std::time::Duration::from_secs(secs))
        .unwrap_or_else(std::time::SystemTime::now);
    humantime::format_rfc3339_seconds(now).to_string()
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

// ---------------------------------------------------------------------------
// finite check

#[derive(Debug)]
struct NonFinite(String);

impl std::fmt::Display for NonFinite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NonFinite {}

impl ser::Error for NonFinite {
    fn custom<T: std::fmt::Display>(msg: T) -> Self {
        NonFinite(msg.to_string())
    }
}

/// A serializer that discards everything except non-finite floats, whose
/// dotted field path it reports.
#[derive(Default)]
struct FiniteProbe {
    path: Vec<String>,
}

impl FiniteProbe {
    fn float(&self, v: f64) -> std::result::Result<(), NonFinite> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(NonFinite(self.path.join(".")))
        }
    }

    fn nested<T: ?Sized + Serialize>(&mut self, key: String, value: &T) -> std::result::Result<(), NonFinite> {
        self.path.push(key);
        let r = value.serialize(&mut *self);
        self.path.pop();
        r
    }
}

struct Compound<'a> {
    probe: &'a mut FiniteProbe,
    index: usize,
    key: String,
}

type Probed = std::result::Result<(), NonFinite>;

impl<'a> Compound<'a> {
    fn element<T: ?Sized + Serialize>(&mut self, value: &T) -> Probed {
        let i = self.index;
        self.index += 1;
        self.probe.nested(i.to_string(), value)
    }
}

macro_rules! seq_like {
    ($($tr:ident :: $m:ident),*) => {$(
        impl<'a> ser::$tr for Compound<'a> {
            type Ok = ();
            type Error = NonFinite;
            fn $m<T: ?Sized + Serialize>(&mut self, value: &T) -> Probed {
                self.element(value)
            }
            fn end(self) -> Probed {
                Ok(())
            }
        }
    )*};
}
seq_like!(SerializeSeq::serialize_element, SerializeTuple::serialize_element,
    SerializeTupleStruct::serialize_field, SerializeTupleVariant::serialize_field);

macro_rules! struct_like {
    ($($tr:ident),*) => {$(
        impl<'a> ser::$tr for Compound<'a> {
            type Ok = ();
            type Error = NonFinite;
            fn serialize_field<T: ?Sized + Serialize>(&mut self, key: &'static str, value: &T) -> Probed {
                self.probe.nested(key.to_string(), value)
            }
            fn end(self) -> Probed {
                Ok(())
            }
        }
    )*};
}
struct_like!(SerializeStruct, SerializeStructVariant);

impl<'a> ser::SerializeMap for Compound<'a> {
    type Ok = ();
    type Error = NonFinite;
    fn serialize_key<T: ?Sized + Serialize>(&mut self, key: &T) -> Probed {
        self.key = match serde_json::to_value(key) {
            Ok(serde_json::Value::String(s)) => s,
            Ok(other) => other.to_string(),
            Err(_) => "?".to_string(),
        };
        Ok(())
    }
    fn serialize_value<T: ?Sized + Serialize>(&mut self, value: &T) -> Probed {
        let key = std::mem::take(&mut self.key);
        self.probe.nested(key, value)
    }
    fn end(self) -> Probed {
        Ok(())
    }
}

impl<'a> ser::Serializer for &'a mut FiniteProbe {
    type Ok = ();
    type Error = NonFinite;
    type SerializeSeq = Compound<'a>;
    type SerializeTuple = Compound<'a>;
    type SerializeTupleStruct = Compound<'a>;
    type SerializeTupleVariant = Compound<'a>;
    type SerializeMap = Compound<'a>;
    type SerializeStruct = Compound<'a>;
    type SerializeStructVariant = Compound<'a>;

    fn serialize_f32(self, v: f32) -> Probed {
        self.float(v as f64)
    }
    fn serialize_f64(self, v: f64) -> Probed {
        self.float(v)
    }
    fn serialize_bool(self, _: bool) -> Probed {
        Ok(())
    }
    fn serialize_i8(self, _: i8) -> Probed {
        Ok(())
    }
    fn serialize_i16(self, _: i16) -> Probed {
        Ok(())
    }
    fn serialize_i32(self, _: i32) -> Probed {
        Ok(())
    }
    fn serialize_i64(self, _: i64) -> Probed {
        Ok(())
    }
    fn serialize_u8(self, _: u8) -> Probed {
        Ok(())
    }
    fn serialize_u16(self, _: u16) -> Probed {
        Ok(())
    }
    fn serialize_u32(self, _: u32) -> Probed {
        Ok(())
    }
    fn serialize_u64(self, _: u64) -> Probed {
        Ok(())
    }
    fn serialize_char(self, _: char) -> Probed {
        Ok(())
    }
    fn serialize_str(self, _: &str) -> Probed {
        Ok(())
    }
    fn serialize_bytes(self, _: &[u8]) -> Probed {
        Ok(())
    }
    fn serialize_none(self) -> Probed {
        Ok(())
    }
    fn serialize_some<T: ?Sized + Serialize>(self, value: &T) -> Probed {
        value.serialize(self)
    }
    fn serialize_unit(self) -> Probed {
        Ok(())
    }
    fn serialize_unit_struct(self, _: &'static str) -> Probed {
        Ok(())
    }
    fn serialize_unit_variant(self, _: &'static str, _: u32, _: &'static str) -> Probed {
        Ok(())
    }
    fn serialize_newtype_struct<T: ?Sized + Serialize>(self, _: &'static str, value: &T) -> Probed {
        value.serialize(self)
    }
    fn serialize_newtype_variant<T: ?Sized + Serialize>(
        self,
        _: &'static str,
        _: u32,
        variant: &'static str,
        value: &T,
    ) -> Probed {
        self.nested(variant.to_string(), value)
    }
    fn serialize_seq(self, _: Option<usize>) -> std::result::Result<Compound<'a>, NonFinite> {
        Ok(self.compound())
    }
    fn serialize_tuple(self, _: usize) -> std::result::Result<Compound<'a>, NonFinite> {
        Ok(self.compound())
    }
    fn serialize_tuple_struct(self, _: &'static str, _: usize) -> std::result::Result<Compound<'a>, NonFinite> {
        Ok(self.compound())
    }
    fn serialize_tuple_variant(
        self,
        _: &'static str,
        _: u32,
        _: &'static str,
        _: usize,
    ) -> std::result::Result<Compound<'a>, NonFinite> {
        Ok(self.compound())
    }
    fn serialize_map(self, _: Option<usize>) -> std::result::Result<Compound<'a>, NonFinite> {
        Ok(self.compound())
    }
    fn serialize_struct(self, _: &'static str, _: usize) -> std::result::Result<Compound<'a>, NonFinite> {
        Ok(self.compound())
    }
    fn serialize_struct_variant(
        self,
        _: &'static str,
        _: u32,
        _: &'static str,
        _: usize,
    ) -> std::result::Result<Compound<'a>, NonFinite> {
        Ok(self.compound())
    }
}

impl FiniteProbe {
    fn compound(&mut self) -> Compound<'_> {
        Compound {
            probe: self,
            index: 0,
            key: String::new(),
        }
    }
}

/// Fails with the path of the first non-finite float in `value`.
pub fn check_finite<T: Serialize + ?Sized>(value: &T) -> Result<()> {
    value
        .serialize(&mut FiniteProbe::default())
        .map_err(|NonFinite(path)| Error::NonFiniteReport(path))
}

// ---------------------------------------------------------------------------
// canonical json

/// Formats a finite float with [`SIGNIFICANT_DIGITS`] significant digits in
/// plain decimal notation.
pub fn format_float(v: f64) -> String {
    let rounded = f64::from_str(&format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v)).expect("valid float");
    if rounded == 0.0 {
        return "0.0".to_string();
    }
    let s = rounded.to_string();
    if s.contains('.') {
        s
    } else {
        s + ".0"
    }
}

struct CanonicalFormatter;

impl serde_json::ser::Formatter for CanonicalFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_float(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Sorted keys, no insignificant whitespace, six significant digits.
pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    check_finite(value)?;
    // `Value` maps are ordered by key.
    let value = serde_json::to_value(value).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, CanonicalFormatter);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("json is utf-8"))
}

// ---------------------------------------------------------------------------
// csv and svg

fn edges_match(a: &Histogram, b: &Histogram) -> bool {
    a.bin_edges == b.bin_edges
}

/// `bin_lo,bin_hi,count_genuine,count_impostor`.
pub fn histogram_pair_csv(genuine: &Histogram, impostor: &Histogram) -> Result<String> {
    if !edges_match(genuine, impostor) {
        return Err(Error::BinMismatch);
    }
    let mut s = String::from("bin_lo,bin_hi,count_genuine,count_impostor\n");
    for k in 0..genuine.bins() {
        let (lo, hi) = (genuine.bin_edges[k], genuine.bin_edges[k + 1]);
        writeln!(s, "{},{},{},{}", format_float(lo), format_float(hi), genuine.counts[k], impostor.counts[k]).unwrap();
    }
    Ok(s)
}

/// `bin_lo,bin_hi,count`.
pub fn histogram_csv(h: &Histogram) -> String {
    let mut s = String::from("bin_lo,bin_hi,count\n");
    for k in 0..h.bins() {
        writeln!(s, "{},{},{}", format_float(h.bin_edges[k]), format_float(h.bin_edges[k + 1]), h.counts[k]).unwrap();
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub label: String,
    pub threshold: f64,
}

impl Marker {
    pub fn new(label: &str, threshold: f64) -> Self {
        Self {
            label: label.to_string(),
            threshold,
        }
    }
}

pub const SVG_WIDTH: f64 = 800.0;
pub const SVG_HEIGHT: f64 = 500.0;
pub const PLOT_LEFT: f64 = 60.0;
pub const PLOT_RIGHT: f64 = 20.0;
pub const PLOT_TOP: f64 = 30.0;
pub const PLOT_BOTTOM: f64 = 50.0;

pub fn plot_width() -> f64 {
    SVG_WIDTH - PLOT_LEFT - PLOT_RIGHT
}

fn plot_height() -> f64 {
    SVG_HEIGHT - PLOT_TOP - PLOT_BOTTOM
}

/// Horizontal position of score `x` on an axis spanning `[lo, hi]`.
pub fn x_position(x: f64, lo: f64, hi: f64) -> f64 {
    PLOT_LEFT + (x - lo) / (hi - lo) * plot_width()
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn density(h: &Histogram, k: usize) -> f64 {
    let width = h.bin_edges[k + 1] - h.bin_edges[k];
    if h.n_total == 0 || width <= 0.0 {
        0.0
    } else {
        h.counts[k] as f64 / (h.n_total as f64 * width)
    }
}

/// Overlaid density-normalized histograms with vertical threshold markers.
/// All series must share bin edges.
pub fn render_series(series: &[(&str, &str, &Histogram)], markers: &[Marker]) -> Result<String> {
    let first = series.first().map(|s| s.2);
    if let Some(f) = first {
        if series.iter().any(|s| !edges_match(f, s.2)) {
            return Err(Error::BinMismatch);
        }
    }
    let (lo, hi) = first.map_or((-1.0, 1.0), |h| (h.lo(), h.hi()));
    let peak = series
        .iter()
        .flat_map(|s| (0..s.2.bins()).map(|k| density(s.2, k)))
        .fold(0.0f64, f64::max);
    let base = PLOT_TOP + plot_height();

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = SVG_WIDTH,
        h = SVG_HEIGHT
    )
    .unwrap();
    writeln!(svg, r#"<rect x="0" y="0" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<g stroke="black" stroke-width="1"><line x1="{l:.2}" y1="{b:.2}" x2="{r:.2}" y2="{b:.2}"/><line x1="{l:.2}" y1="{t:.2}" x2="{l:.2}" y2="{b:.2}"/></g>"#,
        l = PLOT_LEFT,
        r = PLOT_LEFT + plot_width(),
        t = PLOT_TOP,
        b = base
    )
    .unwrap();
    for tick in 0..=4 {
        let v = lo + (hi - lo) * tick as f64 / 4.0;
        let x = x_position(v, lo, hi);
        writeln!(
            svg,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="12" text-anchor="middle">{}</text>"#,
            format_float(v),
            y = base + 18.0
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{x:.2}" y="{y:.2}" font-size="13" text-anchor="middle">cosine similarity</text>"#,
        x = PLOT_LEFT + plot_width() / 2.0,
        y = SVG_HEIGHT - 10.0
    )
    .unwrap();

    for (i, (label, color, h)) in series.iter().enumerate() {
        writeln!(svg, r#"<g fill="{}" fill-opacity="0.5">"#, escape(color)).unwrap();
        if peak > 0.0 {
            for k in 0..h.bins() {
                let d = density(h, k);
                if d == 0.0 {
                    continue;
                }
                let x0 = x_position(h.bin_edges[k], lo, hi);
                let x1 = x_position(h.bin_edges[k + 1], lo, hi);
                let height = d / peak * plot_height();
                writeln!(
                    svg,
                    r#"<rect x="{x0:.2}" y="{:.2}" width="{:.2}" height="{height:.2}"/>"#,
                    base - height,
                    x1 - x0
                )
                .unwrap();
            }
        }
        writeln!(svg, "</g>").unwrap();
        let ly = PLOT_TOP + 16.0 * (i as f64 + 1.0);
        writeln!(
            svg,
            r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" fill="{}" fill-opacity="0.5"/><text x="{:.2}" y="{ly:.2}" font-size="12">{}</text>"#,
            ly - 9.0,
            escape(color),
            PLOT_LEFT + 24.0,
            escape(label),
            x = PLOT_LEFT + 10.0
        )
        .unwrap();
    }

    for m in markers {
        let x = x_position(m.threshold, lo, hi);
        writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{t:.2}" x2="{x:.2}" y2="{b:.2}" stroke="black" stroke-dasharray="4 3"/><text x="{tx:.2}" y="{ty:.2}" font-size="12">{}</text>"#,
            escape(&m.label),
            t = PLOT_TOP,
            b = base,
            tx = x + 3.0,
            ty = PLOT_TOP + 12.0
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn render_histograms(genuine: &Histogram, impostor: &Histogram, markers: &[Marker]) -> Result<String> {
    render_series(
        &[("mated", "#1f77b4", genuine), ("non-mated", "#d62728", impostor)],
        markers,
    )
}

// ---------------------------------------------------------------------------
// emission

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Format {
    Json,
    Csv,
    Svg,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "svg" => Ok(Format::Svg),
            other => Err(Error::InvalidParameter(format!("format `{other}` (expected json|csv|svg)"))),
        }
    }
}

/// Renders every requested artifact as `(file name, contents)`.
pub fn render(report: &AuditReport, formats: &[Format], stem: &str) -> Result<Vec<(String, String)>> {
    let mut files = Vec::new();
    let mut wants: Vec<Format> = formats.to_vec();
    wants.sort();
    wants.dedup();
    for f in wants {
        match f {
            Format::Json => files.push((format!("{stem}.json"), to_canonical_json(report)?)),
            Format::Csv => {
                if let Some(b) = &report.sections.biometric {
                    let s = &b.summary;
                    files.push((
                        format!("{stem}.biometric.csv"),
                        histogram_pair_csv(&s.genuine_histogram, &s.impostor_histogram)?,
                    ));
                }
                if let Some(l) = &report.sections.leakage {
                    files.push((format!("{stem}.leakage.csv"), histogram_csv(&l.summary.histogram)));
                }
            }
            Format::Svg => {
                if let Some(b) = &report.sections.biometric {
                    let s = &b.summary;
                    let op = &s.operating_points;
                    let markers = [
                        Marker::new("EER", op.eer_threshold),
                        Marker::new("FMR100", op.fmr100_threshold),
                        Marker::new("FMR1000", op.fmr1000_threshold),
                    ];
                    let svg = render_histograms(&s.genuine_histogram, &s.impostor_histogram, &markers)?;
                    files.push((format!("{stem}.biometric.svg"), svg));
                }
                if let Some(l) = &report.sections.leakage {
                    let markers = [Marker::new("threshold", l.summary.threshold)];
                    let svg = render_series(&[("closest real", "#2ca02c", &l.summary.histogram)], &markers)?;
                    files.push((format!("{stem}.leakage.svg"), svg));
                }
            }
        }
    }
    Ok(files)
}

/// Writes `contents` to `path` through a temporary file and a rename, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = std::fs::write(&tmp, contents).and_then(|_| std::fs::rename(&tmp, path));
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::io(path, e))
}

/// Emits the requested formats into `out_dir`. Nothing is written unless
/// every artifact renders.
pub fn emit(report: &AuditReport, formats: &[Format], out_dir: impl AsRef<Path>, stem: &str) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    let files = render(report, formats, stem)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    files
        .into_iter()
        .map(|(name, contents)| {
            let path = out_dir.join(name);
            write_atomic(&path, contents.as_bytes())?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biomet::{default_histogram, summarize};

    fn report() -> AuditReport {
        let mut r = AuditReport::new();
        r.timestamp = "1970-01-01T00:00:00Z".into();
        let g: Vec<f64> = (0..50).map(|i| 0.5 + i as f64 / 200.0).collect();
        let i: Vec<f64> = (0..50).map(|i| -0.2 + i as f64 / 200.0).collect();
        r.sections.biometric = Some(BiometricSection {
            mated_sampler: "per-pair".into(),
            n_per_kind: 50,
            summary: summarize(&g, &i, 100).unwrap(),
        });
        r
    }

    #[test]
    fn float_format() {
        assert_eq!(format_float(0.123456789), "0.123457");
        assert_eq!(format_float(1.0), "1.0");
        assert_eq!(format_float(-0.0), "0.0");
        assert_eq!(format_float(18.2043), "18.2043");
        assert_eq!(format_float(1234567.0), "1234570.0");
        assert_eq!(format_float(1.5e-7), "0.00000015");
    }

    #[test]
    fn json_and_csv_give_two_files() {
        let dir = tempfile::tempdir().unwrap();
        let written = emit(&report(), &[Format::Json, Format::Csv], dir.path(), "r").unwrap();
        assert_eq!(written.len(), 2);
        let again = render(&report(), &[Format::Json], "r").unwrap();
        assert_eq!(std::fs::read_to_string(&written[0]).unwrap(), again[0].1);
    }

    #[test]
    fn nan_is_rejected_with_path() {
        let mut r = report();
        r.sections.biometric.as_mut().unwrap().summary.genuine.mean = f64::NAN;
        match to_canonical_json(&r) {
            Err(Error::NonFiniteReport(p)) => assert_eq!(p, "sections.biometric.genuine.mean"),
            other => panic!("{other:?}"),
        }
        let dir = tempfile::tempdir().unwrap();
        assert!(emit(&r, &[Format::Json], dir.path(), "r").is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn keys_are_sorted() {
        let json = to_canonical_json(&report()).unwrap();
        let pos = |k: &str| json.find(&format!("\"{k}\"")).unwrap();
        assert!(pos("inputs") < pos("schema") && pos("schema") < pos("sections"));
        assert!(json.starts_with("{\"inputs\""));
    }

    #[test]
    fn marker_position() {
        let h = default_histogram(&[]);
        let svg = render_histograms(&h, &h, &[Marker::new("EER", 0.5)]).unwrap();
        let x = PLOT_LEFT + 0.75 * plot_width();
        assert!(svg.contains(&format!(r#"x1="{x:.2}""#)));
        assert!(!svg.contains("<rect x=\"60.00\""));
    }

    #[test]
    fn mismatched_bins() {
        let a = default_histogram(&[0.1]);
        let b = crate::biomet::histogram(&[0.1], 50, -1.0, 1.0).unwrap();
        assert!(matches!(render_histograms(&a, &b, &[]), Err(Error::BinMismatch)));
        assert!(matches!(histogram_pair_csv(&a, &b), Err(Error::BinMismatch)));
    }
}
