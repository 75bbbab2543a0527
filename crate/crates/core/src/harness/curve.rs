//! Curve dumps: true and estimated revenue curves, kept points and the
//! consensus grid, as CSV.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::experiment::csv_err;
use crate::consensus::{build_estimated_profile, ConsensusParams};
use crate::error::{Error, Result};
use crate::revcurve::{revenue_curve, ValuationProfile};

/// One CSV row. `kind` is `curve` (per index), `kept` (a point `Q_j`) or
/// `grid` (a grid line `⌈c^(d+σ)⌉` at most `n`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub kind: &'static str,
    pub i: Option<usize>,
    pub iv: Option<f64>,
    pub r: Option<f64>,
    pub phi: Option<f64>,
    pub r_est: Option<f64>,
    pub v_est: Option<f64>,
    pub j: Option<i32>,
    pub count: Option<usize>,
    pub q_revenue: Option<f64>,
}

impl CurveRow {
    fn blank(kind: &'static str) -> Self {
        Self {
            kind,
            i: None,
            iv: None,
            r: None,
            phi: None,
            r_est: None,
            v_est: None,
            j: None,
            count: None,
            q_revenue: None,
        }
    }
}

/// Rows for `v` at shift `sigma`.
pub fn curve_rows(
    v: &ValuationProfile,
    params: &ConsensusParams,
    sigma: f64,
) -> Result<Vec<CurveRow>> {
    if !(0.0..1.0).contains(&sigma) {
        return Err(Error::config(format!(
            "sigma must lie in [0, 1), got {sigma}"
        )));
    }
    let curve = revenue_curve(v);
    let est = build_estimated_profile(sigma, v, params);
    let mut rows = Vec::new();
    for i in 0..v.len() {
        rows.push(CurveRow {
            i: Some(i + 1),
            iv: Some((i + 1) as f64 * v[i]),
            r: Some(curve.values()[i]),
            phi: Some(curve.virtual_values()[i]),
            r_est: Some(est.curve().values()[i]),
            v_est: Some(est.values()[i]),
            ..CurveRow::blank("curve")
        });
    }
    for q in est.kept_points() {
        rows.push(CurveRow {
            j: Some(q.j),
            count: Some(q.count),
            q_revenue: Some(q.revenue),
            ..CurveRow::blank("kept")
        });
    }
    let mut d = 0;
    loop {
        let line = params.c.powf(d as f64 + sigma).ceil();
        if line > v.len() as f64 {
            break;
        }
        rows.push(CurveRow {
            count: Some(line as usize),
            ..CurveRow::blank("grid")
        });
        d += 1;
    }
    Ok(rows)
}

/// Write the curve CSV for `v` to `out`.
pub fn emit_curve<W: Write>(
    v: &ValuationProfile,
    params: &ConsensusParams,
    sigma: f64,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in curve_rows(v, params, sigma)? {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::config(format!("csv: {e}")))
}

/// Write the curve CSV to `path`.
pub fn emit_curve_file(
    v: &ValuationProfile,
    params: &ConsensusParams,
    sigma: f64,
    path: &Path,
) -> Result<()> {
    let mut buf = Vec::new();
    emit_curve(v, params, sigma, &mut buf)?;
    super::experiment::write_file(path, &buf)
}

/// Parse a profile: numbers separated by whitespace or commas, `#` comments.
/// Values are sorted non-increasingly.
pub fn parse_profile(text: &str) -> Result<ValuationProfile> {
    let mut v = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line
            .split(|ch: char| ch == ',' || ch.is_whitespace())
            .filter(|t| !t.is_empty())
        {
            let x: f64 = tok
                .parse()
                .map_err(|_| Error::config(format!("not a number in profile: `{tok}`")))?;
            v.push(x);
        }
    }
    if v.is_empty() {
        return Err(Error::config("profile is empty"));
    }
    ValuationProfile::from_unsorted(v).map_err(|e| Error::config(e.to_string()))
}

pub fn read_profile(path: &Path) -> Result<ValuationProfile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_profile(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn render(v: &[f64], sigma: f64) -> String {
        let mut buf = Vec::new();
        let v = ValuationProfile::new(v.to_vec()).unwrap();
        emit_curve(&v, &ConsensusParams::reference(), sigma, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn r_column() {
        let v = ValuationProfile::new(vec![3.0, 2.0, 1.0]).unwrap();
        let rows = curve_rows(&v, &ConsensusParams::reference(), 0.5).unwrap();
        let r: Vec<f64> = rows
            .iter()
            .filter(|r| r.kind == "curve")
            .map(|r| r.r.unwrap())
            .collect();
        assert_eq!(r, vec![3.0, 4.0, 4.0]);
    }

    #[test]
    fn matches_the_estimate() {
        let params = ConsensusParams::reference();
        let raw: Vec<f64> = (0..60).map(|i| 1.0 + (i % 7) as f64).collect();
        let v = ValuationProfile::from_unsorted(raw).unwrap();
        let rows = curve_rows(&v, &params, 0.3).unwrap();
        let est = build_estimated_profile(0.3, &v, &params);
        let v_est: Vec<f64> = rows
            .iter()
            .filter(|r| r.kind == "curve")
            .map(|r| r.v_est.unwrap())
            .collect();
        assert_eq!(v_est, est.values());
        assert_eq!(
            rows.iter().filter(|r| r.kind == "kept").count(),
            est.kept_points().len()
        );
        assert!(rows.iter().any(|r| r.kind == "grid"));
    }

    #[test]
    fn nothing_kept_gives_a_zero_estimate() {
        let text = render(&[3.0, 2.0, 1.0], 0.5);
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let hdr = rd.headers().unwrap().clone();
        let col = hdr.iter().position(|h| h == "r_est").unwrap();
        for rec in rd.records() {
            let rec = rec.unwrap();
            if &rec[0] == "curve" {
                assert_eq!(&rec[col], "0.0");
            } else {
                assert_ne!(&rec[0], "kept");
            }
        }
    }

    #[test]
    fn profiles_parse() {
        let v = parse_profile("1, 3 2\n# note\n5").unwrap();
        assert_eq!(v.as_slice(), &[5.0, 3.0, 2.0, 1.0]);
        assert!(matches!(parse_profile("1 x"), Err(Error::Config(_))));
        assert!(matches!(parse_profile(""), Err(Error::Config(_))));
        assert!(matches!(parse_profile("-1 2"), Err(Error::Config(_))));
    }
}
