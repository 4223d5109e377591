//! Per-episode metrics records and their CSV files.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::{Error, Result};

pub const METRICS_COLUMNS: [&str; 11] = [
    "step",
    "episode",
    "return",
    "return_w100",
    "var_mean",
    "var_median",
    "xi_critic",
    "xi_actor",
    "ebs",
    "loss_biv",
    "loss_la",
];

/// One training episode. Diagnostic fields average the episode's updates
/// and are NaN when there were none or they do not apply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    /// Environment steps taken so far, including this episode.
    pub step: u64,
    /// 1-based.
    pub episode: usize,
    pub ret: f64,
    /// Mean return over the last `window` episodes (fewer early on).
    pub return_w100: f64,
    pub var_mean: f64,
    pub var_median: f64,
    pub xi_critic: f64,
    pub xi_actor: f64,
    pub ebs: f64,
    pub loss_biv: f64,
    pub loss_la: f64,
}

/// Shortest round-trip decimal, with `nan`, `inf` and `-inf` spelled out.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x}")
    }
}

fn parse_float(s: &str) -> Result<f64> {
    match s.trim() {
        "nan" | "NaN" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        t => t
            .parse()
            .map_err(|_| Error::config(format!("not a number in metrics file: {t:?}"))),
    }
}

impl MetricsRecord {
    fn fields(&self) -> [String; 11] {
        [
            self.step.to_string(),
            self.episode.to_string(),
            format_float(self.ret),
            format_float(self.return_w100),
            format_float(self.var_mean),
            format_float(self.var_median),
            format_float(self.xi_critic),
            format_float(self.xi_actor),
            format_float(self.ebs),
            format_float(self.loss_biv),
            format_float(self.loss_la),
        ]
    }
}

pub fn write_metrics<W: Write>(out: W, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_COLUMNS)?;
    for r in records {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics<R: Read>(input: R) -> Result<Vec<MetricsRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let headers = rd.headers()?.clone();
    if headers.iter().ne(METRICS_COLUMNS) {
        return Err(Error::config(format!(
            "unexpected metrics header {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        let f = |i: usize| parse_float(&row[i]);
        let int = |i: usize| {
            row[i]
                .trim()
                .parse::<u64>()
                .map_err(|_| Error::config(format!("bad integer in metrics file: {:?}", &row[i])))
        };
        out.push(MetricsRecord {
            step: int(0)?,
            episode: int(1)? as usize,
            ret: f(2)?,
            return_w100: f(3)?,
            var_mean: f(4)?,
            var_median: f(5)?,
            xi_critic: f(6)?,
            xi_actor: f(7)?,
            ebs: f(8)?,
            loss_biv: f(9)?,
            loss_la: f(10)?,
        });
    }
    Ok(out)
}

pub fn read_metrics_file(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = std::fs::File::open(path)?;
    read_metrics(std::io::BufReader::new(file))
}

pub fn metrics_file_name(env_seed: u64, net_seed: u64) -> String {
    format!("metrics_env{env_seed}_net{net_seed}.csv")
}

pub fn eval_file_name(env_seed: u64, net_seed: u64) -> String {
    format!("eval_env{env_seed}_net{net_seed}.csv")
}

/// Metrics files directly inside `dir`, sorted by name.
pub fn metrics_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if path.is_file() && name.starts_with("metrics_") && name.ends_with(".csv") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Mean of the last `window` entries (all of them when fewer).
pub fn windowed_mean(values: &[f64], window: usize) -> f64 {
    let tail = &values[values.len().saturating_sub(window)..];
    if tail.is_empty() {
        f64::NAN
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: usize) -> MetricsRecord {
        MetricsRecord {
            step: 10 * i as u64,
            episode: i,
            ret: 0.1 * i as f64,
            return_w100: 1.0 / 3.0,
            var_mean: f64::NAN,
            var_median: 2.5e-7,
            xi_critic: 1e300,
            xi_actor: f64::NAN,
            ebs: 31.999999,
            loss_biv: -0.0,
            loss_la: -12.75,
        }
    }

    #[test]
    fn roundtrip_preserves_every_bit() {
        let recs: Vec<_> = (1..6).map(record).collect();
        let mut buf = Vec::new();
        write_metrics(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "step,episode,return,return_w100,var_mean,var_median,xi_critic,xi_actor,ebs,loss_biv,loss_la\n"
        ));
        assert!(text.lines().nth(1).unwrap().contains(",nan,"));
        let back = read_metrics(buf.as_slice()).unwrap();
        assert_eq!(back.len(), recs.len());
        for (a, b) in recs.iter().zip(&back) {
            for (x, y) in a.fields().iter().zip(b.fields().iter()) {
                assert_eq!(x, y);
            }
            assert_eq!(a.ret.to_bits(), b.ret.to_bits());
        }
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(read_metrics("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn window_uses_available_history() {
        assert_eq!(windowed_mean(&[1.0], 100), 1.0);
        assert_eq!(windowed_mean(&[1.0, 2.0, 3.0, 6.0], 2), 4.5);
        assert!(windowed_mean(&[], 3).is_nan());
    }
}
