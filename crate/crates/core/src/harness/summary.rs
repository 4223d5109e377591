//! Episodes-to-solve and nearest-rank percentile summaries.

use std::fmt;
use std::path::Path;

use super::metrics::{metrics_files, read_metrics_file};
use crate::{Error, Result};

/// Episodes needed to solve a task. `Max` (never solved) sorts after every count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SolveResult {
    Episode(usize),
    Max,
}

impl fmt::Display for SolveResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolveResult::Episode(e) => write!(f, "{e}"),
            SolveResult::Max => write!(f, "max"),
        }
    }
}

/// First 1-based episode `e >= window` whose trailing `window` returns
/// average at least `threshold`.
pub fn episodes_to_solve(returns: &[f64], threshold: f64, window: usize) -> Result<SolveResult> {
    if window == 0 {
        return Err(Error::config("window must be at least 1"));
    }
    let w = window as f64;
    for e in window..=returns.len() {
        if returns[e - window..e].iter().sum::<f64>() / w >= threshold {
            return Ok(SolveResult::Episode(e));
        }
    }
    Ok(SolveResult::Max)
}

/// Nearest-rank percentile: the element of rank `ceil(p * n)` (at least 1)
/// in ascending order.
pub fn nearest_rank<T: Ord + Clone>(values: &[T], p: f64) -> Option<T> {
    if values.is_empty() || !(0.0..=1.0).contains(&p) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort();
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1].clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveSummary {
    /// Metrics file name and its result.
    pub runs: Vec<(String, SolveResult)>,
    pub p25: SolveResult,
    pub p50: SolveResult,
    pub p75: SolveResult,
}

impl SolveSummary {
    pub fn from_results(runs: Vec<(String, SolveResult)>) -> Result<Self> {
        let values: Vec<SolveResult> = runs.iter().map(|(_, r)| *r).collect();
        let pick = |p| nearest_rank(&values, p).ok_or_else(|| Error::config("no runs to summarise"));
        Ok(Self {
            p25: pick(0.25)?,
            p50: pick(0.5)?,
            p75: pick(0.75)?,
            runs,
        })
    }
}

impl fmt::Display for SolveSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, r) in &self.runs {
            writeln!(f, "{name}: {r}")?;
        }
        write!(f, "percentiles 25/50/75: {} - {} - {}", self.p25, self.p50, self.p75)
    }
}

/// Summarises every metrics file directly inside `dir`.
pub fn summarize(dir: &Path, threshold: f64, window: usize) -> Result<SolveSummary> {
    if !dir.is_dir() {
        return Err(Error::config(format!("{} is not a directory", dir.display())));
    }
    let files = metrics_files(dir)?;
    if files.is_empty() {
        return Err(Error::config(format!("no metrics files in {}", dir.display())));
    }
    let mut runs = Vec::with_capacity(files.len());
    for path in files {
        let returns: Vec<f64> = read_metrics_file(&path)?.iter().map(|r| r.ret).collect();
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        runs.push((name, episodes_to_solve(&returns, threshold, window)?));
    }
    SolveSummary::from_results(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use SolveResult::{Episode, Max};

    // Integer arithmetic: sum >= threshold * window, no division.
    fn oracle(returns: &[i64], threshold: i64, window: usize) -> SolveResult {
        (window..=returns.len())
            .find(|&e| returns[e - window..e].iter().sum::<i64>() >= threshold * window as i64)
            .map_or(Max, Episode)
    }

    #[test]
    fn step_change_solves_at_194() {
        let mut r = vec![0.0; 100];
        r.extend(vec![800.0; 100]);
        assert_eq!(episodes_to_solve(&r, 750.0, 100).unwrap(), Episode(194));
    }

    #[test]
    fn constant_at_threshold_solves_at_window() {
        assert_eq!(episodes_to_solve(&[750.0; 300], 750.0, 100).unwrap(), Episode(100));
        assert_eq!(episodes_to_solve(&[1.0; 3], 1.0, 1).unwrap(), Episode(1));
    }

    #[test]
    fn never_reaching_threshold_is_max() {
        assert_eq!(episodes_to_solve(&[749.0; 500], 750.0, 100).unwrap(), Max);
        assert_eq!(episodes_to_solve(&[800.0; 99], 750.0, 100).unwrap(), Max);
        assert!(episodes_to_solve(&[1.0], 0.0, 0).unwrap_err().is_config());
    }

    #[test]
    fn nearest_rank_rule() {
        let v = [Episode(400), Episode(100), Episode(300), Episode(200)];
        assert_eq!(nearest_rank(&v, 0.25), Some(Episode(100)));
        assert_eq!(nearest_rank(&v, 0.5), Some(Episode(200)));
        assert_eq!(nearest_rank(&v, 0.75), Some(Episode(300)));
        assert_eq!(nearest_rank(&v, 0.0), Some(Episode(100)));
        assert_eq!(nearest_rank(&v, 1.0), Some(Episode(400)));
    }

    #[test]
    fn single_seed_gives_equal_percentiles() {
        let s = SolveSummary::from_results(vec![("a".into(), Episode(150))]).unwrap();
        assert_eq!((s.p25, s.p50, s.p75), (Episode(150), Episode(150), Episode(150)));
    }

    #[test]
    fn sentinels_rank_last() {
        let runs = [Max, Episode(120), Max, Episode(90), Episode(300)]
            .iter()
            .enumerate()
            .map(|(i, r)| (i.to_string(), *r))
            .collect();
        let s = SolveSummary::from_results(runs).unwrap();
        assert_eq!((s.p25, s.p50, s.p75), (Episode(120), Episode(300), Max));
        assert_eq!(Max.to_string(), "max");
    }

    proptest! {
        #[test]
        fn matches_enumeration(
            returns in proptest::collection::vec(-5i64..5, 0..60),
            threshold in -3i64..4,
            window in 1usize..12,
        ) {
            let r: Vec<f64> = returns.iter().map(|&x| x as f64).collect();
            let got = episodes_to_solve(&r, threshold as f64, window).unwrap();
            prop_assert_eq!(got, oracle(&returns, threshold, window));
        }
    }
}
