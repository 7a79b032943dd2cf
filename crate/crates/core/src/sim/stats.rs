use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::ScenarioKind;
use crate::notary::NotaryKind;

/// Wall-clock latency of one measured service call.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub run: usize,
    pub call: usize,
    pub latency_ms: f64,
}

/// Samples for one (notary, scenario) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct RunStats {
    pub notary: NotaryKind,
    pub scenario: ScenarioKind,
    pub samples: Vec<Sample>,
}

impl RunStats {
    pub fn new(notary: NotaryKind, scenario: ScenarioKind) -> Self {
        Self {
            notary,
            scenario,
            samples: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn latencies(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.latency_ms).collect()
    }

    pub fn runs(&self) -> usize {
        let mut runs: Vec<usize> = self.samples.iter().map(|s| s.run).collect();
        runs.dedup();
        runs.len()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.latencies())
    }

    pub fn median(&self) -> f64 {
        quantile_sorted(&sorted(self.latencies()), 0.5)
    }

    pub fn p95(&self) -> f64 {
        percentile_nearest_rank(&sorted(self.latencies()), 95.0)
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Linear-interpolation quantile of sorted data (the median for q = 0.5).
pub fn quantile_sorted(xs: &[f64], q: f64) -> f64 {
    match xs.len() {
        0 => f64::NAN,
        1 => xs[0],
        n => {
            let pos = q * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            xs[lo] + (xs[hi] - xs[lo]) * (pos - lo as f64)
        }
    }
}

/// Nearest-rank percentile of sorted data.
pub fn percentile_nearest_rank(xs: &[f64], p: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * xs.len() as f64).ceil().max(1.0) as usize;
    xs[rank.min(xs.len()) - 1]
}

/// Two-sided Mann-Whitney U test, normal approximation with tie and
/// continuity correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub z: f64,
    pub p_value: f64,
}

pub fn mann_whitney(a: &[f64], b: &[f64]) -> Option<MannWhitney> {
    let (n1, n2) = (a.len(), b.len());
    if n1 == 0 || n2 == 0 {
        return None;
    }
    let mut all: Vec<(f64, usize)> = a.iter().map(|&x| (x, 0)).chain(b.iter().map(|&x| (x, 1))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len();
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        rank_sum_a += rank * all[i..=j].iter().filter(|x| x.1 == 0).count() as f64;
        i = j + 1;
    }
    let (n1f, n2f, nf) = (n1 as f64, n2 as f64, n as f64);
    let u1 = rank_sum_a - n1f * (n1f + 1.0) / 2.0;
    let u2 = n1f * n2f - u1;
    let mu = n1f * n2f / 2.0;
    let sigma = (n1f * n2f / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)))).sqrt();
    if sigma == 0.0 || !sigma.is_finite() {
        return Some(MannWhitney {
            u: u1,
            z: 0.0,
            p_value: 1.0,
        });
    }
    let z = (u1.max(u2) - mu - 0.5) / sigma;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p = (2.0 * normal.sf(z)).clamp(0.0, 1.0);
    Some(MannWhitney { u: u1, z, p_value: p })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub notary: NotaryKind,
    pub scenario: ScenarioKind,
    pub n: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub scenario: ScenarioKind,
    pub a: NotaryKind,
    pub b: NotaryKind,
    pub mean_a_ms: f64,
    pub mean_b_ms: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub comparisons: Vec<Comparison>,
}

impl Summary {
    pub fn row(&self, notary: NotaryKind, scenario: ScenarioKind) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.notary == notary && r.scenario == scenario)
    }

    pub fn comparison(&self, scenario: ScenarioKind, a: NotaryKind, b: NotaryKind) -> Option<&Comparison> {
        self.comparisons
            .iter()
            .find(|c| c.scenario == scenario && ((c.a, c.b) == (a, b) || (c.a, c.b) == (b, a)))
    }

    /// Largest pairwise p-value in a scenario.
    pub fn max_p(&self, scenario: ScenarioKind) -> Option<f64> {
        self.comparisons
            .iter()
            .filter(|c| c.scenario == scenario)
            .map(|c| c.p_value)
            .reduce(f64::max)
    }
}

/// Table rows per cell plus pairwise rank tests between notaries within
/// each scenario.
pub fn summarize(stats: &[RunStats]) -> Summary {
    let mut rows: Vec<SummaryRow> = stats
        .iter()
        .map(|s| SummaryRow {
            notary: s.notary,
            scenario: s.scenario,
            n: s.n(),
            mean_ms: s.mean(),
            median_ms: s.median(),
            p95_ms: s.p95(),
        })
        .collect();
    let order = |n: NotaryKind| NotaryKind::ALL.iter().position(|k| *k == n);
    rows.sort_by_key(|r| (r.scenario, order(r.notary)));
    let mut comparisons = Vec::new();
    for scenario in ScenarioKind::ALL {
        let cells: Vec<&RunStats> = NotaryKind::ALL
            .iter()
            .filter_map(|k| stats.iter().find(|s| s.scenario == scenario && s.notary == *k))
            .collect();
        for i in 0..cells.len() {
            for j in i + 1..cells.len() {
                let (a, b) = (cells[i], cells[j]);
                if let Some(t) = mann_whitney(&a.latencies(), &b.latencies()) {
                    comparisons.push(Comparison {
                        scenario,
                        a: a.notary,
                        b: b.notary,
                        mean_a_ms: a.mean(),
                        mean_b_ms: b.mean(),
                        p_value: t.p_value,
                    });
                }
            }
        }
    }
    Summary { rows, comparisons }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:<15} {:>6} {:>10} {:>10} {:>10}",
            "notary", "scenario", "n", "mean ms", "median ms", "p95 ms"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<8} {:<15} {:>6} {:>10.3} {:>10.3} {:>10.3}",
                r.notary.as_str(),
                r.scenario.as_str(),
                r.n,
                r.mean_ms,
                r.median_ms,
                r.p95_ms
            )?;
        }
        if !self.comparisons.is_empty() {
            writeln!(f)?;
            writeln!(f, "{:<15} {:<16} {:>12}", "scenario", "pair", "p (M-W U)")?;
            for c in &self.comparisons {
                writeln!(
                    f,
                    "{:<15} {:<16} {:>12.3e}",
                    c.scenario.as_str(),
                    format!("{} vs {}", c.a.as_str(), c.b.as_str()),
                    c.p_value
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    notary: NotaryKind,
    scenario: ScenarioKind,
    run: usize,
    call: usize,
    latency_ms: f64,
}

pub fn write_csv<W: Write>(out: W, stats: &[RunStats]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for s in stats {
        for sample in &s.samples {
            w.serialize(CsvRow {
                notary: s.notary,
                scenario: s.scenario,
                run: sample.run,
                call: sample.call,
                latency_ms: sample.latency_ms,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads samples back, grouped by cell in first-seen order.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<RunStats>, csv::Error> {
    let mut out: Vec<RunStats> = Vec::new();
    for row in csv::Reader::from_reader(input).deserialize() {
        let row: CsvRow = row?;
        let sample = Sample {
            run: row.run,
            call: row.call,
            latency_ms: row.latency_ms,
        };
        match out.iter_mut().find(|s| s.notary == row.notary && s.scenario == row.scenario) {
            Some(s) => s.samples.push(sample),
            None => out.push(RunStats {
                notary: row.notary,
                scenario: row.scenario,
                samples: vec![sample],
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(notary: NotaryKind, scenario: ScenarioKind, xs: &[f64]) -> RunStats {
        RunStats {
            notary,
            scenario,
            samples: xs
                .iter()
                .enumerate()
                .map(|(i, &x)| Sample {
                    run: i / 2,
                    call: i % 2,
                    latency_ms: x,
                })
                .collect(),
        }
    }

    #[test]
    fn descriptive_statistics() {
        let s = cell(NotaryKind::Object, ScenarioKind::Sensor, &[5.0, 1.0, 3.0, 2.0, 4.0, 100.0]);
        assert_eq!(s.mean(), 115.0 / 6.0);
        assert_eq!(s.median(), 3.5);
        assert_eq!(s.p95(), 100.0);
        assert_eq!(s.runs(), 3);
        let xs: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile_nearest_rank(&xs, 95.0), 19.0);
        assert_eq!(percentile_nearest_rank(&xs[..1], 95.0), 1.0);
    }

    // Reference p-values from scipy.stats.mannwhitneyu(a, b,
    // alternative="two-sided", method="asymptotic", use_continuity=True).
    #[test]
    fn mann_whitney_matches_reference() {
        let a = [1.1, 2.2, 3.3, 4.4, 5.5, 6.6, 7.7];
        let b = [3.0, 5.0, 7.0, 9.0, 11.0, 13.0];
        let t = mann_whitney(&a, &b).unwrap();
        assert_eq!(t.u, 9.0);
        assert!((t.p_value - 0.10041249398610284).abs() < 1e-9, "{}", t.p_value);

        let a = [1.0, 2.0, 2.0, 3.0, 3.0, 3.0, 4.0];
        let b = [3.0, 3.0, 4.0, 4.0, 5.0, 5.0];
        let t = mann_whitney(&a, &b).unwrap();
        assert_eq!(t.u, 6.0);
        assert!((t.p_value - 0.03158504615162917).abs() < 1e-9, "{}", t.p_value);

        let t = mann_whitney(&[1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(t.p_value, 1.0);
        assert!(mann_whitney(&[], &[1.0]).is_none());
    }

    #[test]
    fn summary_compares_notaries_within_scenarios() {
        let stats = vec![
            cell(NotaryKind::Object, ScenarioKind::Chatbot, &[1.0, 1.1, 0.9, 1.0]),
            cell(NotaryKind::Ledger, ScenarioKind::Chatbot, &[5.0, 5.1, 4.9, 5.2]),
            cell(NotaryKind::File, ScenarioKind::Chatbot, &[2.0, 2.1, 1.9, 2.2]),
        ];
        let s = summarize(&stats);
        assert_eq!(
            s.rows.iter().map(|r| r.notary).collect::<Vec<_>>(),
            [NotaryKind::Ledger, NotaryKind::File, NotaryKind::Object]
        );
        assert_eq!(s.comparisons.len(), 3);
        let c = s.comparison(ScenarioKind::Chatbot, NotaryKind::Object, NotaryKind::Ledger).unwrap();
        assert!(c.mean_a_ms > c.mean_b_ms);
        assert!(s.max_p(ScenarioKind::Chatbot).unwrap() < 0.05);
        assert!(s.to_string().contains("ledger vs file"));

        let single = summarize(&stats[..1]);
        assert_eq!(single.rows.len(), 1);
        assert!(single.comparisons.is_empty());
    }

    #[test]
    fn csv_roundtrip() {
        let stats = vec![
            cell(NotaryKind::Ledger, ScenarioKind::Recommendation, &[1.5, 2.25]),
            cell(NotaryKind::File, ScenarioKind::Sensor, &[0.125]),
        ];
        let mut buf = Vec::new();
        write_csv(&mut buf, &stats).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("notary,scenario,run,call,latency_ms\nledger,recommendation,0,0,1.5\n"));
        assert_eq!(read_csv(&buf[..]).unwrap(), stats);
    }
}
