use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Scenario, ScenarioReport};
use crate::corpus::{Edit, ErrorType, SubsetKey};
use crate::error::{Error, Result};
use crate::eval::per_type_report;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
    Both,
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub scenario: Scenario,
    /// F-beta in points, one decimal, one value per column.
    pub values: Vec<f64>,
    /// Unweighted mean of `values`, one decimal.
    pub avg: f64,
}

/// Scenarios by test sets, F-beta in points averaged over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<SubsetKey>,
    pub rows: Vec<TableRow>,
}

impl Table {
    pub fn get(&self, scenario: Scenario, key: &SubsetKey) -> Option<f64> {
        let col = self.columns.iter().position(|k| k == key)?;
        self.rows.iter().find(|r| r.scenario == scenario).map(|r| r.values[col])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("Adapt");
        for k in &self.columns {
            let _ = write!(s, ",{k}");
        }
        s.push_str(",Avg.\n");
        for r in &self.rows {
            s.push_str(r.scenario.label());
            for v in &r.values {
                let _ = write!(s, ",{v:.1}");
            }
            let _ = writeln!(s, ",{:.1}", r.avg);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Table> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty()).enumerate();
        let parse_err = |line: usize, message: String| Error::Parse { line: line + 1, message };
        let (_, header) = lines.next().ok_or_else(|| parse_err(0, "empty table".into()))?;
        let head: Vec<&str> = header.split(',').collect();
        if head.len() < 3 || head[0] != "Adapt" || head[head.len() - 1] != "Avg." {
            return Err(parse_err(0, format!("unexpected header `{header}`")));
        }
        let columns = head[1..head.len() - 1]
            .iter()
            .map(|c| c.parse::<SubsetKey>())
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for (i, line) in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != head.len() {
                return Err(parse_err(i, format!("expected {} cells, found {}", head.len(), cells.len())));
            }
            let scenario: Scenario = cells[0].parse()?;
            let nums = cells[1..]
                .iter()
                .map(|c| c.trim().parse::<f64>().map_err(|e| parse_err(i, format!("`{c}`: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            let (avg, values) = nums.split_last().expect("at least one value");
            rows.push(TableRow {
                scenario,
                values: values.to_vec(),
                avg: *avg,
            });
        }
        Ok(Table { columns, rows })
    }

    pub fn to_markdown(&self) -> String {
        let mut header = vec!["Adapt".to_string()];
        header.extend(self.columns.iter().map(|k| k.to_string()));
        header.push("Avg.".into());
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut cells = vec![r.scenario.label().to_string()];
                cells.extend(r.values.iter().map(|v| format!("{v:.1}")));
                cells.push(format!("{:.1}", r.avg));
                cells
            })
            .collect();
        markdown(&header, &body)
    }
}

fn markdown(header: &[String], body: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| body.iter().map(|r| r[c].len()).chain([header[c].len(), 3]).max().unwrap_or(3))
        .collect();
    let line = |cells: &[String]| {
        let mut s = String::from("|");
        for (c, cell) in cells.iter().enumerate() {
            if c == 0 {
                let _ = write!(s, " {cell:<w$} |", w = widths[c]);
            } else {
                let _ = write!(s, " {cell:>w$} |", w = widths[c]);
            }
        }
        s.push('\n');
        s
    };
    let mut s = line(header);
    s.push('|');
    for (c, w) in widths.iter().enumerate() {
        if c == 0 {
            let _ = write!(s, " {} |", "-".repeat(*w));
        } else {
            let _ = write!(s, " {}: |", "-".repeat(w - 1));
        }
    }
    s.push('\n');
    for r in body {
        s.push_str(&line(r));
    }
    s
}

/// Table over `keys` with one row per configured scenario that applies to
/// all of them. Fails with the list of missing cells if any row is absent.
pub fn build_table(report: &ScenarioReport, keys: &[SubsetKey]) -> Result<Table> {
    if keys.is_empty() {
        return Err(Error::Validation("a table needs at least one column".into()));
    }
    let mut missing = Vec::new();
    let mut rows = Vec::new();
    for &s in &report.scenarios {
        if !keys.iter().all(|k| s.applies_to(k)) {
            continue;
        }
        let mut values = Vec::new();
        for k in keys {
            for &seed in &report.seeds {
                if report.row(s, k, seed).is_none() {
                    missing.push(format!("{s}/{k}/seed {seed}"));
                }
            }
            values.push(report.cell_mean(s, k).map_or(f64::NAN, |f| round1(100.0 * f)));
        }
        let avg = round1(values.iter().sum::<f64>() / values.len() as f64);
        rows.push(TableRow { scenario: s, values, avg });
    }
    if !missing.is_empty() {
        return Err(Error::Validation(format!("missing table cells: {}", missing.join(", "))));
    }
    if rows.is_empty() {
        return Err(Error::Validation("no configured scenario applies to every column".into()));
    }
    Ok(Table {
        columns: keys.to_vec(),
        rows,
    })
}

/// Writes one table per kind of key present in the report (`level`, `l1`,
/// `l1_level`) into `dir`. Returns the written paths.
pub fn emit_tables(report: &ScenarioReport, dir: &Path, format: TableFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let groups: [(&str, fn(&SubsetKey) -> bool); 3] = [
        ("level", |k| k.level.is_some() && k.l1.is_none()),
        ("l1", |k| k.l1.is_some() && k.level.is_none()),
        ("l1_level", |k| k.l1.is_some() && k.level.is_some()),
    ];
    let mut written = Vec::new();
    for (name, pick) in groups {
        let keys: Vec<SubsetKey> = report.keys.iter().copied().filter(|k| pick(k)).collect();
        if keys.is_empty() {
            continue;
        }
        let table = build_table(report, &keys)?;
        if matches!(format, TableFormat::Csv | TableFormat::Both) {
            let p = dir.join(format!("{name}.csv"));
            fs::write(&p, table.to_csv())?;
            written.push(p);
        }
        if matches!(format, TableFormat::Markdown | TableFormat::Both) {
            let p = dir.join(format!("{name}.md"));
            fs::write(&p, table.to_markdown())?;
            written.push(p);
        }
    }
    Ok(written)
}

/// Per-type F-beta change of one scenario over Random, in points.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTypeTable {
    pub system: Scenario,
    pub types: Vec<ErrorType>,
    /// `None` where the test set has no gold edit of that type.
    pub rows: Vec<(SubsetKey, Vec<Option<f64>>)>,
}

impl ErrorTypeTable {
    /// Type with the largest delta for `key`.
    pub fn argmax(&self, key: &SubsetKey) -> Option<(ErrorType, f64)> {
        let (_, cells) = self.rows.iter().find(|(k, _)| k == key)?;
        self.types
            .iter()
            .zip(cells)
            .filter_map(|(t, c)| c.map(|v| (*t, v)))
            .fold(None, |best: Option<(ErrorType, f64)>, (t, v)| match best {
                Some((_, b)) if b >= v => best,
                _ => Some((t, v)),
            })
    }

    fn cells(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut header = vec!["Key".to_string()];
        header.extend(self.types.iter().map(|t| t.as_str().to_string()));
        let body = self
            .rows
            .iter()
            .map(|(k, cells)| {
                let mut r = vec![k.to_string()];
                r.extend(cells.iter().map(|c| c.map_or(String::new(), |v| format!("{v:.1}"))));
                r
            })
            .collect();
        (header, body)
    }

    pub fn to_markdown(&self) -> String {
        let (h, b) = self.cells();
        markdown(&h, &b)
    }

    pub fn to_csv(&self) -> String {
        let (h, b) = self.cells();
        let mut s = h.join(",") + "\n";
        for r in b {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// Per-type deltas of `system` over Random for every key the scenario
/// applies to, pooling the test sets of all seeds.
pub fn emit_error_type_table(report: &ScenarioReport, system: Scenario) -> Result<ErrorTypeTable> {
    let mut rows = Vec::new();
    for key in report.keys.iter().filter(|k| system.applies_to(k)) {
        let mut sources: Vec<Vec<String>> = Vec::new();
        let mut golds: Vec<Vec<Edit>> = Vec::new();
        let mut sys: Vec<Vec<String>> = Vec::new();
        let mut base: Vec<Vec<String>> = Vec::new();
        for &seed in &report.seeds {
            let test = report
                .test_set(key, seed)
                .ok_or_else(|| Error::Validation(format!("no test set for {key}, seed {seed}")))?;
            let hyps = |s: Scenario| -> Result<&Vec<Vec<String>>> {
                let row = report
                    .row(s, key, seed)
                    .ok_or_else(|| Error::Validation(format!("no {s} result for {key}, seed {seed}")))?;
                if row.hypotheses.len() != test.sources.len() {
                    return Err(Error::Validation(format!(
                        "{s} hypotheses for {key}, seed {seed}: {} of {} sentences",
                        row.hypotheses.len(),
                        test.sources.len()
                    )));
                }
                Ok(&row.hypotheses)
            };
            sys.extend(hyps(system)?.iter().cloned());
            base.extend(hyps(Scenario::Random)?.iter().cloned());
            sources.extend(test.sources.iter().cloned());
            golds.extend(test.golds.iter().cloned());
        }
        let deltas = per_type_report(&sources, &sys, &base, &golds, report.beta, report.merge_window)?;
        let cells = ErrorType::REPORTED
            .iter()
            .map(|t| deltas.iter().find(|d| d.etype == *t).map(|d| d.delta_points))
            .collect();
        rows.push((*key, cells));
    }
    Ok(ErrorTypeTable {
        system,
        types: ErrorType::REPORTED.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Level, L1};
    use crate::eval::MetricReport;
    use crate::harness::{ReportRow, TestSet};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn report(scenarios: &[Scenario], keys: &[SubsetKey], seeds: &[u64]) -> ScenarioReport {
        let mut rows = Vec::new();
        let mut tests = Vec::new();
        for &seed in seeds {
            for (ki, k) in keys.iter().enumerate() {
                tests.push(TestSet {
                    key: *k,
                    seed,
                    sources: vec![toks("I like music")],
                    golds: vec![vec![Edit::new(2, 2, toks("the"), ErrorType::Det)]],
                });
                for (si, &s) in scenarios.iter().enumerate() {
                    if !s.applies_to(k) {
                        continue;
                    }
                    let mut metrics = MetricReport::from_counts(1, 1, 1, 0.5).unwrap();
                    metrics.f_beta = 0.1 * si as f64 + 0.01 * ki as f64 + 0.001 * seed as f64;
                    rows.push(ReportRow {
                        scenario: s,
                        key: *k,
                        seed,
                        metrics,
                        error_rate: 10.0,
                        hypotheses: vec![if s == Scenario::Random { toks("I like music") } else { toks("I like the music") }],
                    });
                }
            }
        }
        ScenarioReport {
            scenarios: scenarios.to_vec(),
            keys: keys.to_vec(),
            seeds: seeds.to_vec(),
            beta: 0.5,
            merge_window: 2,
            rows,
            tests,
        }
    }

    #[test]
    fn single_cell_table() {
        let k = SubsetKey::level(Level::A2);
        let r = report(&[Scenario::Unadapted], &[k], &[1]);
        let t = build_table(&r, &[k]).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].values, vec![0.1]);
        assert_eq!(t.rows[0].avg, 0.1);
    }

    #[test]
    fn avg_and_csv_round_trip() {
        let keys = [SubsetKey::l1_level(L1::Spanish, Level::A2), SubsetKey::l1_level(L1::Chinese, Level::C1)];
        let r = report(&Scenario::ALL, &keys, &[1, 2, 3]);
        r.check_complete().unwrap();
        let t = build_table(&r, &keys).unwrap();
        assert_eq!(t.rows.len(), 5);
        for row in &t.rows {
            let mean = row.values.iter().sum::<f64>() / row.values.len() as f64;
            assert!((row.avg - mean).abs() <= 0.05 + 1e-9);
        }
        assert_eq!(Table::from_csv(&t.to_csv()).unwrap(), t);
        let md = t.to_markdown();
        assert!(md.contains("L1 & Level") && md.contains("Avg."));
    }

    #[test]
    fn missing_cells_are_listed() {
        let keys = [SubsetKey::l1(L1::Spanish)];
        let mut r = report(&[Scenario::Unadapted, Scenario::L1], &keys, &[1, 2]);
        r.rows.retain(|x| !(x.scenario == Scenario::L1 && x.seed == 2));
        let err = build_table(&r, &keys).unwrap_err().to_string();
        assert!(err.contains("L1/ES/seed 2"), "{err}");
        assert!(r.check_complete().is_err());
    }

    #[test]
    fn error_type_table_rules() {
        let keys = [SubsetKey::l1_level(L1::Spanish, Level::A2)];
        let r = report(&Scenario::ALL, &keys, &[1]);
        let t = emit_error_type_table(&r, Scenario::L1Level).unwrap();
        let (_, cells) = &t.rows[0];
        assert_eq!(cells[0], Some(100.0));
        assert!(cells[1..].iter().all(Option::is_none));
        assert_eq!(t.argmax(&keys[0]), Some((ErrorType::Det, 100.0)));
        assert!(t.to_csv().lines().nth(1).unwrap().ends_with(",,,,,,"));
        let same = emit_error_type_table(&r, Scenario::Random).unwrap();
        assert_eq!(same.rows[0].1[0], Some(0.0));
        let mut broken = r.clone();
        broken.rows.iter_mut().for_each(|x| x.hypotheses.clear());
        assert!(emit_error_type_table(&broken, Scenario::L1Level).is_err());
    }
}
