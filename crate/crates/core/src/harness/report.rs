//! Table-shaped CSV and markdown reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::plan::{combo_label, display_name};
use super::sweep::RunResult;
use crate::error::{Error, Result};
use crate::fusion::ModelKind;
use crate::metrics::{Better, Metric, MetricsReport, Summary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableKind {
    Combos,
    Fractions,
}

impl TableKind {
    fn key(self) -> &'static str {
        match self {
            TableKind::Combos => "combos",
            TableKind::Fractions => "fractions",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "combos" => Ok(TableKind::Combos),
            "fractions" => Ok(TableKind::Fractions),
            _ => Err(Error::Config(format!("unknown table kind {s:?}"))),
        }
    }
}

/// One metric of one row: mean over seeds of the per-seed test means, the
/// across-subject SEM averaged over seeds, and the across-seed spread.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Cell {
    pub mean: Option<f64>,
    pub sem: Option<f64>,
    pub seed_sd: Option<f64>,
    /// Subjects without a defined value, summed over seeds.
    pub excluded: usize,
}

impl Cell {
    pub fn from_seeds(summaries: &[Summary]) -> Cell {
        let means: Vec<f64> = summaries.iter().filter_map(|s| s.mean).collect();
        let sems: Vec<f64> = summaries.iter().filter_map(|s| s.sem).collect();
        let avg = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let mean = avg(&means);
        let seed_sd = (means.len() >= 2).then(|| {
            let m = mean.unwrap();
            (means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64).sqrt()
        });
        Cell {
            mean,
            sem: avg(&sems),
            seed_sd,
            excluded: summaries.iter().map(|s| s.excluded).sum(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub model: ModelKind,
    pub task: String,
    pub combo: String,
    pub n: usize,
    pub fraction: f64,
    pub seeds: usize,
    pub cells: [Cell; 7],
    /// Metrics for which this row is best within its group.
    pub best: Vec<Metric>,
}

impl Row {
    pub fn cell(&self, m: Metric) -> Cell {
        self.cells[Metric::ALL.iter().position(|&x| x == m).unwrap()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub kind: TableKind,
    pub rows: Vec<Row>,
}

pub fn columns() -> Vec<String> {
    let mut cols: Vec<String> = ["table", "model", "task", "combo", "n", "fraction", "seeds"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for m in Metric::ALL {
        for suffix in ["mean", "sem", "seed_sd", "excluded"] {
            cols.push(format!("{}_{suffix}", m.key()));
        }
    }
    cols.push("best".into());
    cols
}

fn group_key(kind: TableKind, r: &Row) -> (String, usize) {
    match kind {
        TableKind::Combos => (r.task.clone(), 0),
        TableKind::Fractions => (r.task.clone(), r.n),
    }
}

fn score(m: Metric, v: f64) -> f64 {
    match m.better() {
        Better::Higher => v,
        Better::Lower => -v,
        Better::NearZero => -v.abs(),
    }
}

impl Table {
    /// Groups runs into rows (model, combo, fraction) in first-seen order.
    pub fn from_runs(kind: TableKind, runs: &[RunResult]) -> Table {
        let mut groups: Vec<(&RunResult, Vec<&MetricsReport>)> = Vec::new();
        for r in runs {
            let same = |g: &RunResult| {
                g.spec.kind == r.spec.kind
                    && g.spec.target == r.spec.target
                    && g.spec.combo == r.spec.combo
                    && g.spec.fraction == r.spec.fraction
            };
            match groups.iter_mut().find(|(g, _)| same(g)) {
                Some((_, reports)) => reports.push(&r.test),
                None => groups.push((r, vec![&r.test])),
            }
        }
        let rows = groups
            .into_iter()
            .map(|(first, reports)| Row {
                model: first.spec.kind,
                task: display_name(&first.spec.target).to_string(),
                combo: match first.spec.kind {
                    ModelKind::Baseline => display_name(&first.spec.target).to_string(),
                    ModelKind::Proposed => combo_label(&first.spec.combo),
                },
                n: first.n(),
                fraction: first.spec.fraction,
                seeds: reports.len(),
                cells: Metric::ALL.map(|m| {
                    let s: Vec<Summary> = reports.iter().map(|r| r.summary(m)).collect();
                    Cell::from_seeds(&s)
                }),
                best: Vec::new(),
            })
            .collect();
        let mut t = Table { kind, rows };
        t.mark_best();
        t
    }

    /// Flags, per metric and group, every row that attains the best mean.
    pub fn mark_best(&mut self) {
        for r in &mut self.rows {
            r.best.clear();
        }
        for m in Metric::ALL {
            let mut best: Vec<((String, usize), f64)> = Vec::new();
            for r in &self.rows {
                let Some(v) = r.cell(m).mean else { continue };
                let key = group_key(self.kind, r);
                match best.iter_mut().find(|(k, _)| *k == key) {
                    Some((_, b)) => *b = b.max(score(m, v)),
                    None => best.push((key, score(m, v))),
                }
            }
            for r in &mut self.rows {
                let key = group_key(self.kind, r);
                let Some(v) = r.cell(m).mean else { continue };
                if let Some((_, b)) = best.iter().find(|(k, _)| *k == key) {
                    if (score(m, v) - b).abs() <= 1e-12 {
                        r.best.push(m);
                    }
                }
            }
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(columns())?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let mut rec = vec![
                self.kind.key().to_string(),
                r.model.to_string(),
                r.task.clone(),
                r.combo.clone(),
                r.n.to_string(),
                r.fraction.to_string(),
                r.seeds.to_string(),
            ];
            for c in &r.cells {
                rec.extend([opt(c.mean), opt(c.sem), opt(c.seed_sd), c.excluded.to_string()]);
            }
            rec.push(r.best.iter().map(|m| m.key()).collect::<Vec<_>>().join(";"));
            w.write_record(&rec)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses a CSV produced by [`Table::to_csv`]; an empty body yields an
    /// empty combination table.
    pub fn from_csv(text: &str) -> Result<Table> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        if header != columns() {
            return Err(Error::Config("unexpected report columns".into()));
        }
        let bad = |what: &str| Error::Config(format!("malformed report field: {what}"));
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(s))
            }
        };
        let mut kind = TableKind::Combos;
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            kind = TableKind::parse(&rec[0])?;
            let model = match &rec[1] {
                "baseline" => ModelKind::Baseline,
                "proposed" => ModelKind::Proposed,
                other => return Err(bad(other)),
            };
            let mut cells = [Cell::default(); 7];
            for (i, c) in cells.iter_mut().enumerate() {
                let at = 7 + 4 * i;
                *c = Cell {
                    mean: num(&rec[at])?,
                    sem: num(&rec[at + 1])?,
                    seed_sd: num(&rec[at + 2])?,
                    excluded: rec[at + 3].parse().map_err(|_| bad(&rec[at + 3]))?,
                };
            }
            let best = rec[35]
                .split(';')
                .filter(|s| !s.is_empty())
                .map(|s| Metric::from_key(s).ok_or_else(|| bad(s)))
                .collect::<Result<Vec<_>>>()?;
            rows.push(Row {
                model,
                task: rec[2].to_string(),
                combo: rec[3].to_string(),
                n: rec[4].parse().map_err(|_| bad(&rec[4]))?,
                fraction: rec[5].parse().map_err(|_| bad(&rec[5]))?,
                seeds: rec[6].parse().map_err(|_| bad(&rec[6]))?,
                cells,
                best,
            });
        }
        Ok(Table { kind, rows })
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let lead = match self.kind {
            TableKind::Combos => "| Task | Modalities | n |",
            TableKind::Fractions => "| Model | Task | n |",
        };
        out.push_str(lead);
        for m in Metric::ALL {
            let _ = write!(out, " {} |", m.label());
        }
        out.push('\n');
        out.push_str(&"|---".repeat(3 + Metric::ALL.len()));
        out.push_str("|\n");
        for r in &self.rows {
            match self.kind {
                TableKind::Combos => {
                    let _ = write!(out, "| {} | {} | {} |", r.task, r.combo, r.n);
                }
                TableKind::Fractions => {
                    let _ = write!(out, "| {} | {} | {} |", r.model, r.task, r.n);
                }
            }
            for m in Metric::ALL {
                let c = r.cell(m);
                let mut text = match (c.mean, c.sem) {
                    (Some(mean), Some(sem)) => format!("{mean:.2}±{sem:.2}"),
                    (Some(mean), None) => format!("{mean:.2}"),
                    _ => "n/a".into(),
                };
                if let Some(sd) = c.seed_sd {
                    let _ = write!(text, " (sd {sd:.2})");
                }
                if r.best.contains(&m) {
                    text = format!("**{text}**");
                }
                let _ = write!(out, " {text} |");
            }
            out.push('\n');
        }
        out.push_str(
            "\nmean±SEM: SEM across test subjects (averaged over seeds); sd: spread of the mean across seeds.\n",
        );
        out
    }
}

/// Per-epoch training curves of every run.
pub fn curves_csv(runs: &[RunResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "model", "task", "combo", "n", "seed", "epoch", "train_loss", "train_dice", "val_dice",
    ])?;
    for r in runs {
        for e in &r.log {
            w.write_record([
                r.spec.kind.to_string(),
                r.spec.target.clone(),
                combo_label(&r.spec.combo),
                r.n().to_string(),
                r.spec.seed.to_string(),
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.train_dice.to_string(),
                e.val_dice.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
}

/// Per-subject metrics followed by `mean` and `sem` rows.
pub fn subject_csv(report: &MetricsReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["subject".to_string()];
    header.extend(Metric::ALL.iter().map(|m| m.key().to_string()));
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in &report.subjects {
        let mut rec = vec![s.subject.clone()];
        rec.extend(Metric::ALL.iter().map(|&m| opt(s.get(m))));
        w.write_record(&rec)?;
    }
    for (label, pick) in [("mean", 0), ("sem", 1)] {
        let mut rec = vec![label.to_string()];
        rec.extend(Metric::ALL.iter().map(|&m| {
            let s = report.summary(m);
            opt(if pick == 0 { s.mean } else { s.sem })
        }));
        w.write_record(&rec)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
}

/// Writes `<name>.csv`, `<name>.md`, `<name>_curves.csv` and
/// `<name>_runs.json` into `dir`.
pub fn write_outputs(dir: &Path, name: &str, kind: TableKind, runs: &[RunResult]) -> Result<Table> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let table = Table::from_runs(kind, runs);
    let write = |file: String, body: &[u8]| {
        let p = dir.join(file);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write(format!("{name}.csv"), table.to_csv()?.as_bytes())?;
    write(format!("{name}.md"), table.to_markdown().as_bytes())?;
    write(format!("{name}_curves.csv"), curves_csv(runs)?.as_bytes())?;
    write(format!("{name}_runs.json"), &serde_json::to_vec_pretty(runs)?)?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(model: ModelKind, n: usize, dice: f64, hd: f64, mver: f64) -> Row {
        let mut cells = [Cell::default(); 7];
        cells[0].mean = Some(dice);
        cells[0].sem = Some(0.01);
        cells[1].mean = Some(hd);
        cells[4].mean = Some(mver);
        cells[4].excluded = 2;
        Row {
            model,
            task: "QSM".into(),
            combo: "QSM+SWI".into(),
            n,
            fraction: 0.075,
            seeds: 1,
            cells,
            best: vec![],
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = Table {
            kind: TableKind::Fractions,
            rows: vec![],
        };
        let csv = t.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 1);
        assert_eq!(csv.trim_end(), columns().join(","));
    }

    #[test]
    fn rows_round_trip_byte_identically() {
        let mut t = Table {
            kind: TableKind::Fractions,
            rows: vec![
                row(ModelKind::Baseline, 4, 0.1 + 0.2, 3.5, -0.25),
                row(ModelKind::Proposed, 4, 0.8, 1.0 / 3.0, 0.1),
            ],
        };
        t.mark_best();
        let csv = t.to_csv().unwrap();
        let parsed = Table::from_csv(&csv).unwrap();
        assert_eq!(parsed, t);
        assert_eq!(parsed.to_csv().unwrap(), csv);
    }

    #[test]
    fn best_flags_follow_metric_direction() {
        let mut t = Table {
            kind: TableKind::Fractions,
            rows: vec![
                row(ModelKind::Baseline, 4, 0.5, 3.0, -0.1),
                row(ModelKind::Proposed, 4, 0.8, 5.0, 0.3),
                row(ModelKind::Baseline, 8, 0.9, 9.0, 0.5),
            ],
        };
        t.mark_best();
        assert_eq!(t.rows[0].best, vec![Metric::Hd95, Metric::Mver]);
        assert_eq!(t.rows[1].best, vec![Metric::Dice]);
        // alone in its group
        assert_eq!(t.rows[2].best, vec![Metric::Dice, Metric::Hd95, Metric::Mver]);
    }

    #[test]
    fn column_schema() {
        let c = columns();
        assert_eq!(c.len(), 36);
        assert_eq!(&c[7..11], ["dice_mean", "dice_sem", "dice_seed_sd", "dice_excluded"]);
        assert_eq!(c[11], "hd95_mean");
        assert_eq!(c[31], "pearson_r_mean");
    }

    #[test]
    fn cell_aggregates_over_seeds() {
        let s = |m: f64, sem: f64| Summary {
            mean: Some(m),
            sem: Some(sem),
            n: 16,
            excluded: 1,
        };
        let c = Cell::from_seeds(&[s(0.7, 0.02), s(0.9, 0.04)]);
        assert!((c.mean.unwrap() - 0.8).abs() < 1e-12);
        assert!((c.sem.unwrap() - 0.03).abs() < 1e-12);
        assert!((c.seed_sd.unwrap() - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!(c.excluded, 2);
        assert_eq!(Cell::from_seeds(&[s(0.7, 0.02)]).seed_sd, None);
    }
}
