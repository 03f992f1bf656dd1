//! Published Dice column of the modality-combination table, used to exercise
//! the extraction logic. These values are never compared against phantom
//! results.

use crate::error::{Error, Result};

/// `(task, combination, "mean±sem")`, in table order.
pub const COMBO_TABLE_DICE: [(&str, &str, &str); 24] = [
    ("iMag", "iMag", "0.69±0.02"),
    ("iMag", "iMag+QSM", "0.58±0.03"),
    ("iMag", "iMag+R2*", "0.69±0.02"),
    ("iMag", "iMag+SWI", "0.7±0.02"),
    ("iMag", "iMag+QSM+R2*", "0.65±0.03"),
    ("iMag", "iMag+QSM+SWI", "0.67±0.02"),
    ("iMag", "iMag+R2*+SWI", "0.72±0.02"),
    ("iMag", "iMag+QSM+R2*+SWI", "0.69±0.03"),
    ("QSM", "QSM", "0.79±0.02"),
    ("QSM", "iMag+QSM", "0.8±0.02"),
    ("QSM", "QSM+R2*", "0.79±0.02"),
    ("QSM", "QSM+SWI", "0.8±0.01"),
    ("QSM", "iMag+QSM+R2*", "0.77±0.02"),
    ("QSM", "iMag+QSM+SWI", "0.78±0.02"),
    ("QSM", "QSM+R2*+SWI", "0.75±0.02"),
    ("QSM", "iMag+QSM+R2*+SWI", "0.76±0.02"),
    ("R2*", "R2*", "0.64±0.03"),
    ("R2*", "iMag+R2*", "0.58±0.03"),
    ("R2*", "QSM+R2*", "0.62±0.03"),
    ("R2*", "R2*+SWI", "0.59±0.02"),
    ("R2*", "iMag+QSM+R2*", "0.68±0.02"),
    ("R2*", "iMag+R2*+SWI", "0.58±0.04"),
    ("R2*", "QSM+R2*+SWI", "0.64±0.03"),
    ("R2*", "iMag+QSM+R2*+SWI", "0.64±0.02"),
];

/// Parses `"mean±sem"`.
pub fn parse_mean_sem(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::Config(format!("expected mean±sem, got {s:?}"));
    let (m, e) = s.split_once('±').ok_or_else(bad)?;
    Ok((
        m.trim().parse().map_err(|_| bad())?,
        e.trim().parse().map_err(|_| bad())?,
    ))
}

/// Combination with the highest mean; ties go to the smaller SEM, then to
/// the earlier row.
pub fn best_combo<'a>(rows: impl IntoIterator<Item = (&'a str, (f64, f64))>) -> Option<&'a str> {
    let mut best: Option<(&str, f64, f64)> = None;
    for (label, (mean, sem)) in rows {
        let better = match best {
            None => true,
            Some((_, bm, bs)) => mean > bm || (mean == bm && sem < bs),
        };
        if better {
            best = Some((label, mean, sem));
        }
    }
    best.map(|b| b.0)
}

/// Best Dice combination per task of the embedded table.
pub fn fixture_best_combos() -> Result<Vec<(&'static str, &'static str)>> {
    let mut out = Vec::new();
    for task in ["iMag", "QSM", "R2*"] {
        let rows = COMBO_TABLE_DICE
            .iter()
            .filter(|r| r.0 == task)
            .map(|r| parse_mean_sem(r.2).map(|v| (r.1, v)))
            .collect::<Result<Vec<_>>>()?;
        let best = best_combo(rows).ok_or_else(|| Error::Config(format!("no rows for {task}")))?;
        out.push((task, best));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_cells() {
        assert_eq!(parse_mean_sem("0.8±0.01").unwrap(), (0.8, 0.01));
        assert!(parse_mean_sem("0.8").is_err());
    }

    #[test]
    fn tie_breaks_on_sem_then_order() {
        let rows = [("a", (0.8, 0.02)), ("b", (0.8, 0.01)), ("c", (0.8, 0.01))];
        assert_eq!(best_combo(rows), Some("b"));
        assert_eq!(best_combo(std::iter::empty()), None);
    }
}
