//! Per-class Dice scores, confusion matrices and comparison tables.

use std::fmt::Write as _;

use crate::error::{config_err, format_err, shape_err, Error, Result};
use crate::label::LabelMap;
use crate::phantom::{CLASS_KEYS, CLASS_NAMES, NUM_CLASSES};

/// Dice scores of one model on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct DiceReport {
    pub model_tag: String,
    /// Indexed by class.
    pub per_class: Vec<f64>,
    /// Mean over the classes present in the reference labels.
    pub mean_dice: f64,
    pub n_samples: usize,
}

impl DiceReport {
    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.model_tag = tag.into();
        self
    }
}

/// `K×K` pixel counts; entry `(i, j)` counts truth `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.classes..(truth + 1) * self.classes].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, pred)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `2·M_cc / (row_c + col_c)`, with 1.0 when the class is absent from both.
    pub fn dice(&self, class: usize) -> f64 {
        let denom = self.row_sum(class) + self.col_sum(class);
        if denom == 0 {
            1.0
        } else {
            2.0 * self.get(class, class) as f64 / denom as f64
        }
    }

    pub fn report(&self, n_samples: usize) -> DiceReport {
        let per_class: Vec<f64> = (0..self.classes).map(|c| self.dice(c)).collect();
        let present: Vec<f64> = (0..self.classes)
            .filter(|&c| self.row_sum(c) > 0)
            .map(|c| per_class[c])
            .collect();
        let mean_dice = if present.is_empty() {
            1.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        DiceReport {
            model_tag: String::new(),
            per_class,
            mean_dice,
            n_samples,
        }
    }
}

pub fn confusion_matrix(pred: &[LabelMap], truth: &[LabelMap], classes: usize) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return shape_err(format!(
            "{} predictions for {} reference maps",
            pred.len(),
            truth.len()
        ));
    }
    let mut counts = vec![0u64; classes * classes];
    for (p, t) in pred.iter().zip(truth) {
        if (p.height(), p.width()) != (t.height(), t.width()) {
            return shape_err(format!(
                "prediction {}×{} vs reference {}×{}",
                p.height(),
                p.width(),
                t.height(),
                t.width()
            ));
        }
        p.check_range(classes)?;
        t.check_range(classes)?;
        for (&pc, &tc) in p.data().iter().zip(t.data()) {
            counts[tc as usize * classes + pc as usize] += 1;
        }
    }
    Ok(ConfusionMatrix { classes, counts })
}

/// Batch-pooled Dice per class: intersections and set sizes are summed over
/// all samples before dividing.
pub fn dice_per_class(pred: &[LabelMap], truth: &[LabelMap], classes: usize) -> Result<DiceReport> {
    Ok(confusion_matrix(pred, truth, classes)?.report(truth.len()))
}

/// Elementwise mean of reports that share a tag.
pub fn average_reports(reports: &[&DiceReport]) -> Result<DiceReport> {
    let first = match reports.first() {
        Some(r) => r,
        None => return config_err("cannot average zero reports"),
    };
    let k = first.per_class.len();
    if reports.iter().any(|r| r.per_class.len() != k) {
        return shape_err("reports cover different class counts");
    }
    let n = reports.len() as f64;
    let per_class = (0..k)
        .map(|c| reports.iter().map(|r| r.per_class[c]).sum::<f64>() / n)
        .collect();
    Ok(DiceReport {
        model_tag: first.model_tag.clone(),
        per_class,
        mean_dice: reports.iter().map(|r| r.mean_dice).sum::<f64>() / n,
        n_samples: reports.iter().map(|r| r.n_samples).sum(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub text: String,
    pub csv: String,
}

fn class_headers(classes: usize, names: &[&'static str; NUM_CLASSES]) -> Vec<String> {
    if classes == NUM_CLASSES {
        names.iter().map(|s| s.to_string()).collect()
    } else {
        (0..classes).map(|c| format!("class{c}")).collect()
    }
}

pub const CSV_HEADER: &str = "model,background,wm,gm,csf,bone,skin,cavities,eyes,ventricles,mean";

/// Renders one row per report: a fixed-width text table with two decimals and
/// a CSV with full precision.
pub fn render_comparison_table(reports: &[DiceReport]) -> Result<ComparisonTable> {
    let first = match reports.first() {
        Some(r) => r,
        None => return config_err("no reports to render"),
    };
    let k = first.per_class.len();
    if reports.iter().any(|r| r.per_class.len() != k) {
        return shape_err("reports cover different class counts");
    }

    let mut text_headers = vec!["Model".to_string()];
    text_headers.extend(class_headers(k, &CLASS_NAMES));
    text_headers.push("mean".into());
    let tag_width = reports
        .iter()
        .map(|r| r.model_tag.len())
        .chain([5])
        .max()
        .unwrap_or(5);
    let mut text = String::new();
    let header: Vec<String> = text_headers
        .iter()
        .enumerate()
        .map(|(i, h)| {
            if i == 0 {
                format!("{h:<tag_width$}")
            } else {
                format!("{h:>w$}", w = h.len().max(4))
            }
        })
        .collect();
    let _ = writeln!(text, "{}", header.join(" | "));
    let _ = writeln!(text, "{}", "-".repeat(header.join(" | ").len()));
    for r in reports {
        let mut cells = vec![format!("{:<tag_width$}", r.model_tag)];
        for (i, v) in r.per_class.iter().chain([&r.mean_dice]).enumerate() {
            let w = text_headers[i + 1].len().max(4);
            cells.push(format!("{v:>w$.2}"));
        }
        let _ = writeln!(text, "{}", cells.join(" | "));
    }

    let mut csv = String::new();
    if k == NUM_CLASSES {
        csv.push_str(CSV_HEADER);
    } else {
        let mut cols = vec!["model".to_string()];
        cols.extend(class_headers(k, &CLASS_KEYS));
        cols.push("mean".into());
        csv.push_str(&cols.join(","));
    }
    csv.push('\n');
    for r in reports {
        if r.model_tag.contains([',', '\n', '"']) {
            return config_err(format!("model tag `{}` cannot be written to CSV", r.model_tag));
        }
        csv.push_str(&r.model_tag);
        for v in r.per_class.iter().chain([&r.mean_dice]) {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    Ok(ComparisonTable { text, csv })
}

/// Parses CSV produced by [`render_comparison_table`]. Sample counts are not
/// stored in the CSV and come back as zero.
pub fn parse_comparison_csv(csv: &str) -> Result<Vec<DiceReport>> {
    let mut lines = csv.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty CSV".into()))?;
    let columns = header.split(',').count();
    if columns < 3 || !header.starts_with("model,") || !header.ends_with(",mean") {
        return format_err(format!("unexpected CSV header `{header}`"));
    }
    let mut reports = Vec::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns {
            return format_err(format!("row `{line}` has {} fields, expected {columns}", fields.len()));
        }
        let values = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| Error::Format(format!("bad number `{f}`"))))
            .collect::<Result<Vec<f64>>>()?;
        let (mean, per_class) = values.split_last().expect("at least two numeric columns");
        reports.push(DiceReport {
            model_tag: fields[0].to_string(),
            per_class: per_class.to_vec(),
            mean_dice: *mean,
            n_samples: 0,
        });
    }
    Ok(reports)
}
