//! Result files: per-fold and pooled score CSVs, epoch traces, and the
//! activity × sensor-configuration F-score grid as CSV and SVG.
//!
//! Every writer here is a pure function of its inputs — no timestamps, no
//! map-iteration nondeterminism — so rerunning an identical experiment
//! rewrites byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::data::activities::{Activity, ActivityGroup, ALL_ACTIVITIES};
use crate::data::sensors::CONFIGS;
use crate::error::{Error, Result};
use crate::eval::crossval::CrossvalOutcome;
use crate::eval::metrics::ConfusionMatrix;
use crate::train;

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(contents.as_bytes())
        .and_then(|()| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// One score CSV: the confusion matrix with per-class precision/recall/F
/// columns, then accuracy, macro F-score, and mean loss summary rows.
fn score_csv(group: ActivityGroup, cm: &ConfusionMatrix, mean_loss: f64) -> String {
    let labels = group.labels();
    let mut s = String::new();
    s.push_str("class");
    for l in labels {
        let _ = write!(s, ",pred_{}", l.code());
    }
    s.push_str(",precision,recall,f_score\n");
    for (t, l) in labels.iter().enumerate() {
        let _ = write!(s, "{}", l.code());
        for p in 0..labels.len() {
            let _ = write!(s, ",{}", cm.count(t, p));
        }
        let sc = cm.class_scores(t);
        let _ = writeln!(s, ",{:.6},{:.6},{:.6}", sc.precision, sc.recall, sc.f_score);
    }
    let _ = writeln!(s, "accuracy,{:.6}", cm.accuracy());
    let _ = writeln!(s, "macro_f,{:.6}", cm.macro_f());
    let _ = writeln!(s, "mean_loss,{mean_loss:.6}");
    s
}

/// Writes a single score CSV in the same layout as the fold and pooled
/// files from [`write_outcome_csvs`].
pub fn write_score_csv(
    path: &Path,
    group: ActivityGroup,
    cm: &ConfusionMatrix,
    mean_loss: f64,
) -> Result<()> {
    write_file(path, &score_csv(group, cm, mean_loss))
}

/// Writes everything one cross-validation run produces into `dir`:
/// `<group>_<config>_fold<i>.csv` and `..._fold<i>_trace.csv` per fold plus
/// `<group>_<config>_pooled.csv`. Returns the paths written.
pub fn write_outcome_csvs(dir: &Path, out: &CrossvalOutcome) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = format!("{}_{}", out.group.name(), out.config.name);
    let mut written = Vec::new();

    let mut loss_weighted = 0.0;
    let mut windows = 0u64;
    for f in &out.folds {
        let n = f.report.confusion.total();
        loss_weighted += f.report.loss * n as f64;
        windows += n;

        let path = dir.join(format!("{stem}_fold{}.csv", f.fold));
        write_file(&path, &score_csv(out.group, &f.report.confusion, f.report.loss))?;
        written.push(path);

        let path = dir.join(format!("{stem}_fold{}_trace.csv", f.fold));
        train::write_trace(&path, &f.stats)?;
        written.push(path);
    }

    let pooled_loss = if windows == 0 {
        0.0
    } else {
        loss_weighted / windows as f64
    };
    let path = dir.join(format!("{stem}_pooled.csv"));
    write_file(&path, &score_csv(out.group, &out.pooled, pooled_loss))?;
    written.push(path);
    Ok(written)
}

/// Pooled per-activity F-scores laid out as activities × sensor
/// configurations. Cells never filled in — configurations not yet run, or
/// not applicable to the activity's group — render empty (CSV) or greyed
/// (SVG).
#[derive(Debug, Clone, Default)]
pub struct FscoreGrid {
    /// `(row in ALL_ACTIVITIES, column in CONFIGS) → pooled F-score`.
    cells: BTreeMap<(usize, usize), f64>,
}

/// Scores below this render with the same color as the floor itself; the
/// interesting differences live in the upper range and would otherwise be
/// compressed into nothing.
pub const SVG_COLOR_FLOOR: f64 = 0.4;

impl FscoreGrid {
    pub fn new() -> FscoreGrid {
        FscoreGrid::default()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Sets one cell. Unknown configuration names are rejected.
    pub fn set(&mut self, activity: Activity, config_name: &str, f_score: f64) -> Result<()> {
        let row = ALL_ACTIVITIES
            .iter()
            .position(|&a| a == activity)
            .expect("every activity appears in ALL_ACTIVITIES");
        let col = CONFIGS
            .iter()
            .position(|c| c.name == config_name)
            .ok_or_else(|| Error::UnknownSensorConfig {
                name: config_name.to_string(),
            })?;
        self.cells.insert((row, col), f_score);
        Ok(())
    }

    /// Folds a finished cross-validation into the grid: one cell per class
    /// of the group, at this outcome's configuration column.
    pub fn insert_outcome(&mut self, out: &CrossvalOutcome) -> Result<()> {
        for (k, &activity) in out.group.labels().iter().enumerate() {
            self.set(activity, out.config.name, out.pooled.class_scores(k).f_score)?;
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("activity");
        for c in &CONFIGS {
            let _ = write!(s, ",{}", c.name);
        }
        s.push('\n');
        for (row, a) in ALL_ACTIVITIES.iter().enumerate() {
            let _ = write!(s, "{}", a.code());
            for col in 0..CONFIGS.len() {
                match self.cells.get(&(row, col)) {
                    Some(f) => {
                        let _ = write!(s, ",{f:.6}");
                    }
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        write_file(path, &s)
    }

    pub fn write_svg(&self, path: &Path) -> Result<()> {
        write_file(path, &self.render_svg())
    }

    fn render_svg(&self) -> String {
        const CELL_W: usize = 52;
        const CELL_H: usize = 26;
        const LEFT: usize = 92;
        const TOP: usize = 46;
        let width = LEFT + CONFIGS.len() * CELL_W + 16;
        let height = TOP + ALL_ACTIVITIES.len() * CELL_H + 58;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif">"#
        );
        let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);

        for (col, c) in CONFIGS.iter().enumerate() {
            let x = LEFT + col * CELL_W + CELL_W / 2;
            let _ = writeln!(
                s,
                r#"<text x="{x}" y="{}" font-size="10" text-anchor="middle">{}</text>"#,
                TOP - 8,
                c.name
            );
        }
        for (row, a) in ALL_ACTIVITIES.iter().enumerate() {
            let y = TOP + row * CELL_H + CELL_H / 2 + 4;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{y}" font-size="10" text-anchor="end">{}</text>"#,
                LEFT - 6,
                a.code()
            );
        }

        for row in 0..ALL_ACTIVITIES.len() {
            for col in 0..CONFIGS.len() {
                let x = LEFT + col * CELL_W;
                let y = TOP + row * CELL_H;
                match self.cells.get(&(row, col)) {
                    Some(&f) => {
                        let (fill, ink) = heat_color(f);
                        let _ = writeln!(
                            s,
                            r#"<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{fill}" stroke="white"/>"#
                        );
                        let _ = writeln!(
                            s,
                            r#"<text x="{}" y="{}" font-size="9" text-anchor="middle" fill="{ink}">{f:.2}</text>"#,
                            x + CELL_W / 2,
                            y + CELL_H / 2 + 3,
                        );
                    }
                    None => {
                        let _ = writeln!(
                            s,
                            r##"<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="#efefef" stroke="white"/>"##
                        );
                    }
                }
            }
        }

        // legend: floor to 1.0 in five steps
        let ly = TOP + ALL_ACTIVITIES.len() * CELL_H + 18;
        let _ = writeln!(
            s,
            r#"<text x="{LEFT}" y="{ly}" font-size="10">F-score (values below {SVG_COLOR_FLOOR:.1} share the floor color)</text>"#
        );
        for (i, v) in [0.4, 0.55, 0.7, 0.85, 1.0].iter().enumerate() {
            let x = LEFT + i * 70;
            let (fill, _) = heat_color(*v);
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{}" width="22" height="14" fill="{fill}" stroke="#999"/>"##,
                ly + 8
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="9">{v:.2}</text>"#,
                x + 27,
                ly + 19
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Builds a grid from every `<group>_<config>_pooled.csv` found directly in
/// `dir`, as written by [`write_outcome_csvs`]. Files not matching that
/// naming pattern are ignored; a matching file that does not parse is a
/// data error. Returns the grid (possibly empty) and how many files fed it.
pub fn scan_results_dir(dir: &Path) -> Result<(FscoreGrid, usize)> {
    let mut grid = FscoreGrid::new();
    let mut used = 0;
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?
        .into_iter()
        .map(|e| e.path())
        .collect();
    paths.sort();
    for path in paths {
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(stem) = name.strip_suffix("_pooled.csv") else {
            continue;
        };
        // group names contain underscores, so match them longest-first
        let Some((group, config_name)) = crate::data::GROUPS
            .iter()
            .filter_map(|g| {
                stem.strip_prefix(g.name())
                    .and_then(|rest| rest.strip_prefix('_'))
                    .map(|cfg| (*g, cfg))
            })
            .max_by_key(|(g, _)| g.name().len())
        else {
            continue;
        };
        accumulate_pooled_csv(&mut grid, &path, group, config_name)?;
        used += 1;
    }
    Ok((grid, used))
}

fn accumulate_pooled_csv(
    grid: &mut FscoreGrid,
    path: &Path,
    group: ActivityGroup,
    config_name: &str,
) -> Result<()> {
    let malformed = |reason: String| Error::Manifest {
        path: path.to_path_buf(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if !header.starts_with("class,") || !header.ends_with(",f_score") {
        return Err(malformed(format!("unexpected header {header:?}")));
    }
    for (k, want) in group.labels().iter().enumerate() {
        let line = lines
            .next()
            .ok_or_else(|| malformed(format!("missing row for class {}", want.code())))?;
        let mut fields = line.split(',');
        let code = fields.next().unwrap_or("");
        if code != want.code() {
            return Err(malformed(format!(
                "row {} is for {code:?}, expected {:?}",
                k + 2,
                want.code()
            )));
        }
        let f: f64 = fields
            .next_back()
            .unwrap_or("")
            .parse()
            .map_err(|e| malformed(format!("bad f_score for {code}: {e}")))?;
        grid.set(*want, config_name, f)?;
    }
    Ok(())
}

/// Maps an F-score to `(cell fill, value text color)`: white at the floor
/// ramping to a deep blue at 1.0, with the text flipping to white once the
/// background gets dark.
fn heat_color(f: f64) -> (String, &'static str) {
    let t = ((f - SVG_COLOR_FLOOR) / (1.0 - SVG_COLOR_FLOOR)).clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + t * (b - a)).round() as u8;
    let (r, g, b) = (lerp(247.0, 28.0), lerp(251.0, 96.0), lerp(255.0, 166.0));
    let ink = if t > 0.55 { "white" } else { "#222222" };
    (format!("#{r:02x}{g:02x}{b:02x}"), ink)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::crossval::{EvalReport, FoldOutcome};
    use crate::eval::folds::plan_folds;
    use crate::train::EpochStats;

    fn fake_outcome() -> CrossvalOutcome {
        let group = ActivityGroup::StandBalance;
        let mut fold_cms = Vec::new();
        for f in 0..2u64 {
            let mut cm = ConfusionMatrix::new(2);
            for (t, p, n) in [(0, 0, 8 + f), (0, 1, 2), (1, 1, 9), (1, 0, 1 + f)] {
                for _ in 0..n {
                    cm.record(t, p).unwrap();
                }
            }
            fold_cms.push(cm);
        }
        let mut pooled = ConfusionMatrix::new(2);
        for cm in &fold_cms {
            pooled.merge(cm).unwrap();
        }
        let folds = fold_cms
            .into_iter()
            .enumerate()
            .map(|(i, cm)| FoldOutcome {
                fold: i,
                train_subjects: vec![3, 4],
                test_subjects: vec![1 + i as u32],
                report: EvalReport {
                    confusion: cm,
                    loss: 0.25 + i as f64 * 0.05,
                },
                stats: vec![EpochStats {
                    epoch: 1,
                    train_loss: 0.5,
                    train_acc: 0.8,
                    val_loss: None,
                    val_acc: None,
                }],
            })
            .collect();
        CrossvalOutcome {
            group,
            config: crate::data::SensorConfig::lookup("LM").unwrap(),
            plan: plan_folds(&[1, 2, 3, 4], 2, 0).unwrap(),
            folds,
            pooled,
        }
    }

    #[test]
    fn outcome_csvs_have_expected_names_and_rerun_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let out = fake_outcome();
        let written = write_outcome_csvs(dir.path(), &out).unwrap();
        let names: Vec<String> = written
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(
            names,
            vec![
                "stand_balance_LM_fold0.csv",
                "stand_balance_LM_fold0_trace.csv",
                "stand_balance_LM_fold1.csv",
                "stand_balance_LM_fold1_trace.csv",
                "stand_balance_LM_pooled.csv",
            ]
        );
        let first: Vec<Vec<u8>> = written.iter().map(|p| std::fs::read(p).unwrap()).collect();
        write_outcome_csvs(dir.path(), &out).unwrap();
        for (p, want) in written.iter().zip(&first) {
            assert_eq!(&std::fs::read(p).unwrap(), want, "{p:?} changed on rerun");
        }

        let pooled = std::fs::read_to_string(&written[4]).unwrap();
        assert!(pooled.starts_with("class,pred_sls,pred_tdst,precision,recall,f_score\n"));
        assert!(pooled.contains("\nmacro_f,"));
        // pooled counts are the fold sums
        assert!(pooled.contains("sls,17,4,"));
    }

    #[test]
    fn grid_csv_lists_all_activities_and_configs() {
        let dir = tempfile::tempdir().unwrap();
        let mut grid = FscoreGrid::new();
        grid.insert_outcome(&fake_outcome()).unwrap();
        grid.set(Activity::Bawk, "RSLSLM", 0.97).unwrap();
        let path = dir.path().join("fscore_matrix.csv");
        grid.write_csv(&path).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + ALL_ACTIVITIES.len());
        assert_eq!(
            lines[0],
            "activity,RF,LF,RS,LS,LM,RSLS,RFLF,RSRF,LSLF,RSLSLM,RFLFLM,RSRFLM,LSLFLM"
        );
        let bawk = lines.iter().find(|l| l.starts_with("bawk,")).unwrap();
        assert!(bawk.contains("0.970000"));
        // every data row has exactly 13 commas
        for l in &lines[1..] {
            assert_eq!(l.matches(',').count(), CONFIGS.len());
        }
        // unknown configuration is rejected
        assert!(grid.set(Activity::Bawk, "XX", 0.5).is_err());
    }

    #[test]
    fn scanning_a_results_dir_recovers_the_grid() {
        let dir = tempfile::tempdir().unwrap();
        let out = fake_outcome();
        write_outcome_csvs(dir.path(), &out).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignore me").unwrap();
        std::fs::write(dir.path().join("other_pooled.csv"), "not a result").unwrap();

        let (scanned, used) = scan_results_dir(dir.path()).unwrap();
        assert_eq!(used, 1, "only the stand_balance_LM result should count");

        let mut direct = FscoreGrid::new();
        direct.insert_outcome(&out).unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        scanned.write_csv(&a).unwrap();
        direct.write_csv(&b).unwrap();
        assert_eq!(
            std::fs::read_to_string(&a).unwrap(),
            std::fs::read_to_string(&b).unwrap()
        );

        std::fs::write(dir.path().join("walk_LS_pooled.csv"), "class,bogus\n").unwrap();
        assert!(scan_results_dir(dir.path()).is_err());
    }

    #[test]
    fn svg_floors_low_scores_and_draws_every_cell() {
        let mut grid = FscoreGrid::new();
        grid.set(Activity::Sls, "RF", 0.1).unwrap();
        grid.set(Activity::Sls, "LF", SVG_COLOR_FLOOR).unwrap();
        grid.set(Activity::Sls, "RS", 1.0).unwrap();
        let svg = grid.render_svg();

        let cells = ALL_ACTIVITIES.len() * CONFIGS.len();
        // every cell plus the background and legend swatches
        assert!(svg.matches("<rect ").count() >= cells);
        let (floor_fill, _) = heat_color(SVG_COLOR_FLOOR);
        let (low_fill, _) = heat_color(0.1);
        assert_eq!(low_fill, floor_fill, "scores below the floor share its color");
        let (top_fill, ink) = heat_color(1.0);
        assert_ne!(top_fill, floor_fill);
        assert_eq!(ink, "white");
        assert!(svg.contains(&top_fill));
    }
}
