//! The ablation ladder: every arm over every seed and fold, reduced into
//! per-arm means, per-seed means and alignment diagnostics.
//!
//! Persisted suites use one run directory per cell:
//! `<root>/<arm>/seed<k>/fold<f>/`. A failed cell leaves `error.txt` there.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::training::run::{CONFIG_FILE, REPORT_FILE};
use crate::training::{load_dataset, train_on, Arm, ExperimentConfig, RunOptions};
use crate::util::{sha256_hex, write_atomic};

pub const ERROR_FILE: &str = "error.txt";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_SUMMARY: &str = "ablation.txt";
pub const ABLATION_SVG: &str = "ablation.svg";

pub const CSV_HEADER: &str = "arm,seed,fold,status,test_auroc,best_val_auroc,best_epoch,mean_cross_path,config_digest";

/// The arms of the reported ladder, in ascending expected order.
pub const LADDER: [Arm; 5] = [
    Arm::AdultOnly,
    Arm::PediatricOnly,
    Arm::Joint,
    Arm::JointContrastive,
    Arm::TriadFull,
];

/// Short digest of a resolved configuration.
pub fn config_digest(cfg: &ExperimentConfig) -> String {
    sha256_hex(cfg.to_text().as_bytes())[..16].to_string()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub test_auroc: f64,
    pub best_val_auroc: Option<f64>,
    pub best_epoch: usize,
    pub mean_cross_path: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub arm: Arm,
    pub seed: u64,
    pub fold: usize,
    pub config_digest: String,
    pub result: std::result::Result<RunMetrics, String>,
}

impl RunOutcome {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        match &self.result {
            Ok(m) => format!(
                "{},{},{},ok,{},{},{},{},{}",
                self.arm,
                self.seed,
                self.fold,
                m.test_auroc,
                opt(m.best_val_auroc),
                m.best_epoch,
                opt(m.mean_cross_path),
                self.config_digest
            ),
            Err(_) => format!("{},{},{},failed,,,,,{}", self.arm, self.seed, self.fold, self.config_digest),
        }
    }
}

/// What to run.
#[derive(Clone, Debug)]
pub struct AblationPlan {
    pub base: ExperimentConfig,
    pub arms: Vec<Arm>,
    /// Seeds `base.seed .. base.seed + seeds`.
    pub seeds: usize,
    /// Folds `0 .. base.folds`; `None` runs all of them.
    pub folds: Option<Vec<usize>>,
    /// Train uncoupled auxiliary paths next to `joint+contrastive` so its
    /// cross-path alignment can be compared with `triad_full`. The common
    /// path, and therefore its AUROC, is unaffected.
    pub alignment_companion: bool,
    /// Persist every run under this directory.
    pub root: Option<PathBuf>,
}

impl AblationPlan {
    pub fn new(base: ExperimentConfig) -> Self {
        let seeds = base.seeds;
        Self {
            base,
            arms: LADDER.to_vec(),
            seeds,
            folds: None,
            alignment_companion: true,
            root: None,
        }
    }

    pub fn seed_values(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|k| self.base.seed + k).collect()
    }

    pub fn fold_values(&self) -> Vec<usize> {
        self.folds.clone().unwrap_or_else(|| (0..self.base.folds).collect())
    }

    /// Configuration of one cell.
    pub fn cell_config(&self, arm: Arm, seed: u64, fold: usize) -> ExperimentConfig {
        let mut cfg = self.base.clone();
        cfg.arm = arm;
        cfg.seed = seed;
        cfg.fold = fold;
        cfg.seeds = 1;
        cfg.train_auxiliary = self.alignment_companion && arm == Arm::JointContrastive;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.arms.is_empty() || self.seeds == 0 {
            return Err(Error::invalid("ablation needs at least one arm and one seed"));
        }
        if let Some(f) = self.fold_values().iter().find(|&&f| f >= self.base.folds) {
            return Err(Error::invalid(format!("fold {f} out of range for {} folds", self.base.folds)));
        }
        Ok(())
    }
}

pub fn run_dir(root: &Path, arm: Arm, seed: u64, fold: usize) -> PathBuf {
    root.join(arm.as_str()).join(format!("seed{seed}")).join(format!("fold{fold}"))
}

/// Runs every (seed, fold, arm) cell. A failing cell is recorded and the
/// suite moves on; only an unusable plan is an error.
pub fn ablation_suite(plan: &AblationPlan) -> Result<AblationReport> {
    plan.validate()?;
    let mut runs = Vec::new();
    for seed in plan.seed_values() {
        let mut seed_cfg = plan.base.clone();
        seed_cfg.seed = seed;
        let dataset = load_dataset(&seed_cfg);
        for fold in plan.fold_values() {
            for &arm in &plan.arms {
                let cfg = plan.cell_config(arm, seed, fold);
                let dir = plan.root.as_ref().map(|r| run_dir(r, arm, seed, fold));
                let outcome = dataset.as_ref().map_err(|e| e.to_string()).and_then(|d| {
                    let opts = RunOptions {
                        run_dir: dir.clone(),
                        resume: false,
                    };
                    train_on(&cfg, d, &opts).map_err(|e| e.to_string())
                });
                let result = match outcome {
                    Ok(r) => Ok(RunMetrics {
                        test_auroc: r.test_auroc,
                        best_val_auroc: r.best_val_auroc,
                        best_epoch: r.best_epoch,
                        mean_cross_path: r.alignment.as_ref().and_then(|a| a.mean_cross_path()),
                    }),
                    Err(msg) => {
                        log::warn!("{arm} seed {seed} fold {fold} failed: {msg}");
                        if let Some(dir) = &dir {
                            fs::create_dir_all(dir)?;
                            write_atomic(&dir.join(CONFIG_FILE), cfg.to_text().as_bytes())?;
                            write_atomic(&dir.join(ERROR_FILE), msg.as_bytes())?;
                        }
                        Err(msg)
                    }
                };
                log::info!("{arm} seed {seed} fold {fold}: {:?}", result.as_ref().map(|m| m.test_auroc));
                runs.push(RunOutcome {
                    arm,
                    seed,
                    fold,
                    config_digest: config_digest(&cfg),
                    result,
                });
            }
        }
    }
    Ok(AblationReport {
        arms: plan.arms.clone(),
        seeds: plan.seed_values(),
        folds: plan.fold_values(),
        base_digest: config_digest(&plan.base),
        runs,
    })
}

/// Reduction of one arm's runs.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmSummary {
    pub arm: Arm,
    /// Test AUROC of every successful run, seed-major then fold order.
    pub per_fold: Vec<f64>,
    pub mean: Option<f64>,
    /// Mean over folds for each seed; `None` where every fold failed.
    pub per_seed: Vec<(u64, Option<f64>)>,
    pub failures: usize,
    pub mean_cross_path: Option<f64>,
    /// Per-seed mean cross-path cosine similarity.
    pub cross_path_per_seed: Vec<(u64, Option<f64>)>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    pub folds: Vec<usize>,
    pub base_digest: String,
    pub runs: Vec<RunOutcome>,
}

impl AblationReport {
    fn metrics(&self, arm: Arm) -> impl Iterator<Item = (&RunOutcome, &RunMetrics)> {
        self.runs
            .iter()
            .filter(move |r| r.arm == arm)
            .filter_map(|r| r.result.as_ref().ok().map(|m| (r, m)))
    }

    pub fn summary(&self, arm: Arm) -> ArmSummary {
        let per_fold: Vec<f64> = self.metrics(arm).map(|(_, m)| m.test_auroc).collect();
        let seed_mean = |seed: u64, f: &dyn Fn(&RunMetrics) -> Option<f64>| {
            let v: Vec<f64> = self
                .metrics(arm)
                .filter(|(r, _)| r.seed == seed)
                .filter_map(|(_, m)| f(m))
                .collect();
            mean(&v)
        };
        let cross: Vec<f64> = self.metrics(arm).filter_map(|(_, m)| m.mean_cross_path).collect();
        ArmSummary {
            arm,
            mean: mean(&per_fold),
            per_seed: self.seeds.iter().map(|&s| (s, seed_mean(s, &|m| Some(m.test_auroc)))).collect(),
            failures: self.runs.iter().filter(|r| r.arm == arm && r.result.is_err()).count(),
            mean_cross_path: mean(&cross),
            cross_path_per_seed: self.seeds.iter().map(|&s| (s, seed_mean(s, &|m| m.mean_cross_path))).collect(),
            per_fold,
        }
    }

    pub fn summaries(&self) -> Vec<ArmSummary> {
        self.arms.iter().map(|&a| self.summary(a)).collect()
    }

    pub fn mean_auroc(&self, arm: Arm) -> Option<f64> {
        self.summary(arm).mean
    }

    /// `mean(upper) − mean(lower)` for each adjacent pair of `ladder`.
    pub fn gaps(&self, ladder: &[Arm]) -> Vec<(Arm, Arm, Option<f64>)> {
        ladder
            .windows(2)
            .map(|w| {
                let gap = self.mean_auroc(w[1]).zip(self.mean_auroc(w[0])).map(|(u, l)| u - l);
                (w[0], w[1], gap)
            })
            .collect()
    }

    /// Seeds where `a`'s mean cross-path similarity exceeds `b`'s.
    pub fn alignment_wins(&self, a: Arm, b: Arm) -> (usize, usize) {
        let (sa, sb) = (self.summary(a), self.summary(b));
        let wins = sa
            .cross_path_per_seed
            .iter()
            .zip(&sb.cross_path_per_seed)
            .filter(|((_, x), (_, y))| matches!((x, y), (Some(x), Some(y)) if x > y))
            .count();
        (wins, self.seeds.len())
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.runs {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn summary_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "ablation over seeds {:?}, folds {:?} (base config {})",
            self.seeds, self.folds, self.base_digest
        );
        let _ = writeln!(
            s,
            "{:<28} {:>10} {:>6} {:>7} {:>17} {:>12}",
            "arm", "mean_auroc", "runs", "failed", "seed_range", "cross_path"
        );
        for a in self.summaries() {
            let seeds: Vec<f64> = a.per_seed.iter().filter_map(|(_, v)| *v).collect();
            let range = if seeds.is_empty() {
                "-".to_string()
            } else {
                let lo = seeds.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = seeds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                format!("{lo:.4}..{hi:.4}")
            };
            let _ = writeln!(
                s,
                "{:<28} {:>10} {:>6} {:>7} {:>17} {:>12}",
                a.arm.as_str(),
                fmt(a.mean),
                a.per_fold.len(),
                a.failures,
                range,
                fmt(a.mean_cross_path)
            );
        }
        let ladder: Vec<Arm> = LADDER.iter().copied().filter(|a| self.arms.contains(a)).collect();
        for (lo, hi, gap) in self.gaps(&ladder) {
            let _ = writeln!(s, "gap {} -> {}: {}", lo, hi, gap.map_or("-".into(), |g| format!("{g:+.4}")));
        }
        if self.arms.contains(&Arm::TriadFull) && self.arms.contains(&Arm::JointContrastive) {
            let (w, n) = self.alignment_wins(Arm::TriadFull, Arm::JointContrastive);
            let _ = writeln!(s, "cross-path similarity triad_full > joint+contrastive on {w}/{n} seeds");
        }
        for r in self.runs.iter().filter(|r| r.result.is_err()) {
            let _ = writeln!(
                s,
                "failed: {} seed {} fold {}: {}",
                r.arm,
                r.seed,
                r.fold,
                r.result.as_ref().err().map(String::as_str).unwrap_or("")
            );
        }
        s
    }

    /// Bar chart of per-arm mean AUROC with per-seed means as dots.
    pub fn to_svg(&self) -> String {
        let summaries = self.summaries();
        let values: Vec<f64> = summaries
            .iter()
            .flat_map(|a| a.per_seed.iter().filter_map(|(_, v)| *v).chain(a.mean))
            .collect();
        let lo = values.iter().copied().fold(1.0, f64::min).min(0.5);
        let hi = values.iter().copied().fold(0.0, f64::max).max(lo + 0.01);
        let (w, h, left, top, bottom) = (120.0 * summaries.len() as f64 + 80.0, 360.0, 60.0, 20.0, 300.0);
        let y = |v: f64| bottom - (v - lo) / (hi - lo) * (bottom - top);
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n"
        );
        let _ = writeln!(s, "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{bottom}\" stroke=\"black\"/>");
        for t in 0..=4 {
            let v = lo + (hi - lo) * t as f64 / 4.0;
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{v:.3}</text>",
                left - 4.0,
                y(v) + 4.0
            );
        }
        for (i, a) in summaries.iter().enumerate() {
            let x = left + 20.0 + 120.0 * i as f64;
            if let Some(m) = a.mean {
                let _ = writeln!(
                    s,
                    "<rect x=\"{x}\" y=\"{:.1}\" width=\"80\" height=\"{:.1}\" fill=\"#8fb3d9\"/>",
                    y(m),
                    bottom - y(m)
                );
                let _ = writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"middle\">{m:.4}</text>", x + 40.0, y(m) - 4.0);
            }
            for (_, v) in &a.per_seed {
                if let Some(v) = v {
                    let _ = writeln!(s, "<circle cx=\"{}\" cy=\"{:.1}\" r=\"3\" fill=\"#333\"/>", x + 40.0, y(*v));
                }
            }
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                x + 40.0,
                bottom + 16.0,
                a.arm.as_str()
            );
        }
        s.push_str("</svg>\n");
        s
    }

    /// Writes the CSV table, the text summary and, optionally, the SVG chart.
    pub fn write(&self, dir: &Path, svg: bool) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join(ABLATION_CSV), self.to_csv().as_bytes())?;
        write_atomic(&dir.join(ABLATION_SUMMARY), self.summary_text().as_bytes())?;
        if svg {
            write_atomic(&dir.join(ABLATION_SVG), self.to_svg().as_bytes())?;
        }
        Ok(())
    }

    /// Rebuilds a report from persisted run directories under `root`.
    pub fn from_run_dirs(root: &Path) -> Result<Self> {
        let mut runs = Vec::new();
        let mut arms = Vec::new();
        let mut seeds = Vec::new();
        let mut folds = Vec::new();
        let mut digests = BTreeMap::new();
        let order = LADDER.into_iter().chain(Arm::ALL.into_iter().filter(|a| !LADDER.contains(a)));
        for arm in order {
            let arm_dir = root.join(arm.as_str());
            if !arm_dir.is_dir() {
                continue;
            }
            arms.push(arm);
            for (seed, seed_dir) in numbered_children(&arm_dir, "seed")? {
                for (fold, dir) in numbered_children(&seed_dir, "fold")? {
                    let cfg_text = fs::read_to_string(dir.join(CONFIG_FILE))?;
                    let cfg = ExperimentConfig::from_text(&cfg_text)?;
                    let result = if dir.join(REPORT_FILE).exists() {
                        Ok(parse_run_report(&fs::read_to_string(dir.join(REPORT_FILE))?, &dir)?)
                    } else if dir.join(ERROR_FILE).exists() {
                        Err(fs::read_to_string(dir.join(ERROR_FILE))?)
                    } else {
                        Err("run did not finish".to_string())
                    };
                    let mut base = cfg.clone();
                    base.arm = Arm::TriadFull;
                    base.fold = 0;
                    base.train_auxiliary = false;
                    digests.insert(config_digest(&base), ());
                    seeds.push(seed as u64);
                    folds.push(fold);
                    runs.push(RunOutcome {
                        arm,
                        seed: seed as u64,
                        fold,
                        config_digest: config_digest(&cfg),
                        result,
                    });
                }
            }
        }
        if runs.is_empty() {
            return Err(Error::invalid(format!("no run directories under {}", root.display())));
        }
        seeds.sort_unstable();
        seeds.dedup();
        folds.sort_unstable();
        folds.dedup();
        runs.sort_by_key(|r| (r.seed, r.fold, arms.iter().position(|&a| a == r.arm)));
        let base_digest = match digests.len() {
            1 => digests.into_keys().next().unwrap_or_default(),
            n => format!("mixed({n})"),
        };
        Ok(Self {
            arms,
            seeds,
            folds,
            base_digest,
            runs,
        })
    }
}

fn numbered_children(dir: &Path, prefix: &str) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let Some(n) = name.to_str().and_then(|s| s.strip_prefix(prefix)).and_then(|s| s.parse().ok()) else {
            continue;
        };
        if entry.path().is_dir() {
            out.push((n, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

fn parse_run_report(text: &str, dir: &Path) -> Result<RunMetrics> {
    let map: BTreeMap<&str, &str> = text
        .lines()
        .filter_map(|l| l.split_once(':'))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect();
    let bad = |key: &str| Error::Integrity {
        section: "report".into(),
        detail: format!("{}: missing or malformed `{key}`", dir.display()),
    };
    let num = |key: &str| map.get(key).and_then(|v| v.parse::<f64>().ok());
    Ok(RunMetrics {
        test_auroc: num("test_auroc").ok_or_else(|| bad("test_auroc"))?,
        best_val_auroc: num("best_val_auroc"),
        best_epoch: map
            .get("best_epoch")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("best_epoch"))?,
        mean_cross_path: num("mean_cross_path_similarity"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(arm: Arm, seed: u64, fold: usize, auroc: Option<f64>, cross: Option<f64>) -> RunOutcome {
        RunOutcome {
            arm,
            seed,
            fold,
            config_digest: "d".into(),
            result: auroc
                .map(|a| RunMetrics {
                    test_auroc: a,
                    best_val_auroc: Some(a),
                    best_epoch: 1,
                    mean_cross_path: cross,
                })
                .ok_or_else(|| "boom".to_string()),
        }
    }

    fn report() -> AblationReport {
        AblationReport {
            arms: vec![Arm::JointContrastive, Arm::TriadFull],
            seeds: vec![0, 1],
            folds: vec![0, 1],
            base_digest: "b".into(),
            runs: vec![
                outcome(Arm::JointContrastive, 0, 0, Some(0.7), Some(0.1)),
                outcome(Arm::TriadFull, 0, 0, Some(0.8), Some(0.9)),
                outcome(Arm::JointContrastive, 0, 1, Some(0.6), Some(0.3)),
                outcome(Arm::TriadFull, 0, 1, None, None),
                outcome(Arm::JointContrastive, 1, 0, Some(0.9), Some(0.5)),
                outcome(Arm::TriadFull, 1, 0, Some(0.7), Some(0.2)),
                outcome(Arm::JointContrastive, 1, 1, Some(0.8), Some(0.5)),
                outcome(Arm::TriadFull, 1, 1, Some(0.9), Some(0.4)),
            ],
        }
    }

    #[test]
    fn summaries_reduce_successful_runs() {
        let r = report();
        let jc = r.summary(Arm::JointContrastive);
        assert_eq!(jc.per_fold, vec![0.7, 0.6, 0.9, 0.8]);
        assert!((jc.mean.unwrap() - 0.75).abs() < 1e-12);
        assert!((jc.per_seed[0].1.unwrap() - 0.65).abs() < 1e-12);
        let t = r.summary(Arm::TriadFull);
        assert_eq!(t.failures, 1);
        assert_eq!(t.per_fold.len(), 3);
        assert!((t.per_seed[0].1.unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(r.alignment_wins(Arm::TriadFull, Arm::JointContrastive), (1, 2));
    }

    #[test]
    fn csv_and_text_mark_failures() {
        let r = report();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 9);
        assert!(csv.lines().any(|l| l.starts_with("triad_full,0,1,failed")));
        let text = r.summary_text();
        assert!(text.contains("failed: triad_full seed 0 fold 1: boom"), "{text}");
        assert!(text.contains("gap joint+contrastive -> triad_full"), "{text}");
        assert!(r.to_svg().starts_with("<svg"));
    }

    #[test]
    fn gaps_are_upper_minus_lower() {
        let r = report();
        let g = r.gaps(&[Arm::JointContrastive, Arm::TriadFull]);
        assert_eq!(g.len(), 1);
        assert!((g[0].2.unwrap() - (0.8 - 0.75)).abs() < 1e-12);
    }
}
