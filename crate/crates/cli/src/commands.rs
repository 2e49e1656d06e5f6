use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use maskqc::agreement::{self, AgreementRow, KappaDistribution};
use maskqc::anova::{self, FactorSpec};
use maskqc::conditioning::apply_conditioning;
use maskqc::manifest::{self, load_manifest};
use maskqc::mask::load_mask;
use maskqc::metrics::evaluate_predictions;
use maskqc::{par, ConditioningKind, DatasetManifest, StructuringElement};
use serde::{Deserialize, Serialize};

use crate::config::{self, pick, FileConfig};
use crate::output::{self, opt, write_atomic, write_bytes, write_csv_records, write_json};
use crate::{Cli, Command, FactorsArg, Format, SeArg};

/// Exit status when an evaluation skipped samples without predictions.
pub const EXIT_INCOMPLETE: u8 = 3;

struct Ctx {
    file: FileConfig,
    seed: u64,
    format: Format,
}

impl Ctx {
    fn se(&self, arg: &SeArg) -> Result<StructuringElement> {
        let side = pick(arg.se, self.file.se, config::DEFAULT_SE);
        Ok(StructuringElement::square(side)?)
    }
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let format = match (cli.format, file.format.as_deref()) {
        (Some(f), _) => f,
        (None, None) => Format::Csv,
        (None, Some("csv")) => Format::Csv,
        (None, Some("json")) => Format::Json,
        (None, Some(other)) => bail!("config: unknown format `{other}` (expected csv or json)"),
    };
    if let Some(jobs) = cli.jobs.or(file.jobs) {
        init_pool(jobs)?;
    }
    let ctx = Ctx {
        seed: pick(cli.seed, file.seed, config::DEFAULT_SEED),
        format,
        file,
    };

    match cli.command {
        Command::Stats { manifest, out } => stats(&ctx, &manifest, out.as_deref()),
        Command::Agreement { manifest, out, se } => {
            let m = load(&manifest)?;
            let rows = agreement::agreement_report(&m, ctx.se(&se)?)?;
            write_agreement(&out, &rows)
        }
        Command::Condition {
            input,
            out,
            kind,
            se,
        } => condition(&input, &out, kind.into(), ctx.se(&se)?),
        Command::Select {
            manifest,
            threshold,
            out,
        } => {
            let m = load(&manifest)?;
            let t = pick(threshold, ctx.file.threshold, config::DEFAULT_THRESHOLD);
            let selected = agreement::select_samples(&m, t)?;
            eprintln!("selected {} of {} samples", selected.len(), m.len());
            write_manifest(&out, &selected)
        }
        Command::Split {
            manifest,
            fraction,
            out_dir,
            best_threshold,
        } => split(&ctx, &manifest, fraction, &out_dir, best_threshold),
        Command::Evaluate {
            predictions,
            manifest,
            kind,
            test_set,
            out,
            se,
        } => evaluate(
            &ctx,
            &predictions,
            &manifest,
            kind.into(),
            test_set,
            &out,
            &se,
        ),
        Command::Design {
            replicates,
            factors,
            out,
        } => {
            let factors = load_factors(&factors)?;
            let r = pick(replicates, ctx.file.replicates, config::DEFAULT_REPLICATES);
            let runs = anova::build_design(&factors, r)?;
            write_atomic(&out, |w| Ok(anova::write_runs(&runs, &factors, w)?))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Anova {
            runs,
            max_order,
            factors,
            out,
            shares,
            interactions,
        } => anova_cmd(&ctx, &runs, max_order, &factors, &out, shares, interactions),
        Command::Report {
            manifest,
            out_dir,
            percentiles,
            bins,
            svg,
            se,
        } => report(&ctx, &manifest, &out_dir, percentiles, bins, svg, &se),
    }
}

#[cfg(feature = "parallel")]
fn init_pool(jobs: usize) -> Result<()> {
    if jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .context("configuring worker pool")
}

#[cfg(not(feature = "parallel"))]
fn init_pool(jobs: usize) -> Result<()> {
    if jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    Ok(())
}

fn load(path: &Path) -> Result<DatasetManifest> {
    load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_owned(),
        _ => PathBuf::from("."),
    }
}

fn write_manifest(path: &Path, m: &DatasetManifest) -> Result<ExitCode> {
    let base = parent_dir(path);
    write_atomic(path, |w| Ok(m.write_csv(w, &base)?))?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct StatsJson<'a> {
    counts: &'a BTreeMap<usize, usize>,
    total: usize,
}

fn stats(ctx: &Ctx, manifest: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let s = manifest::dataset_stats(&load(manifest)?);
    let mut buf = Vec::new();
    match ctx.format {
        Format::Json => {
            serde_json::to_writer_pretty(
                &mut buf,
                &StatsJson {
                    counts: &s.counts,
                    total: s.total,
                },
            )?;
            buf.push(b'\n');
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(["n_masks", "samples"])?;
            for (k, v) in &s.counts {
                w.write_record([k.to_string(), v.to_string()])?;
            }
            w.write_record(["total".to_string(), s.total.to_string()])?;
            w.flush()?;
        }
    }
    match out {
        Some(path) => write_bytes(path, &buf)?,
        None => std::io::stdout().write_all(&buf)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn write_agreement(out: &Path, rows: &[AgreementRow]) -> Result<ExitCode> {
    let header = [
        "sample_id",
        "n_masks",
        "kappa_none",
        "kappa_opening",
        "kappa_convexhull",
    ];
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.sample_id.clone(),
                r.n_masks.to_string(),
                r.kappa_none.to_string(),
                r.kappa_opening.to_string(),
                r.kappa_convexhull.to_string(),
            ]
        })
        .collect();
    write_csv_records(out, &header, &records)?;
    Ok(ExitCode::SUCCESS)
}

fn png_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_owned()]);
    }
    if !input.is_dir() {
        bail!("input {} does not exist", input.display());
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(input).with_context(|| format!("listing {}", input.display()))? {
        let path = entry?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn condition(
    input: &Path,
    out: &Path,
    kind: ConditioningKind,
    se: StructuringElement,
) -> Result<ExitCode> {
    let files = png_inputs(input)?;
    if files.is_empty() {
        bail!("no PNG masks found in {}", input.display());
    }
    ensure_dir(out)?;
    if input.is_dir() && same_dir(input, out) {
        bail!("output directory must differ from the input directory");
    }
    par::try_map(&files, |path| -> Result<()> {
        let target = out.join(path.file_name().expect("listed files have names"));
        let bytes = match kind {
            // The identity conditioning passes files through untouched.
            ConditioningKind::None => {
                load_mask(path)?;
                std::fs::read(path).with_context(|| format!("reading {}", path.display()))?
            }
            _ => {
                let mask = load_mask(path)?;
                let mut buf = Cursor::new(Vec::new());
                apply_conditioning(&mask, kind, se)
                    .write_png(&mut buf)
                    .with_context(|| format!("encoding {}", target.display()))?;
                buf.into_inner()
            }
        };
        write_bytes(&target, &bytes)
    })?;
    eprintln!("conditioned {} masks ({kind})", files.len());
    Ok(ExitCode::SUCCESS)
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

fn split(
    ctx: &Ctx,
    manifest: &Path,
    fraction: Option<f64>,
    out_dir: &Path,
    best_threshold: Option<f64>,
) -> Result<ExitCode> {
    let m = load(manifest)?;
    let f = pick(fraction, ctx.file.fraction, config::DEFAULT_FRACTION);
    ensure_dir(out_dir)?;
    match best_threshold {
        None => {
            let (train, validation) = manifest::split_dataset(&m, f, ctx.seed)?;
            write_manifest(&out_dir.join("train.csv"), &train)?;
            write_manifest(&out_dir.join("validation.csv"), &validation)?;
        }
        Some(t) => {
            let sets = agreement::split_then_select(&m, f, ctx.seed, t)?;
            write_manifest(&out_dir.join("train.csv"), &sets.all_train)?;
            write_manifest(&out_dir.join("validation.csv"), &sets.all_validation)?;
            write_manifest(&out_dir.join("best_train.csv"), &sets.best_train)?;
            write_manifest(&out_dir.join("best_validation.csv"), &sets.best_validation)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct EvaluationSummary<'a> {
    test_set: &'a str,
    conditioning: ConditioningKind,
    mean: Option<f64>,
    n: usize,
    skipped: &'a [String],
}

fn evaluate(
    ctx: &Ctx,
    predictions: &Path,
    manifest: &Path,
    kind: ConditioningKind,
    test_set: Option<String>,
    out: &Path,
    se: &SeArg,
) -> Result<ExitCode> {
    if !predictions.is_dir() {
        bail!(
            "prediction directory {} does not exist",
            predictions.display()
        );
    }
    let m = load(manifest)?;
    let mut report = evaluate_predictions(predictions, &m, kind, ctx.se(se)?)?;
    if let Some(name) = test_set {
        report.test_set = name;
    } else if let Some(stem) = manifest.file_stem() {
        report.test_set = stem.to_string_lossy().into_owned();
    }
    let rows: Vec<Vec<String>> = report
        .per_sample
        .iter()
        .map(|s| vec![s.sample_id.clone(), s.jaccard.to_string()])
        .collect();
    write_csv_records(out, &["sample_id", "jaccard"], &rows)?;
    write_json(
        &out.with_extension("json"),
        &EvaluationSummary {
            test_set: &report.test_set,
            conditioning: report.conditioning,
            mean: report.mean,
            n: report.n,
            skipped: &report.skipped,
        },
    )?;
    if report.is_complete() {
        return Ok(ExitCode::SUCCESS);
    }
    eprintln!(
        "warning: {} sample(s) have no prediction: {}",
        report.skipped.len(),
        report.skipped.join(", ")
    );
    Ok(ExitCode::from(EXIT_INCOMPLETE))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FactorsFile {
    factor: Vec<FactorSpec>,
}

fn load_factors(arg: &FactorsArg) -> Result<Vec<FactorSpec>> {
    let Some(path) = &arg.factors else {
        return Ok(anova::default_factors());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading factors {}", path.display()))?;
    let parsed: FactorsFile =
        toml::from_str(&text).with_context(|| format!("parsing factors {}", path.display()))?;
    Ok(parsed.factor)
}

fn anova_cmd(
    ctx: &Ctx,
    runs: &Path,
    max_order: Option<usize>,
    factors: &FactorsArg,
    out: &Path,
    shares: Option<PathBuf>,
    interactions: Option<PathBuf>,
) -> Result<ExitCode> {
    let factors = load_factors(factors)?;
    let runs = anova::load_runs(runs, &factors)?;
    let order = pick(max_order, ctx.file.max_order, config::DEFAULT_MAX_ORDER);
    let table = anova::anova_table(&runs, &factors, order)?;
    // Only meaningful when at least one design-only term explains something.
    let designable = table.designable_shares(&factors).ok();

    match ctx.format {
        Format::Json => {
            #[derive(Serialize)]
            struct Bundle<'a> {
                #[serde(flatten)]
                table: &'a anova::AnovaTable,
                designable_shares: &'a Option<Vec<anova::TermShare>>,
            }
            write_json(
                out,
                &Bundle {
                    table: &table,
                    designable_shares: &designable,
                },
            )?;
        }
        Format::Csv => {
            let mut rows: Vec<Vec<String>> = table
                .terms
                .iter()
                .map(|t| {
                    vec![
                        t.name(),
                        t.ss.to_string(),
                        t.df.to_string(),
                        t.ms.to_string(),
                        opt(t.f),
                        opt(t.p),
                        t.eta_sq.to_string(),
                    ]
                })
                .collect();
            rows.push(vec![
                "residual".into(),
                table.residual.ss.to_string(),
                table.residual.df.to_string(),
                opt(table.residual.ms),
                String::new(),
                String::new(),
                ratio(table.residual.ss, table.total_ss),
            ]);
            rows.push(vec![
                "total".into(),
                table.total_ss.to_string(),
                table.total_df.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ]);
            write_csv_records(out, &["term", "ss", "df", "ms", "f", "p", "eta_sq"], &rows)?;
        }
    }

    if let Some(path) = shares {
        let Some(shares) = &designable else {
            bail!("no design-only terms explain any variation; cannot compute shares");
        };
        match ctx.format {
            Format::Json => write_json(&path, shares)?,
            Format::Csv => output::write_csv_rows(&path, shares)?,
        }
    }

    if let Some(path) = interactions {
        let mut rows = Vec::new();
        for (i, a) in factors.iter().enumerate() {
            for b in &factors[i + 1..] {
                for cell in anova::interaction_means(&runs, &factors, &[&a.name, &b.name])? {
                    rows.push(vec![
                        a.name.clone(),
                        cell.levels[0].clone(),
                        b.name.clone(),
                        cell.levels[1].clone(),
                        cell.mean.to_string(),
                        cell.n.to_string(),
                    ]);
                }
            }
        }
        write_csv_records(
            &path,
            &["factor_a", "level_a", "factor_b", "level_b", "mean", "n"],
            &rows,
        )?;
    }
    Ok(ExitCode::SUCCESS)
}

fn ratio(num: f64, den: f64) -> String {
    if den > 0.0 {
        (num / den).to_string()
    } else {
        String::new()
    }
}

#[derive(Serialize)]
struct ConditioningSummary {
    conditioning: ConditioningKind,
    percentiles: Vec<(f64, f64)>,
    distribution: KappaDistribution,
}

#[derive(Serialize)]
struct ReportBundle<'a> {
    manifest: String,
    n_samples: usize,
    agreement: &'a [AgreementRow],
    summaries: &'a [ConditioningSummary],
}

fn report(
    ctx: &Ctx,
    manifest: &Path,
    out_dir: &Path,
    percentiles: Option<Vec<f64>>,
    bins: Option<usize>,
    svg: bool,
    se: &SeArg,
) -> Result<ExitCode> {
    let m = load(manifest)?;
    let pct = pick(
        percentiles,
        ctx.file.percentiles.clone(),
        config::DEFAULT_PERCENTILES.to_vec(),
    );
    let n_bins = pick(bins, ctx.file.bins, config::DEFAULT_BINS);
    let rows = agreement::agreement_report(&m, ctx.se(se)?)?;
    if rows.is_empty() {
        bail!(
            "manifest {} has no sample with two or more masks",
            manifest.display()
        );
    }

    let mut summaries = Vec::new();
    for kind in ConditioningKind::ALL {
        let scores: Vec<f64> = rows.iter().map(|r| r.kappa(kind)).collect();
        let values = agreement::kappa_percentiles(&scores, &pct)?;
        summaries.push(ConditioningSummary {
            conditioning: kind,
            percentiles: pct.iter().copied().zip(values).collect(),
            distribution: agreement::kappa_distribution(&scores, n_bins)?,
        });
    }

    ensure_dir(out_dir)?;
    match ctx.format {
        Format::Json => write_json(
            &out_dir.join("report.json"),
            &ReportBundle {
                manifest: m.name.clone(),
                n_samples: rows.len(),
                agreement: &rows,
                summaries: &summaries,
            },
        )?,
        Format::Csv => {
            write_agreement(&out_dir.join("agreement.csv"), &rows)?;
            let mut header = vec!["conditioning".to_string()];
            header.extend(pct.iter().map(|p| format!("p{p}")));
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            let table: Vec<Vec<String>> = summaries
                .iter()
                .map(|s| {
                    let mut row = vec![s.conditioning.to_string()];
                    row.extend(s.percentiles.iter().map(|(_, v)| v.to_string()));
                    row
                })
                .collect();
            write_csv_records(&out_dir.join("percentiles.csv"), &header, &table)?;
            for s in &summaries {
                let d = &s.distribution;
                output::write_csv_rows(
                    &out_dir.join(format!("histogram_{}.csv", s.conditioning)),
                    &d.bins,
                )?;
                output::write_csv_rows(
                    &out_dir.join(format!("density_{}.csv", s.conditioning)),
                    &d.density,
                )?;
            }
        }
    }
    if svg {
        for s in &summaries {
            let doc = render_svg(s.conditioning, &s.distribution);
            write_bytes(
                &out_dir.join(format!("distribution_{}.svg", s.conditioning)),
                doc.as_bytes(),
            )?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Histogram bars (as densities) with the KDE drawn over them.
fn render_svg(kind: ConditioningKind, d: &KappaDistribution) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 30.0;
    let total: usize = d.bins.iter().map(|b| b.count).sum();
    let bar_height = |b: &agreement::HistogramBin| {
        let width = b.bin_right - b.bin_left;
        if total == 0 || width <= 0.0 {
            0.0
        } else {
            b.count as f64 / (total as f64 * width)
        }
    };
    let x_min = d
        .density
        .first()
        .map_or(0.0, |p| p.x)
        .min(d.bins.first().map_or(0.0, |b| b.bin_left));
    let x_max = d
        .density
        .last()
        .map_or(1.0, |p| p.x)
        .max(d.bins.last().map_or(1.0, |b| b.bin_right));
    let y_max = d
        .bins
        .iter()
        .map(bar_height)
        .chain(d.density.iter().map(|p| p.density))
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let sx = |x: f64| PAD + (x - x_min) / (x_max - x_min).max(f64::MIN_POSITIVE) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - y / y_max * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{PAD}" y="{}" font-family="sans-serif" font-size="12">kappa ({kind})</text>"#,
        PAD - 10.0
    );
    for b in &d.bins {
        let (x0, x1) = (sx(b.bin_left), sx(b.bin_right));
        let top = sy(bar_height(b));
        let _ = writeln!(
            s,
            r##"<rect x="{x0:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1" stroke="#3182bd"/>"##,
            x1 - x0,
            sy(0.0) - top
        );
    }
    let points: Vec<String> = d
        .density
        .iter()
        .map(|p| format!("{:.2},{:.2}", sx(p.x), sy(p.density)))
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#de2d26" stroke-width="1.5" points="{}"/>"##,
        points.join(" ")
    );
    let _ = writeln!(
        s,
        r##"<line x1="{PAD}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="black"/>"##,
        sy(0.0),
        W - PAD
    );
    s.push_str("</svg>\n");
    s
}
