use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use csst_core::csst::csst_metrics;
use csst_core::dyadic::{fmt_rational, parse_rational};
use csst_core::generators::{brownian_excursion, crt_quotient, make_model, ModelKind};
use csst_core::homeo::{end_to_end, refine_homeo, verify_isomorphism, HomeoError, PipelineConfig};
use csst_core::io::{
    excursion_to_csv, homeo_from_json, homeo_to_json, subdivision_from_json, subdivision_to_json,
    tree_from_json, tree_to_json, IoError,
};
use csst_core::quasivisual::{
    check_quasivisual, check_visual, fit_distortion, FnMetric, WordCover, DRIFT_TOLERANCE,
};
use csst_core::subdivision::{
    build_levels, calibrate_delta, verify_decomposition_properties, SubdivisionConfig,
    SubdivisionError,
};
use csst_core::{build_jn, CsstPoint, Rational, SimplicialMetricTree, Word};
use serde_json::{json, Value};

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;

/// Pipeline stages in order; a failure exits with `10 + index`.
const STAGES: [&str; 5] = [
    "calibrate",
    "refine",
    "isomorphism",
    "image-quasivisual",
    "distortion",
];

#[derive(Parser)]
#[command(
    name = "csst",
    version,
    about = "Uniformization of trivalent trees onto the CSST"
)]
struct Cli {
    /// Worker threads for parallel sweeps (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw J_n as SVG.
    Render {
        #[arg(long)]
        level: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build and verify a δ-graded subdivision.
    Subdivide(SubdivideArgs),
    /// Check the quasi-visual conditions on a stored subdivision or on CSST word tiles.
    VerifyQv(VerifyQvArgs),
    /// Refine the tile homeomorphism over a stored subdivision.
    Homeo(HomeoArgs),
    /// Calibrate, subdivide, refine, verify and fit the distortion.
    Pipeline(PipelineArgs),
    /// Fit a distortion function η.
    Eta(EtaArgs),
    /// Sample a Brownian excursion and its CRT quotient.
    Crt(CrtArgs),
    /// Re-run the verifiers on stored artifacts.
    Verify(VerifyArgs),
}

#[derive(Args, Clone)]
struct Input {
    /// Tree JSON.
    #[arg(long, conflicts_with = "jn")]
    tree: Option<PathBuf>,
    /// Use the CSST approximant J_n.
    #[arg(long)]
    jn: Option<usize>,
}

impl Input {
    fn load(&self) -> Result<SimplicialMetricTree> {
        match (&self.tree, self.jn) {
            (Some(p), _) => read_tree(p),
            (None, Some(n)) => Ok(make_model(&ModelKind::Jn(n))?),
            (None, None) => bail!("one of --tree or --jn is required"),
        }
    }

    fn echo(&self) -> Value {
        json!({
            "tree": self.tree.as_ref().map(|p| p.display().to_string()),
            "jn": self.jn,
        })
    }
}

#[derive(Args)]
struct SubdivideArgs {
    #[command(flatten)]
    input: Input,
    /// Fixed δ; without it δ is calibrated over --delta-grid.
    #[arg(long)]
    delta: Option<String>,
    #[arg(long, default_value = "1/2,1/4,1/8,1/16")]
    delta_grid: String,
    #[arg(long, default_value_t = 3)]
    levels: usize,
    /// Compare heights with δⁿ directly instead of δⁿ·diam T.
    #[arg(long)]
    no_normalize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyQvArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    subdivision: Option<PathBuf>,
    /// CSST word tiles of length at most --budget-words.
    #[arg(long, conflicts_with = "subdivision")]
    csst: bool,
    #[arg(long, default_value_t = 8)]
    budget_words: usize,
    /// Also run the visual check with this δ.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HomeoArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    subdivision: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, default_value = "1/2,1/4,1/8,1/16")]
    delta_grid: String,
    #[arg(long, default_value_t = 3)]
    levels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Triples sampled by the distortion fit.
    #[arg(long, default_value_t = 200_000)]
    budget_triples: usize,
    #[arg(long)]
    no_normalize: bool,
    /// Take inputs and configuration from a previous run.
    #[arg(long, conflicts_with_all = ["tree", "jn"])]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EtaArgs {
    /// A pipeline output directory: fit tree metric against the image metric on 𝒱ⁿ.
    #[arg(long, conflicts_with = "csst")]
    dir: Option<PathBuf>,
    /// Fit the geodesic metric of the CSST against the Euclidean one on
    /// branch points g_u(0) with ℓ(u) < --budget-words.
    #[arg(long)]
    csst: bool,
    #[arg(long, default_value_t = 8)]
    budget_words: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200_000)]
    budget_triples: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CrtArgs {
    /// Grid size, a power of two.
    #[arg(long, default_value_t = 1024)]
    resolution: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "0")]
    eps: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// A pipeline output directory or a single artifact.
    path: PathBuf,
    /// Tree for a standalone subdivision or homeomorphism artifact.
    #[command(flatten)]
    input: Input,
    /// Subdivision for a standalone homeomorphism artifact.
    #[arg(long)]
    subdivision: Option<PathBuf>,
}

/// An error that maps to a specific exit code.
#[derive(Debug)]
struct Exit(u8, String);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Exit {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let r = match cli.cmd {
        Cmd::Render { level, out } => render(level, &out),
        Cmd::Subdivide(a) => subdivide(&a),
        Cmd::VerifyQv(a) => verify_qv(&a),
        Cmd::Homeo(a) => homeo(&a),
        Cmd::Pipeline(a) => pipeline(&a),
        Cmd::Eta(a) => eta(&a),
        Cmd::Crt(a) => crt(&a),
        Cmd::Verify(a) => verify(&a),
    };
    match r {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAIL),
        Err(e) => {
            let code = match e.downcast_ref::<Exit>() {
                Some(Exit(c, _)) => *c,
                None => EXIT_USAGE,
            };
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn read_json(p: &Path) -> Result<Value> {
    let s = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&s).with_context(|| format!("parsing {}", p.display()))
}

fn write_json(p: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(p, s).with_context(|| format!("writing {}", p.display()))
}

fn emit(out: Option<&Path>, v: &Value) -> Result<()> {
    match out {
        Some(p) => write_json(p, v),
        None => {
            println!("{}", serde_json::to_string_pretty(v)?);
            Ok(())
        }
    }
}

fn schema_context(e: IoError, file: &Path) -> anyhow::Error {
    match e {
        IoError::Schema { pointer, message } => {
            anyhow!("{}: schema error at {pointer}: {message}", file.display())
        }
        e => anyhow!("{}: {e}", file.display()),
    }
}

fn read_tree(p: &Path) -> Result<SimplicialMetricTree> {
    tree_from_json(&read_json(p)?).map_err(|e| schema_context(e, p))
}

fn parse_grid(s: &str) -> Result<Vec<Rational>> {
    s.split(',')
        .map(|x| parse_rational(x.trim()).map_err(|e| anyhow!("--delta-grid: {e}")))
        .collect()
}

fn render(level: usize, out: &Path) -> Result<bool> {
    let j = build_jn(level);
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="-1.1 -1.15 2.2 1.25" width="880" height="500">"#
    )?;
    writeln!(
        svg,
        r#"<g stroke="black" stroke-linecap="round" fill="none">"#
    )?;
    for e in 0..j.tree.edge_count() {
        let (a, b) = j.tree.edge(e);
        let ((x1, y1), (x2, y2)) = (j.points[a].to_f64(), j.points[b].to_f64());
        // J_k first contains the segment at k = position of its last letter 3
        let born = j.edge_segment[e]
            .letters()
            .iter()
            .rposition(|&c| c == 3)
            .map_or(0, |i| i + 1);
        let width = 0.02 / f64::from(1u32 << born.min(31));
        writeln!(
            svg,
            r#"<line x1="{x1:.6}" y1="{:.6}" x2="{x2:.6}" y2="{:.6}" stroke-width="{width:.6}"/>"#,
            -y1 + 0.0,
            -y2 + 0.0
        )?;
    }
    svg.push_str("</g>\n</svg>\n");
    fs::write(out, svg).with_context(|| format!("writing {}", out.display()))?;
    Ok(true)
}

fn subdivide(a: &SubdivideArgs) -> Result<bool> {
    let tree = a.input.load()?;
    let normalize = !a.no_normalize;
    let (seq, report) = match &a.delta {
        Some(d) => {
            let delta = parse_rational(d).map_err(|e| anyhow!("--delta: {e}"))?;
            let seq = build_levels(
                &tree,
                &SubdivisionConfig {
                    delta,
                    n_max: a.levels,
                    normalize,
                },
            )?;
            let report = verify_decomposition_properties(&tree, &seq)?;
            (seq, report)
        }
        None => match calibrate_delta(&tree, a.levels, &parse_grid(&a.delta_grid)?, normalize) {
            Ok(c) => (c.sequence, c.report),
            Err(e @ SubdivisionError::NoFeasibleDelta(_)) => {
                return Err(Exit(10, format!("calibrate: {e}")).into())
            }
            Err(e) => return Err(e.into()),
        },
    };
    write_json(&a.out, &subdivision_to_json(&seq))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(report.pass)
}

fn verify_qv(a: &VerifyQvArgs) -> Result<bool> {
    if a.csst {
        let cover = WordCover::standard(a.budget_words);
        let qv = check_quasivisual(&cover)?;
        let mut out = json!({"quasivisual": qv});
        let mut pass = qv.pass;
        if let Some(d) = a.delta {
            let vis = check_visual(&cover, d, DRIFT_TOLERANCE)?;
            pass &= vis.pass;
            out["visual"] = serde_json::to_value(&vis)?;
        }
        emit(a.out.as_deref(), &out)?;
        return Ok(pass);
    }
    let Some(path) = &a.subdivision else {
        bail!("one of --subdivision or --csst is required");
    };
    let tree = a.input.load()?;
    let seq =
        subdivision_from_json(&tree, &read_json(path)?).map_err(|e| schema_context(e, path))?;
    let cover = seq.cover(&tree);
    let qv = check_quasivisual(&cover)?;
    let mut out = json!({"quasivisual": qv});
    let mut pass = qv.pass;
    if let Some(d) = a.delta {
        let vis = check_visual(&cover, d, DRIFT_TOLERANCE)?;
        pass &= vis.pass;
        out["visual"] = serde_json::to_value(&vis)?;
    }
    emit(a.out.as_deref(), &out)?;
    Ok(pass)
}

fn homeo(a: &HomeoArgs) -> Result<bool> {
    let tree = a.input.load()?;
    let seq = subdivision_from_json(&tree, &read_json(&a.subdivision)?)
        .map_err(|e| schema_context(e, &a.subdivision))?;
    let report = verify_decomposition_properties(&tree, &seq)?;
    let h = refine_homeo(&tree, &seq, &report, seq.n_max())?;
    let iso = verify_isomorphism(&seq, &h);
    write_json(&a.out, &homeo_to_json(&h))?;
    let out = json!({"refinement": h.checks, "isomorphism": iso});
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(h.checks_pass() && iso.pass)
}

struct PipelineRun {
    input: Input,
    grid: String,
    levels: usize,
    seed: u64,
    budget_triples: usize,
    normalize: bool,
}

impl PipelineRun {
    fn from_args(a: &PipelineArgs) -> Result<Self> {
        let Some(m) = &a.manifest else {
            return Ok(PipelineRun {
                input: a.input.clone(),
                grid: a.delta_grid.clone(),
                levels: a.levels,
                seed: a.seed,
                budget_triples: a.budget_triples,
                normalize: !a.no_normalize,
            });
        };
        let v = read_json(m)?;
        let c = &v["config"];
        let get = |k: &str| {
            c.get(k)
                .ok_or_else(|| anyhow!("{}: schema error at /config/{k}: missing", m.display()))
        };
        let uint = |k: &str| -> Result<u64> {
            get(k)?.as_u64().ok_or_else(|| {
                anyhow!(
                    "{}: schema error at /config/{k}: expected an integer",
                    m.display()
                )
            })
        };
        let input = &v["input"];
        Ok(PipelineRun {
            input: Input {
                tree: input["tree"].as_str().map(PathBuf::from),
                jn: input["jn"].as_u64().map(|n| n as usize),
            },
            grid: get("delta_grid")?
                .as_str()
                .ok_or_else(|| anyhow!("{}: schema error at /config/delta_grid", m.display()))?
                .to_string(),
            levels: uint("levels")? as usize,
            seed: uint("seed")?,
            budget_triples: uint("budget_triples")? as usize,
            normalize: get("normalize")?.as_bool().unwrap_or(true),
        })
    }
}

fn pipeline(a: &PipelineArgs) -> Result<bool> {
    let start = Instant::now();
    let run = PipelineRun::from_args(a)?;
    let tree = run.input.load()?;
    let config = PipelineConfig {
        grid: parse_grid(&run.grid)?,
        n_max: run.levels,
        normalize: run.normalize,
        triple_budget: run.budget_triples,
        seed: run.seed,
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let outcome = match end_to_end(&tree, &config) {
        Ok(o) => o,
        Err(e) => {
            let stage = match &e {
                HomeoError::Subdivision(_) => 0,
                HomeoError::Qv(_) => 4,
                _ => 1,
            };
            return Err(Exit(
                10 + stage as u8,
                format!("stage {} failed: {e}", STAGES[stage]),
            )
            .into());
        }
    };
    let files = [
        "tree.json",
        "subdivision.json",
        "homeo.json",
        "qv.json",
        "distortion.json",
    ];
    write_json(&a.out.join(files[0]), &tree_to_json(&tree))?;
    write_json(
        &a.out.join(files[1]),
        &subdivision_to_json(&outcome.sequence),
    )?;
    write_json(&a.out.join(files[2]), &homeo_to_json(&outcome.homeo))?;
    write_json(
        &a.out.join(files[3]),
        &json!({"properties": outcome.properties, "image": outcome.image_qv}),
    )?;
    write_json(
        &a.out.join(files[4]),
        &serde_json::to_value(&outcome.distortion)?,
    )?;
    let trail: Vec<Value> = outcome
        .trail
        .iter()
        .map(|(d, f)| json!({"delta": fmt_rational(d), "failed": f}))
        .collect();
    let manifest = json!({
        "subcommand": "pipeline",
        "input": run.input.echo(),
        "config": {
            "delta_grid": run.grid,
            "levels": run.levels,
            "seed": run.seed,
            "budget_triples": run.budget_triples,
            "normalize": run.normalize,
        },
        "calibration": trail,
        "stages": outcome.stages,
        "pass": outcome.pass(),
        "outputs": files.iter().chain(["manifest.json"].iter()).collect::<Vec<_>>(),
        "tool_version": env!("CARGO_PKG_VERSION"),
        "wall_clock_ms": start.elapsed().as_millis() as u64,
    });
    write_json(&a.out.join("manifest.json"), &manifest)?;
    for s in &outcome.stages {
        println!(
            "{} {}: {}",
            if s.pass { "PASS" } else { "FAIL" },
            s.stage,
            s.detail
        );
    }
    if let Some(i) = outcome.stages.iter().position(|s| !s.pass) {
        let name = outcome.stages[i].stage;
        let idx = STAGES.iter().position(|s| *s == name).unwrap_or(i);
        return Err(Exit(10 + idx as u8, format!("stage {name} failed")).into());
    }
    Ok(true)
}

fn eta(a: &EtaArgs) -> Result<bool> {
    let fit = if a.csst {
        let pts: Vec<CsstPoint> = Word::all_up_to(a.budget_words.saturating_sub(1))
            .into_iter()
            .map(CsstPoint::branch)
            .collect();
        let coords: Vec<_> = pts.iter().map(CsstPoint::coords).collect();
        let d1 = FnMetric(pts.len(), |i: usize, j: usize| {
            csst_core::dyadic::to_f64(&csst_core::csst::geodesic_distance(&pts[i], &pts[j]))
        });
        let d2 = FnMetric(pts.len(), |i: usize, j: usize| {
            coords[i].dist_f64(&coords[j])
        });
        let fit = fit_distortion(&d1, &d2, a.budget_triples, a.seed)?;
        let m = csst_metrics(a.budget_words.min(6));
        json!({"fit": fit, "quasiconvexity": m.quasiconvexity})
    } else {
        let Some(dir) = &a.dir else {
            bail!("one of --dir or --csst is required");
        };
        let (tree, seq, h) = load_dir(dir)?;
        let n = seq.n_max();
        let pts = seq.cuts[n].clone();
        let images = pts
            .iter()
            .map(|&v| {
                h.vertex_image(v)
                    .ok_or_else(|| anyhow!("no image recorded for vertex {v}"))
            })
            .collect::<Result<Vec<_>>>()?;
        let d1 = FnMetric(pts.len(), |i: usize, j: usize| {
            tree.dist_f64(pts[i], pts[j])
        });
        let d2 = FnMetric(pts.len(), |i: usize, j: usize| {
            images[i].dist_f64(&images[j])
        });
        json!({"fit": fit_distortion(&d1, &d2, a.budget_triples, a.seed)?})
    };
    emit(a.out.as_deref(), &fit)?;
    Ok(true)
}

fn crt(a: &CrtArgs) -> Result<bool> {
    let eps = parse_rational(&a.eps).map_err(|e| anyhow!("--eps: {e}"))?;
    let sample = brownian_excursion(a.resolution, a.seed)?;
    let q = crt_quotient(&sample, eps)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("excursion.csv"), excursion_to_csv(&sample))?;
    write_json(&a.out.join("tree.json"), &tree_to_json(&q.tree))?;
    let max_degree = (0..q.tree.vertex_count())
        .map(|v| q.tree.degree(v))
        .max()
        .unwrap_or(0);
    let c = q.tree.geometric_constants(20_000, a.seed);
    let summary = json!({
        "resolution": a.resolution,
        "seed": a.seed,
        "vertices": q.tree.vertex_count(),
        "branch_points": q.tree.branch_points().len(),
        "max_degree": max_degree,
        "trivalent": max_degree <= 3,
        "constants": c,
    });
    write_json(&a.out.join("summary.json"), &summary)?;
    Ok(true)
}

type Loaded = (
    SimplicialMetricTree,
    csst_core::subdivision::SubdivisionSequence,
    csst_core::homeo::TileHomeomorphism,
);

fn load_dir(dir: &Path) -> Result<Loaded> {
    let tp = dir.join("tree.json");
    let sp = dir.join("subdivision.json");
    let hp = dir.join("homeo.json");
    let tree = read_tree(&tp)?;
    let seq = subdivision_from_json(&tree, &read_json(&sp)?).map_err(|e| schema_context(e, &sp))?;
    let h = homeo_from_json(&read_json(&hp)?).map_err(|e| schema_context(e, &hp))?;
    Ok((tree, seq, h))
}

fn verify(a: &VerifyArgs) -> Result<bool> {
    let p = &a.path;
    let (tree_path, sub_path, homeo_path) = if p.is_dir() {
        (
            Some(p.join("tree.json")),
            Some(p.join("subdivision.json")),
            Some(p.join("homeo.json")).filter(|h| h.exists()),
        )
    } else {
        let v = read_json(p)?;
        if v.get("subcommand").is_some() {
            let dir = p.parent().unwrap_or(Path::new("."));
            return verify(&VerifyArgs {
                path: dir.to_path_buf(),
                input: Input {
                    tree: None,
                    jn: None,
                },
                subdivision: None,
            });
        } else if v.get("edges").is_some() {
            (Some(p.clone()), None, None)
        } else if v.get("delta").is_some() {
            (None, Some(p.clone()), None)
        } else {
            (None, a.subdivision.clone(), Some(p.clone()))
        }
    };
    let tree = match tree_path {
        Some(tp) => read_tree(&tp)?,
        None if a.input.tree.is_some() || a.input.jn.is_some() => a.input.load()?,
        None => bail!("--tree or --jn is required for this artifact"),
    };
    let mut out = json!({"tree": {"vertices": tree.vertex_count(), "edges": tree.edge_count()}});
    let mut pass = true;
    let Some(sp) = sub_path else {
        if homeo_path.is_some() {
            bail!("--subdivision is required for a homeomorphism artifact");
        }
        println!("{}", serde_json::to_string_pretty(&out)?);
        return Ok(true);
    };
    let seq = subdivision_from_json(&tree, &read_json(&sp)?).map_err(|e| schema_context(e, &sp))?;
    let report = verify_decomposition_properties(&tree, &seq)?;
    pass &= report.pass;
    out["properties"] = serde_json::to_value(&report)?;
    if let Some(hp) = homeo_path {
        let h = homeo_from_json(&read_json(&hp)?).map_err(|e| schema_context(e, &hp))?;
        let iso = verify_isomorphism(&seq, &h);
        let image = check_quasivisual(&WordCover::new(h.words.clone()))?;
        pass &= iso.pass && image.pass;
        out["isomorphism"] = serde_json::to_value(&iso)?;
        out["image_quasivisual"] = serde_json::to_value(&image)?;
    }
    out["pass"] = json!(pass);
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(pass)
}
