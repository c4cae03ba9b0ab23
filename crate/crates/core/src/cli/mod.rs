//! Command-line front end: analyze, null, simulate, power, convert.
//!
//! Every randomized command either takes an explicit `--seed` or generates
//! one and records it in the output directory's provenance.json, which holds
//! the fully resolved parameter set needed to re-run the command identically.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::data_model::{
    load_foci_csv, read_nifti, read_vgrid, write_foci_csv, write_nifti, write_vgrid, AtlasTag,
    BrainMask, ColumnMapping, FociDataset, Volume, VolumeGrid,
};
use crate::error::{CbmaError, Result};
use crate::inference::{
    cluster_fwe, fdr_threshold, fixed_threshold, fwe_threshold, load_null, mc_null_max,
    mc_null_max_cluster, null_fingerprint, p_uncorrected, save_null, statistic_and_exact_null,
    value_at_tail_p, Connectivity, NullDistribution, ThresholdResult,
};
use crate::kernel_maps::{KernelSpec, SigmaMode};
use crate::power_eval::{emit_report, sweep, InferenceProc};
use crate::simulation::{classes, gen_dataset, SimConfig, StudyClass};
use crate::statistics::{compute_statistic, weights_from_participants, StudyWeights};

#[derive(Parser)]
#[command(name = "cbma", version, about = "Coordinate-based meta-analysis toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a full foci-to-thresholded-map analysis
    Analyze(AnalyzeArgs),
    /// Build and cache a null distribution without thresholding anything
    Null(NullArgs),
    /// Generate a synthetic foci dataset with known ground truth
    Simulate(SimulateArgs),
    /// Power sweep over study count and valid fraction
    Power(PowerArgs),
    /// Convert between VGRID1 and NIfTI-1 volumes
    Convert(ConvertArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Mkda,
    Ale,
    Sdm,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProcedureArg {
    /// BH-FDR on exact-null p-values
    Fdr,
    /// Voxel-wise FWE from the Monte Carlo max-statistic null
    FweVoxel,
    /// Cluster-extent FWE from the Monte Carlo max-cluster-size null
    FweCluster,
    /// Fixed uncorrected cutoff on exact-null p-values
    Fixed,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    /// MKDA: r=10 mm spheres, participant weighting, voxel FWE 0.05, 10,000 iterations
    PaperMkda,
    /// ALE: sample-size sigma, exact null, FDR 0.05
    PaperAle,
    /// SDM: 20 mm kernel, fixed p<0.001 on exact-null p-values
    PaperSdm,
    /// MKDA variant used for the robustness reruns: r=10 mm, exact-null FDR 0.05
    AppendixAMkda,
    /// SDM variant used for the robustness reruns: sigma=4 mm, exact-null FDR 0.05
    AppendixASdm,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AtlasArg {
    Mni,
    Talairach,
    Unspecified,
}

impl AtlasArg {
    fn tag(self) -> AtlasTag {
        match self {
            AtlasArg::Mni => AtlasTag::Mni,
            AtlasArg::Talairach => AtlasTag::Talairach,
            AtlasArg::Unspecified => AtlasTag::Unspecified,
        }
    }
}

/// Options shared by every subcommand.
#[derive(Args)]
struct CommonArgs {
    /// Output directory (created if absent)
    #[arg(long)]
    out: PathBuf,
    /// Worker cap. Results never depend on it: all randomness comes from
    /// counter-based per-task seed streams.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// key=value file merged under the command-line flags
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// MKDA sphere radius in mm
    #[arg(long)]
    radius: Option<f64>,
    /// ALE/SDM kernel sigma in mm
    #[arg(long)]
    sigma: Option<f64>,
    /// Derive the ALE sigma from each study's sample size
    #[arg(long)]
    sigma_from_n: bool,
    /// Treat unsigned SDM foci as activations
    #[arg(long)]
    assume_positive: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Foci table (CSV)
    #[arg(long)]
    foci: PathBuf,
    /// Column-mapping sidecar (JSON)
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = AtlasArg::Unspecified)]
    atlas: AtlasArg,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[command(flatten)]
    kernel: KernelArgs,
    /// w_i = n_i^exponent
    #[arg(long)]
    weight_exponent: Option<f64>,
    #[arg(long, value_enum)]
    procedure: Option<ProcedureArg>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Cutoff for the fixed procedure
    #[arg(long)]
    p_cut: Option<f64>,
    /// Cluster-forming uncorrected p for fwe-cluster
    #[arg(long)]
    forming_p: Option<f64>,
    /// Cluster connectivity: 6, 18 or 26
    #[arg(long)]
    connectivity: Option<usize>,
    /// Monte Carlo iterations for FWE nulls
    #[arg(long)]
    n_iter: Option<usize>,
    /// Histogram bin width for exact nulls
    #[arg(long)]
    bin_width: Option<f64>,
    /// Mask resolution in mm
    #[arg(long)]
    voxel_mm: Option<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct NullArgs {
    #[arg(long)]
    foci: PathBuf,
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = AtlasArg::Unspecified)]
    atlas: AtlasArg,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long)]
    weight_exponent: Option<f64>,
    /// max | max-cluster | exact
    #[arg(long, default_value = "max")]
    kind: String,
    #[arg(long)]
    n_iter: Option<usize>,
    #[arg(long)]
    bin_width: Option<f64>,
    /// Forming uncorrected p for max-cluster
    #[arg(long)]
    forming_p: Option<f64>,
    #[arg(long)]
    connectivity: Option<usize>,
    #[arg(long)]
    voxel_mm: Option<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    n_studies: Option<usize>,
    #[arg(long)]
    valid_fraction: Option<f64>,
    #[arg(long)]
    scatter_sd: Option<f64>,
    #[arg(long)]
    n_participants: Option<u32>,
    #[arg(long)]
    voxel_mm: Option<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct PowerArgs {
    /// Comma-separated study counts
    #[arg(long)]
    i_grid: Option<String>,
    /// Comma-separated valid fractions
    #[arg(long)]
    p_grid: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
    #[command(flatten)]
    kernel: KernelArgs,
    /// fdr-exact | fwe-mc | fixed-exact
    #[arg(long)]
    procedure: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    p_cut: Option<f64>,
    #[arg(long)]
    n_iter: Option<usize>,
    #[arg(long)]
    bin_width: Option<f64>,
    #[arg(long)]
    scatter_sd: Option<f64>,
    #[arg(long)]
    n_participants: Option<u32>,
    #[arg(long)]
    voxel_mm: Option<f64>,
    /// Print one line per finished cell
    #[arg(long)]
    progress: bool,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

/// key=value lines, '#' comments; merged under command-line flags (a flag
/// given explicitly always wins).
fn load_config(path: Option<&Path>) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    let Some(path) = path else { return Ok(map) };
    let text = std::fs::read_to_string(path)?;
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CbmaError::Parse {
                line: ln + 1,
                msg: format!("expected key=value, got {line:?}"),
            });
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn cfg_parse<T: std::str::FromStr>(cfg: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    match cfg.get(key) {
        None => Ok(None),
        Some(s) => s.parse::<T>().map(Some).map_err(|_| {
            CbmaError::Validation(format!("config key {key}: cannot parse {s:?}"))
        }),
    }
}

fn connectivity_of(n: usize) -> Result<Connectivity> {
    match n {
        6 => Ok(Connectivity::Six),
        18 => Ok(Connectivity::Eighteen),
        26 => Ok(Connectivity::TwentySix),
        _ => Err(CbmaError::Validation(format!(
            "connectivity must be 6, 18 or 26, got {n}"
        ))),
    }
}

/// Resolved analyze/null configuration after preset + config + flag merge.
#[derive(Serialize)]
struct ResolvedAnalysis {
    kernel: KernelSpec,
    weight_exponent: f64,
    procedure: String,
    alpha: f64,
    p_cut: f64,
    forming_p: f64,
    connectivity: usize,
    n_iter: usize,
    bin_width: f64,
    voxel_mm: f64,
    seed: u64,
}

struct PresetValues {
    method: MethodArg,
    radius: f64,
    sigma: Option<f64>,
    sigma_from_n: bool,
    assume_positive: bool,
    weight_exponent: f64,
    procedure: ProcedureArg,
    n_iter: usize,
    p_cut: f64,
}

fn preset_values(p: PresetArg) -> PresetValues {
    let base = PresetValues {
        method: MethodArg::Ale,
        radius: 10.0,
        sigma: None,
        sigma_from_n: false,
        assume_positive: false,
        weight_exponent: 0.0,
        procedure: ProcedureArg::Fdr,
        n_iter: 10_000,
        p_cut: 0.001,
    };
    match p {
        PresetArg::PaperMkda => PresetValues {
            method: MethodArg::Mkda,
            weight_exponent: 1.0,
            procedure: ProcedureArg::FweVoxel,
            ..base
        },
        PresetArg::PaperAle => PresetValues {
            sigma_from_n: true,
            ..base
        },
        PresetArg::PaperSdm => PresetValues {
            method: MethodArg::Sdm,
            sigma: Some(20.0),
            assume_positive: true,
            procedure: ProcedureArg::Fixed,
            n_iter: 500,
            ..base
        },
        PresetArg::AppendixAMkda => PresetValues {
            method: MethodArg::Mkda,
            ..base
        },
        PresetArg::AppendixASdm => PresetValues {
            method: MethodArg::Sdm,
            sigma: Some(4.0),
            assume_positive: true,
            ..base
        },
    }
}

#[allow(clippy::too_many_arguments)]
fn resolve_analysis(
    kernel: &KernelArgs,
    preset: Option<PresetArg>,
    cfg: &BTreeMap<String, String>,
    weight_exponent: Option<f64>,
    procedure: Option<ProcedureArg>,
    alpha: Option<f64>,
    p_cut: Option<f64>,
    forming_p: Option<f64>,
    connectivity: Option<usize>,
    n_iter: Option<usize>,
    bin_width: Option<f64>,
    voxel_mm: Option<f64>,
    seed: Option<u64>,
) -> Result<ResolvedAnalysis> {
    let pv = preset.map(preset_values);
    let method = kernel
        .method
        .or_else(|| match cfg.get("method").map(|s| s.as_str()) {
            Some("mkda") => Some(MethodArg::Mkda),
            Some("ale") => Some(MethodArg::Ale),
            Some("sdm") => Some(MethodArg::Sdm),
            _ => None,
        })
        .or(pv.as_ref().map(|p| p.method))
        .ok_or_else(|| CbmaError::Validation("no method (flag, config, or preset)".into()))?;
    let radius = kernel
        .radius
        .or(cfg_parse(cfg, "radius")?)
        .or(pv.as_ref().map(|p| p.radius))
        .unwrap_or(10.0);
    let sigma_from_n =
        kernel.sigma_from_n || pv.as_ref().map(|p| p.sigma_from_n).unwrap_or(false);
    let sigma = kernel
        .sigma
        .or(cfg_parse(cfg, "sigma")?)
        .or(pv.as_ref().and_then(|p| p.sigma));
    let assume_positive =
        kernel.assume_positive || pv.as_ref().map(|p| p.assume_positive).unwrap_or(false);
    let kspec = match method {
        MethodArg::Mkda => KernelSpec::Mkda { radius_mm: radius },
        MethodArg::Ale => KernelSpec::Ale {
            sigma: if sigma_from_n {
                SigmaMode::FromSampleSize
            } else {
                SigmaMode::Fixed(sigma.ok_or_else(|| {
                    CbmaError::Validation("ALE needs --sigma or --sigma-from-n".into())
                })?)
            },
        },
        MethodArg::Sdm => KernelSpec::Sdm {
            sigma_mm: sigma
                .ok_or_else(|| CbmaError::Validation("SDM needs an explicit --sigma".into()))?,
            assume_positive,
        },
    };
    kspec.validate()?;
    let procedure = procedure
        .or_else(|| match cfg.get("procedure").map(|s| s.as_str()) {
            Some("fdr") => Some(ProcedureArg::Fdr),
            Some("fwe-voxel") => Some(ProcedureArg::FweVoxel),
            Some("fwe-cluster") => Some(ProcedureArg::FweCluster),
            Some("fixed") => Some(ProcedureArg::Fixed),
            _ => None,
        })
        .or(pv.as_ref().map(|p| p.procedure))
        .unwrap_or(ProcedureArg::Fdr);
    let procedure_name = match procedure {
        ProcedureArg::Fdr => "fdr",
        ProcedureArg::FweVoxel => "fwe-voxel",
        ProcedureArg::FweCluster => "fwe-cluster",
        ProcedureArg::Fixed => "fixed",
    };
    Ok(ResolvedAnalysis {
        kernel: kspec,
        weight_exponent: weight_exponent
            .or(cfg_parse(cfg, "weight-exponent")?)
            .or(pv.as_ref().map(|p| p.weight_exponent))
            .unwrap_or(0.0),
        procedure: procedure_name.to_string(),
        alpha: alpha.or(cfg_parse(cfg, "alpha")?).unwrap_or(0.05),
        p_cut: p_cut
            .or(cfg_parse(cfg, "p-cut")?)
            .or(pv.as_ref().map(|p| p.p_cut))
            .unwrap_or(0.001),
        forming_p: forming_p.or(cfg_parse(cfg, "forming-p")?).unwrap_or(0.001),
        connectivity: connectivity.or(cfg_parse(cfg, "connectivity")?).unwrap_or(18),
        n_iter: n_iter
            .or(cfg_parse(cfg, "n-iter")?)
            .or(pv.as_ref().map(|p| p.n_iter))
            .unwrap_or(10_000),
        bin_width: bin_width.or(cfg_parse(cfg, "bin-width")?).unwrap_or(1e-5),
        voxel_mm: voxel_mm.or(cfg_parse(cfg, "voxel-mm")?).unwrap_or(2.0),
        seed: seed.or(cfg_parse(cfg, "seed")?).unwrap_or_else(generate_seed),
    })
}

/// Entropy-sourced seed for commands run without --seed; always recorded in
/// provenance so the run stays reproducible after the fact.
fn generate_seed() -> u64 {
    use std::time::{SystemTime, UNIX_EPOCH};
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0);
    nanos ^ (std::process::id() as u64) << 32
}

fn load_dataset(foci: &Path, mapping: Option<&Path>, atlas: AtlasArg) -> Result<FociDataset> {
    let mapping = match mapping {
        Some(p) => ColumnMapping::from_json_file(p)?,
        None => ColumnMapping::default(),
    };
    load_foci_csv(foci, &mapping, atlas.tag())
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(value)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn write_volume_pair(dir: &Path, stem: &str, vol: &Volume) -> Result<()> {
    let vg = dir.join(format!("{stem}.vgrid"));
    let tmp = dir.join(format!("{stem}.vgrid.tmp"));
    write_vgrid(&tmp, vol)?;
    std::fs::rename(&tmp, &vg)?;
    let ni = dir.join(format!("{stem}.nii"));
    let tmp = dir.join(format!("{stem}.nii.tmp"));
    write_nifti(&tmp, vol)?;
    std::fs::rename(&tmp, &ni)?;
    Ok(())
}

fn bool_to_u8(sig: &VolumeGrid<bool>) -> VolumeGrid<u8> {
    let mut out: VolumeGrid<u8> = VolumeGrid::new(sig.dims(), sig.voxel_size(), sig.origin());
    for (o, &b) in out.data_mut().iter_mut().zip(sig.data()) {
        *o = b as u8;
    }
    out
}

#[derive(Serialize)]
struct Provenance<'a, T: Serialize> {
    command: &'a str,
    package: &'a str,
    version: &'a str,
    jobs: usize,
    params: &'a T,
    inputs: BTreeMap<&'a str, String>,
}

fn write_provenance<T: Serialize>(
    dir: &Path,
    command: &str,
    jobs: usize,
    params: &T,
    inputs: BTreeMap<&'static str, String>,
) -> Result<()> {
    write_json_atomic(
        &dir.join("provenance.json"),
        &Provenance {
            command,
            package: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            jobs,
            params,
            inputs,
        },
    )
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os("CBMA_CACHE_DIR").map(PathBuf::from)
}

/// Monte Carlo max-statistic null, via the CBMA_CACHE_DIR cache when set.
fn cached_mc_null(
    dataset: &FociDataset,
    kernel: &KernelSpec,
    weights: &StudyWeights,
    mask: &BrainMask,
    n_iter: usize,
    seed: u64,
) -> Result<NullDistribution> {
    let fp = null_fingerprint(dataset, kernel, weights, mask, n_iter, seed);
    let cache_path = cache_dir().map(|d| d.join(format!("{fp}.json")));
    if let Some(p) = &cache_path {
        if p.exists() {
            return load_null(p, &fp);
        }
    }
    let null = mc_null_max(dataset, kernel, weights, mask, n_iter, seed)?;
    if let Some(p) = &cache_path {
        std::fs::create_dir_all(p.parent().expect("cache file has parent"))?;
        save_null(p, &null)?;
    }
    Ok(null)
}

#[derive(Serialize)]
struct AnalyzeSummary {
    method: String,
    procedure: String,
    n_studies: usize,
    n_foci: usize,
    n_in_mask: usize,
    max_stat: f64,
    max_stat_world: [f64; 3],
    n_significant: usize,
    n_clusters: usize,
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let cfg = load_config(args.common.config.as_deref())?;
    let r = resolve_analysis(
        &args.kernel,
        args.preset,
        &cfg,
        args.weight_exponent,
        args.procedure,
        args.alpha,
        args.p_cut,
        args.forming_p,
        args.connectivity,
        args.n_iter,
        args.bin_width,
        args.voxel_mm,
        args.common.seed,
    )?;
    let dataset = load_dataset(&args.foci, args.mapping.as_deref(), args.atlas)?;
    let mask = BrainMask::default_ellipsoid(r.voxel_mm);
    let weights = weights_from_participants(&dataset, r.weight_exponent)?;
    let connectivity = connectivity_of(r.connectivity)?;

    let (stat, result) = match r.procedure.as_str() {
        "fdr" | "fixed" => {
            let (stat, null) =
                statistic_and_exact_null(&dataset, &r.kernel, &weights, &mask, r.bin_width)?;
            let p = p_uncorrected(&stat, &null, &mask)?;
            let result = if r.procedure == "fdr" {
                fdr_threshold(&p, &mask, r.alpha)?
            } else {
                fixed_threshold(&p, &mask, r.p_cut)?
            };
            (stat, result)
        }
        "fwe-voxel" => {
            let stat = compute_statistic(&dataset, &r.kernel, &weights, &mask)?;
            let null = cached_mc_null(&dataset, &r.kernel, &weights, &mask, r.n_iter, r.seed)?;
            let result = fwe_threshold(&stat, &null, &mask, r.alpha)?;
            (stat, result)
        }
        "fwe-cluster" => {
            let (stat, exact) =
                statistic_and_exact_null(&dataset, &r.kernel, &weights, &mask, r.bin_width)?;
            let forming = value_at_tail_p(&exact, r.forming_p)?;
            let null = mc_null_max_cluster(
                &dataset,
                &r.kernel,
                &weights,
                &mask,
                forming,
                connectivity,
                r.n_iter,
                r.seed,
            )?;
            let result = cluster_fwe(&stat, forming, r.forming_p, &null, &mask, r.alpha, connectivity)?;
            (stat, result)
        }
        other => return Err(CbmaError::Validation(format!("unknown procedure {other}"))),
    };

    std::fs::create_dir_all(&args.common.out)?;
    let out = &args.common.out;
    write_outputs(out, &mask, &stat, &result, dataset.n_studies(), dataset.n_foci())?;
    let mut inputs = BTreeMap::new();
    inputs.insert("dataset", dataset.fingerprint());
    inputs.insert("mask", mask.fingerprint().to_string());
    inputs.insert("foci_path", args.foci.display().to_string());
    write_provenance(out, "analyze", args.common.jobs, &r, inputs)?;
    Ok(())
}

fn write_outputs(
    out: &Path,
    mask: &BrainMask,
    stat: &crate::data_model::StatImage,
    result: &ThresholdResult,
    n_studies: usize,
    n_foci: usize,
) -> Result<()> {
    write_volume_pair(out, "stat", &Volume::F64(stat.grid.clone()))?;
    write_volume_pair(out, "sig", &Volume::U8(bool_to_u8(&result.sig)))?;
    if let Some(p) = &result.p_uncorrected {
        write_volume_pair(out, "p_uncorrected", &Volume::F64(p.clone()))?;
    }
    if let Some(p) = &result.p_corrected {
        write_volume_pair(out, "p_corrected", &Volume::F64(p.clone()))?;
    }
    write_json_atomic(&out.join("clusters.json"), &result.clusters)?;
    let (max_stat, max_lin) = stat.max_in_mask(mask);
    let g = stat.grid.clone();
    let summary = AnalyzeSummary {
        method: stat.method.to_string(),
        procedure: format!("{:?}", result.procedure),
        n_studies,
        n_foci,
        n_in_mask: mask.n_in_mask(),
        max_stat,
        max_stat_world: g.voxel_to_world(g.unlinear(max_lin)),
        n_significant: result.n_significant(),
        n_clusters: result.clusters.len(),
    };
    write_json_atomic(&out.join("summary.json"), &summary)?;
    Ok(())
}

fn cmd_null(args: &NullArgs) -> Result<()> {
    let cfg = load_config(args.common.config.as_deref())?;
    let r = resolve_analysis(
        &args.kernel,
        None,
        &cfg,
        args.weight_exponent,
        None,
        None,
        None,
        args.forming_p,
        args.connectivity,
        args.n_iter,
        args.bin_width,
        args.voxel_mm,
        args.common.seed,
    )?;
    let dataset = load_dataset(&args.foci, args.mapping.as_deref(), args.atlas)?;
    let mask = BrainMask::default_ellipsoid(r.voxel_mm);
    let weights = weights_from_participants(&dataset, r.weight_exponent)?;
    let null = match args.kind.as_str() {
        "max" => cached_mc_null(&dataset, &r.kernel, &weights, &mask, r.n_iter, r.seed)?,
        "max-cluster" => {
            let (_, exact) =
                statistic_and_exact_null(&dataset, &r.kernel, &weights, &mask, r.bin_width)?;
            let forming = value_at_tail_p(&exact, r.forming_p)?;
            mc_null_max_cluster(
                &dataset,
                &r.kernel,
                &weights,
                &mask,
                forming,
                connectivity_of(r.connectivity)?,
                r.n_iter,
                r.seed,
            )?
        }
        "exact" => {
            let (_, null) =
                statistic_and_exact_null(&dataset, &r.kernel, &weights, &mask, r.bin_width)?;
            null
        }
        other => {
            return Err(CbmaError::Validation(format!(
                "null kind must be max, max-cluster or exact, got {other}"
            )))
        }
    };
    std::fs::create_dir_all(&args.common.out)?;
    save_null(&args.common.out.join("null.json"), &null)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("dataset", dataset.fingerprint());
    inputs.insert("mask", mask.fingerprint().to_string());
    inputs.insert("null", null.fingerprint.clone());
    write_provenance(&args.common.out, "null", args.common.jobs, &r, inputs)?;
    Ok(())
}

#[derive(Serialize)]
struct SimTruth {
    centers: Vec<[f64; 3]>,
    scatter_sd_mm: f64,
    n_studies: usize,
    valid_fraction: f64,
    n_participants: u32,
    seed: u64,
    classes: Vec<String>,
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = load_config(args.common.config.as_deref())?;
    let n_studies = args.n_studies.or(cfg_parse(&cfg, "n-studies")?).unwrap_or(20);
    let valid_fraction = args
        .valid_fraction
        .or(cfg_parse(&cfg, "valid-fraction")?)
        .unwrap_or(0.5);
    let voxel_mm = args.voxel_mm.or(cfg_parse(&cfg, "voxel-mm")?).unwrap_or(4.0);
    let seed = args
        .common
        .seed
        .or(cfg_parse(&cfg, "seed")?)
        .unwrap_or_else(generate_seed);
    let mut sim = SimConfig::new(n_studies, valid_fraction, seed);
    if let Some(sd) = args.scatter_sd.or(cfg_parse(&cfg, "scatter-sd")?) {
        sim.scatter_sd_mm = sd;
    }
    if let Some(n) = args.n_participants.or(cfg_parse(&cfg, "n-participants")?) {
        sim.n_participants = n;
    }
    let mask = BrainMask::default_ellipsoid(voxel_mm);
    let dataset = gen_dataset(&sim, &mask)?;
    std::fs::create_dir_all(&args.common.out)?;
    let out = &args.common.out;
    let tmp = out.join("foci.csv.tmp");
    write_foci_csv(&tmp, &dataset)?;
    std::fs::rename(&tmp, out.join("foci.csv"))?;
    let truth = SimTruth {
        centers: sim.centers.clone(),
        scatter_sd_mm: sim.scatter_sd_mm,
        n_studies,
        valid_fraction,
        n_participants: sim.n_participants,
        seed,
        classes: classes(&sim)
            .iter()
            .map(|c| match c {
                StudyClass::Valid => "valid".to_string(),
                StudyClass::Noise => "noise".to_string(),
            })
            .collect(),
    };
    write_json_atomic(&out.join("truth.json"), &truth)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("mask", mask.fingerprint().to_string());
    inputs.insert("dataset", dataset.fingerprint());
    write_provenance(out, "simulate", args.common.jobs, &truth, inputs)?;
    Ok(())
}

fn parse_grid<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<T>()
                .map_err(|_| CbmaError::Validation(format!("bad {what} entry {t:?}")))
        })
        .collect()
}

#[derive(Serialize)]
struct ResolvedPower {
    i_grid: Vec<usize>,
    p_grid: Vec<f64>,
    replicates: usize,
    kernel: KernelSpec,
    proc: InferenceProc,
    scatter_sd_mm: f64,
    n_participants: u32,
    voxel_mm: f64,
    seed: u64,
}

fn cmd_power(args: &PowerArgs) -> Result<()> {
    let cfg = load_config(args.common.config.as_deref())?;
    let i_grid: Vec<usize> = match args.i_grid.as_deref().or(cfg.get("i-grid").map(|s| s.as_str()))
    {
        Some(s) => parse_grid(s, "i-grid")?,
        None => vec![20, 60, 120],
    };
    let p_grid: Vec<f64> = match args.p_grid.as_deref().or(cfg.get("p-grid").map(|s| s.as_str())) {
        Some(s) => parse_grid(s, "p-grid")?,
        None => vec![0.0, 0.25, 0.5, 0.75, 1.0],
    };
    let replicates = args
        .replicates
        .or(cfg_parse(&cfg, "replicates")?)
        .unwrap_or(100);
    let voxel_mm = args.voxel_mm.or(cfg_parse(&cfg, "voxel-mm")?).unwrap_or(4.0);
    let bin_width = args.bin_width.or(cfg_parse(&cfg, "bin-width")?).unwrap_or(1e-4);
    let alpha = args.alpha.or(cfg_parse(&cfg, "alpha")?).unwrap_or(0.05);
    let seed = args
        .common
        .seed
        .or(cfg_parse(&cfg, "seed")?)
        .unwrap_or_else(generate_seed);
    let kernel = if args.kernel.method.is_none()
        && args.kernel.sigma.is_none()
        && !args.kernel.sigma_from_n
        && cfg.get("method").is_none()
    {
        // desk-scale default
        KernelSpec::Ale {
            sigma: SigmaMode::Fixed(4.0),
        }
    } else {
        resolve_analysis(
            &args.kernel,
            None,
            &cfg,
            None,
            None,
            None,
            None,
            None,
            None,
            args.n_iter,
            Some(bin_width),
            Some(voxel_mm),
            Some(seed),
        )?
        .kernel
    };
    let proc = match args
        .procedure
        .as_deref()
        .or(cfg.get("procedure").map(|s| s.as_str()))
        .unwrap_or("fdr-exact")
    {
        "fdr-exact" => InferenceProc::FdrExact { alpha, bin_width },
        "fwe-mc" => InferenceProc::FweMc {
            alpha,
            n_iter: args.n_iter.or(cfg_parse(&cfg, "n-iter")?).unwrap_or(199),
        },
        "fixed-exact" => InferenceProc::FixedExact {
            p: args.p_cut.or(cfg_parse(&cfg, "p-cut")?).unwrap_or(0.001),
            bin_width,
        },
        other => {
            return Err(CbmaError::Validation(format!(
                "power procedure must be fdr-exact, fwe-mc or fixed-exact, got {other}"
            )))
        }
    };
    let mask = BrainMask::default_ellipsoid(voxel_mm);
    let mut base = SimConfig::new(i_grid[0], p_grid[0], seed);
    if let Some(sd) = args.scatter_sd.or(cfg_parse(&cfg, "scatter-sd")?) {
        base.scatter_sd_mm = sd;
    }
    if let Some(n) = args.n_participants.or(cfg_parse(&cfg, "n-participants")?) {
        base.n_participants = n;
    }
    let resolved = ResolvedPower {
        i_grid: i_grid.clone(),
        p_grid: p_grid.clone(),
        replicates,
        kernel,
        proc,
        scatter_sd_mm: base.scatter_sd_mm,
        n_participants: base.n_participants,
        voxel_mm,
        seed,
    };
    let report = sweep(
        &i_grid,
        &p_grid,
        replicates,
        &kernel,
        proc,
        &base,
        &mask,
        seed,
        args.progress,
    )?;
    std::fs::create_dir_all(&args.common.out)?;
    emit_report(&args.common.out, &report)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("mask", mask.fingerprint().to_string());
    inputs.insert("report", report.fingerprint.clone());
    write_provenance(&args.common.out, "power", args.common.jobs, &resolved, inputs)?;
    Ok(())
}

fn cmd_convert(args: &ConvertArgs) -> Result<()> {
    let read = |p: &Path| -> Result<Volume> {
        match p.extension().and_then(|e| e.to_str()) {
            Some("vgrid") => read_vgrid(p),
            Some("nii") => read_nifti(p),
            _ => Err(CbmaError::Format(format!(
                "cannot infer format of {} (use .vgrid or .nii)",
                p.display()
            ))),
        }
    };
    let vol = read(&args.input)?;
    let tmp = args.output.with_extension("tmp");
    match args.output.extension().and_then(|e| e.to_str()) {
        Some("vgrid") => write_vgrid(&tmp, &vol)?,
        Some("nii") => write_nifti(&tmp, &vol)?,
        _ => {
            return Err(CbmaError::Format(format!(
                "cannot infer format of {} (use .vgrid or .nii)",
                args.output.display()
            )))
        }
    }
    std::fs::rename(&tmp, &args.output)?;
    Ok(())
}

fn error_kind(e: &CbmaError) -> &'static str {
    match e {
        CbmaError::Parse { .. } => "parse",
        CbmaError::Validation(_) => "validation",
        CbmaError::MaskMismatch(_) => "mask-mismatch",
        CbmaError::MethodMismatch(_) => "method-mismatch",
        CbmaError::FocusMassUnderflow(..) => "focus-mass-underflow",
        CbmaError::MissingSign(..) => "missing-sign",
        CbmaError::RejectionExhausted(_) => "rejection-exhausted",
        CbmaError::FingerprintMismatch { .. } => "fingerprint-mismatch",
        CbmaError::Format(_) => "format",
        CbmaError::Io(_) => "io",
        CbmaError::Csv(_) => "csv",
        CbmaError::Json(_) => "json",
    }
}

/// Dispatch; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::Null(a) => cmd_null(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Power(a) => cmd_power(a),
        Cmd::Convert(a) => cmd_convert(a),
    };
    match res {
        Ok(()) => 0,
        Err(e) => {
            // one machine-parsable record per failure
            let record = serde_json::json!({
                "error": error_kind(&e),
                "message": e.to_string(),
            });
            eprintln!("{record}");
            1
        }
    }
}
