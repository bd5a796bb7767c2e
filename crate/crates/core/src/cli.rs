//! Command-line surface: `analyze`, `infer`, `compress` and `train-toy`.
//!
//! Each command takes a clap-parsed argument struct, returns its report as a
//! string, and embeds the fully resolved arguments in that report so a run
//! can be reproduced from its output alone.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analyze::{self, ReportFormat};
use crate::compress;
use crate::detect::{self, BBox, ClassifyConfig, DetectorConfig, ProposalConfig};
use crate::error::{Error, Result};
use crate::graph::{self, MiniPvanetConfig, NetworkSpec, WeightStore};
use crate::sched::{self, LossKind, LrPolicy, PlateauConfig, ToyTrainConfig};
use crate::tensor::{io as nt, Shape, Tensor};

/// Environment variable overriding the default worker-thread count.
pub const THREADS_ENV: &str = "PVANET_NUM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "pvanet", version, about = "PVANET cost analysis, inference, compression and toy training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parameter / MAC table, reference deltas and head cost breakdown.
    Analyze(AnalyzeArgs),
    /// Detect objects in a PPM image (or a preprocessed .nt tensor).
    Infer(InferArgs),
    /// Replace fc6/fc7 by truncated-SVD factor pairs.
    Compress(CompressArgs),
    /// Train the miniature network on synthetic data.
    TrainToy(TrainToyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AnalyzeArgs {
    /// `pvanet`, `pvanet-detector`, `rpn`, `rcnn`, or a path to a JSON spec.
    #[arg(default_value = "pvanet")]
    pub spec: String,
    /// Input size as HEIGHTxWIDTH.
    #[arg(long, default_value = "1056x640", value_parser = parse_size)]
    pub input: (usize, usize),
    /// Proposal counts for the classifier cost breakdown.
    #[arg(long, value_delimiter = ',', default_value = "200,300")]
    pub proposals: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InferArgs {
    /// Builtin name or JSON spec path of a detector graph.
    #[arg(long, default_value = "pvanet-detector")]
    pub spec: String,
    /// Weight file (PVAW). Mutually exclusive with `--random-weights`.
    #[arg(long, conflicts_with = "random_weights", required_unless_present = "random_weights")]
    pub weights: Option<PathBuf>,
    /// Initialise weights randomly from this seed instead of loading them.
    #[arg(long)]
    pub random_weights: Option<u64>,
    /// Binary PPM image, or a preprocessed `(1, 3, H, W)` .nt tensor.
    pub input: PathBuf,
    #[arg(long, default_value_t = 640)]
    pub shorter_edge: usize,
    #[arg(long, default_value_t = 200)]
    pub proposals: usize,
    #[arg(long, default_value_t = 12000)]
    pub pre_nms: usize,
    #[arg(long, default_value_t = 0.4)]
    pub nms: f64,
    #[arg(long, default_value_t = 0.05)]
    pub score_threshold: f64,
    /// Refine detections with bounding-box voting.
    #[arg(long)]
    pub voting: bool,
    /// Per-channel RGB means subtracted from 0..255 pixel values.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub means: Option<Vec<f64>>,
    /// Directory receiving input.nt and the raw head outputs.
    #[arg(long)]
    pub dump_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompressArgs {
    #[arg(long, default_value = "pvanet-detector")]
    pub spec: String,
    #[arg(long)]
    pub weights_in: PathBuf,
    #[arg(long)]
    pub weights_out: PathBuf,
    /// Where to write the rewired network spec (JSON).
    #[arg(long)]
    pub spec_out: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pub k1: usize,
    #[arg(long, default_value_t = 512)]
    pub k2: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainToyArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 20)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = PolicyArg::Plateau)]
    pub lr_policy: PolicyArg,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.3165)]
    pub factor: f64,
    #[arg(long, default_value_t = 100)]
    pub window: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub min_lr: f64,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// Side length of the square synthetic images (multiple of 8).
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Loss trace CSV (printed to stdout when absent).
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    #[arg(long)]
    pub weights_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyArg {
    Fixed,
    Plateau,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HEIGHTxWIDTH, got `{s}`"))?;
    let h = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    let w = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    if h == 0 || w == 0 {
        return Err("sizes must be positive".into());
    }
    Ok((h, w))
}

/// Builtin networks by name; anything else is read as a JSON spec file.
pub fn resolve_spec(name: &str) -> Result<NetworkSpec> {
    match name {
        "pvanet" => Ok(graph::build_pvanet()),
        "pvanet-detector" => Ok(graph::build_pvanet_detector()),
        "rpn" => Ok(graph::build_rpn_head()),
        "rcnn" => Ok(graph::build_rcnn_head()),
        path => {
            let net = NetworkSpec::load(path)?;
            net.ensure_valid()?;
            Ok(net)
        }
    }
}

fn config_line<T: Serialize>(command: &str, args: &T) -> Result<String> {
    Ok(format!("# {command} {}\n", serde_json::to_string(args)?))
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<String> {
    let net = resolve_spec(&args.spec)?;
    let (h, w) = args.input;
    let mut inputs = BTreeMap::new();
    for l in net.input_layers() {
        // Only image-like inputs are resized; auxiliary inputs (RoIs,
        // features fed to a bare head) keep their declared extent.
        if let graph::LayerKind::Input { channels, .. } = l.kind {
            if channels == 3 {
                inputs.insert(l.name.clone(), Shape::new(1, channels, h, w));
            }
        }
    }
    let out = analyze::analyze(&net, &inputs, &args.proposals)?;
    match args.format {
        Format::Table => Ok(config_line("analyze", args)? + &analyze::emit_report(&out, ReportFormat::Table)?),
        Format::Json => {
            #[derive(Serialize)]
            struct Doc<'a> {
                config: &'a AnalyzeArgs,
                #[serde(flatten)]
                analysis: &'a analyze::AnalysisOutput,
            }
            Ok(serde_json::to_string_pretty(&Doc {
                config: args,
                analysis: &out,
            })? + "\n")
        }
    }
}

/// Reads a binary PPM into a `(1, 3, H, W)` tensor of 0..255 values.
pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path)?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        img.get_pixel(x as u32, y as u32)[c] as f32
    }))
}

/// Aspect-preserving resize so the shorter edge becomes `shorter_edge`,
/// bilinear (triangle filter). Returns the image and the scale applied.
pub fn resize_shorter_edge(img: &Tensor<f32>, shorter_edge: usize) -> Result<(Tensor<f32>, f64)> {
    let s = img.shape();
    let scale = shorter_edge as f64 / s.h.min(s.w) as f64;
    let (nh, nw) = (
        ((s.h as f64 * scale).round() as usize).max(1),
        ((s.w as f64 * scale).round() as usize).max(1),
    );
    if (nh, nw) == (s.h, s.w) {
        return Ok((img.clone(), 1.0));
    }
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, nh, nw));
    for n in 0..s.n {
        for c in 0..s.c {
            // `image` clamps f32 samples to [0, 1]; the triangle filter is a
            // convex combination, so mapping into that range and back is exact
            // up to rounding.
            let src = img.plane(n, c);
            let lo = src.iter().copied().fold(f32::INFINITY, f32::min);
            let span = (src.iter().copied().fold(f32::NEG_INFINITY, f32::max) - lo).max(f32::MIN_POSITIVE);
            let plane = image::ImageBuffer::<image::Luma<f32>, Vec<f32>>::from_raw(
                s.w as u32,
                s.h as u32,
                src.iter().map(|v| (v - lo) / span).collect(),
            )
            .ok_or_else(|| Error::shape("resize", "plane size"))?;
            let r = image::imageops::resize(&plane, nw as u32, nh as u32, image::imageops::FilterType::Triangle);
            let off = out.index(n, c, 0, 0);
            for (o, v) in out.data_mut()[off..off + nh * nw].iter_mut().zip(r.as_raw()) {
                *o = v * span + lo;
            }
        }
    }
    Ok((out, scale))
}

/// Subtracts per-channel means and zero-pads right/bottom to a multiple of
/// `multiple` (so the pad is mean-valued before subtraction).
pub fn preprocess(img: &Tensor<f32>, means: [f64; 3], multiple: usize) -> Tensor<f32> {
    let s = img.shape();
    let m = multiple.max(1);
    let (ph, pw) = (s.h.div_ceil(m) * m, s.w.div_ceil(m) * m);
    Tensor::from_fn(Shape::new(s.n, s.c, ph, pw), |n, c, y, x| {
        if y < s.h && x < s.w {
            img.at(n, c, y, x) - means[c % 3] as f32
        } else {
            0.0
        }
    })
}

fn roi_feature_layer(net: &NetworkSpec, rois_input: &str) -> Result<String> {
    net.layers
        .iter()
        .find(|l| matches!(l.kind, graph::LayerKind::RoiPool(_)) && l.inputs.get(1).map(String::as_str) == Some(rois_input))
        .map(|l| l.inputs[0].clone())
        .ok_or_else(|| Error::Spec(format!("no RoI pooling layer reads `{rois_input}`")))
}

pub fn cmd_infer(args: &InferArgs) -> Result<String> {
    let net = resolve_spec(&args.spec)?;
    let mut det = net.detector.clone().unwrap_or_else(DetectorConfig::default);
    if let Some(m) = &args.means {
        det.pixel_means = [m[0], m[1], m[2]];
    }
    let weights = match (&args.weights, args.random_weights) {
        (Some(p), _) => WeightStore::<f32>::load(p)?,
        (None, Some(seed)) => WeightStore::init(&net, seed),
        (None, None) => return Err(Error::Spec("either --weights or --random-weights is required".into())),
    };
    weights.check(&net)?;

    let is_tensor = args.input.extension().is_some_and(|e| e == "nt");
    let (x, scale, size) = if is_tensor {
        let t = nt::load_tensor(&args.input)?;
        let s = t.shape();
        (preprocess(&t, [0.0; 3], det.pad_multiple), 1.0, (s.h, s.w))
    } else {
        let raw = read_ppm(&args.input)?;
        let (resized, scale) = resize_shorter_edge(&raw, args.shorter_edge)?;
        let s = resized.shape();
        (preprocess(&resized, det.pixel_means, det.pad_multiple), scale, (s.h, s.w))
    };
    if let Some(dir) = &args.dump_dir {
        std::fs::create_dir_all(dir)?;
        nt::save_tensor(&x, dir.join("input.nt"))?;
    }

    let feature = roi_feature_layer(&net, &det.rois_input)?;
    let mut stage1 = graph::execute_targets(
        &net,
        &weights,
        &HashMap::from([(det.image_input.clone(), x)]),
        &[&det.rpn_scores, &det.rpn_deltas, &feature],
    )?;
    let take = |m: &mut BTreeMap<String, Tensor<f32>>, k: &str| {
        m.remove(k).ok_or_else(|| Error::Spec(format!("`{k}` was not produced")))
    };
    let scores = take(&mut stage1, &det.rpn_scores)?;
    let deltas = take(&mut stage1, &det.rpn_deltas)?;
    let features = take(&mut stage1, &feature)?;
    let pcfg = ProposalConfig {
        pre_nms_top_n: args.pre_nms,
        post_nms_top_n: args.proposals,
        nms_threshold: args.nms,
        ..ProposalConfig::default()
    };
    let proposals = detect::propose(&scores, &deltas, &det.anchors(), size, &pcfg)?;
    let rois: Vec<BBox> = proposals.iter().map(|p| p.0).collect();

    let mut dets = Vec::new();
    if !rois.is_empty() {
        let roi_t = Tensor::new(
            Shape::new(rois.len(), 4, 1, 1),
            rois.iter().flat_map(|b| b.as_array().map(|v| v as f32)).collect(),
        )?;
        let mut stage2 = graph::execute_targets(
            &net,
            &weights,
            &HashMap::from([(feature.clone(), features), (det.rois_input.clone(), roi_t)]),
            &[&det.cls_prob, &det.bbox_pred],
        )?;
        let probs = take(&mut stage2, &det.cls_prob)?;
        let bbox = take(&mut stage2, &det.bbox_pred)?;
        let ccfg = ClassifyConfig {
            score_threshold: args.score_threshold,
            nms_threshold: args.nms,
            voting: args.voting,
            ..ClassifyConfig::default()
        };
        dets = detect::classify_rois(&probs, &bbox, &rois, size, &ccfg)?;
        if let Some(dir) = &args.dump_dir {
            nt::save_tensor(&probs, dir.join("cls_prob.nt"))?;
            nt::save_tensor(&bbox, dir.join("bbox_pred.nt"))?;
        }
    }
    // Back to original image coordinates.
    for d in &mut dets {
        let b = d.bbox;
        d.bbox = BBox::new(b.x1 / scale, b.y1 / scale, b.x2 / scale, b.y2 / scale);
    }
    Ok(config_line("infer", args)? + &detect::format_detections(&dets))
}

pub fn cmd_compress(args: &CompressArgs) -> Result<String> {
    let net = resolve_spec(&args.spec)?;
    let weights = WeightStore::<f32>::load(&args.weights_in)?;
    let (new_net, store, summary) = compress::compress_rcnn_head(&net, &weights, args.k1, args.k2)?;
    store.save(&args.weights_out)?;
    if let Some(p) = &args.spec_out {
        new_net.save(p)?;
    }
    // Per-RoI MACs of the fully-connected layers equal their weight counts.
    let head_macs = |n: &NetworkSpec| -> u64 {
        n.layers
            .iter()
            .filter(|l| matches!(l.kind, graph::LayerKind::FullyConnected { .. }))
            .map(|l| analyze::layer_params(&l.kind))
            .sum()
    };
    let (before, after) = (head_macs(&net), head_macs(&new_net));
    let mut s = config_line("compress", args)?;
    for c in &summary {
        s += &format!(
            "{}: {}\u{2192}{}/{}  params {} \u{2192} {} ({:.2}\u{d7})  frobenius error {:.6e} (relative {:.6e})\n",
            c.layer,
            c.in_features,
            c.rank,
            c.out_features,
            c.params_before,
            c.params_after,
            c.params_before as f64 / c.params_after as f64,
            c.frobenius_error,
            c.relative_error
        );
    }
    s += &format!(
        "head MAC per RoI: {} ({}) \u{2192} {} ({})  {:.1}\u{d7} reduction\n",
        before,
        format_m1(before),
        after,
        format_m1(after),
        before as f64 / after as f64
    );
    Ok(s)
}

/// Millions with one decimal.
pub fn format_m1(v: u64) -> String {
    format!("{:.1}M", v as f64 / 1e6)
}

/// The network, dataset and trainer configuration a `train-toy` run uses.
pub fn toy_setup(args: &TrainToyArgs) -> Result<(NetworkSpec, sched::Dataset, ToyTrainConfig)> {
    if args.size == 0 || args.size % 8 != 0 {
        return Err(Error::Spec(format!("--size must be a positive multiple of 8, got {}", args.size)));
    }
    let net = graph::build_mini_pvanet(&MiniPvanetConfig {
        input_size: args.size,
        ..MiniPvanetConfig::default()
    });
    let data = sched::synthetic_quadrants(args.samples, args.size, args.noise, args.seed);
    let cfg = ToyTrainConfig {
        seed: args.seed,
        max_iters: args.iters,
        batch_size: args.batch_size,
        momentum: args.momentum,
        loss: LossKind::SoftmaxCrossEntropy,
        policy: match args.lr_policy {
            PolicyArg::Fixed => LrPolicy::Fixed,
            PolicyArg::Plateau => LrPolicy::Plateau,
        },
        plateau: PlateauConfig {
            initial_lr: args.lr,
            decay_factor: args.factor,
            window: args.window,
            improvement_threshold: args.threshold,
            min_lr: args.min_lr,
            ..PlateauConfig::default()
        },
    };
    Ok((net, data, cfg))
}

pub fn cmd_train_toy(args: &TrainToyArgs) -> Result<String> {
    let (net, data, cfg) = toy_setup(args)?;
    let weights = WeightStore::init(&net, args.seed);
    let header = vec![("config".to_string(), serde_json::to_string(args)?)];
    let outcome = match sched::toy_train(&net, weights, &data, &cfg) {
        Ok(o) => o,
        Err(Error::Diverged { iter, trace }) => {
            if let Some(p) = &args.trace_out {
                std::fs::write(p, sched::trace_to_csv(&trace, &header))?;
            }
            return Err(Error::Diverged { iter, trace });
        }
        Err(e) => return Err(e),
    };
    let csv = sched::trace_to_csv(&outcome.trace, &header);
    if let Some(p) = &args.weights_out {
        outcome.weights.save(p)?;
    }
    let acc = sched::accuracy(&net, &outcome.weights, &data)?;
    let decays = outcome.trace.iter().filter(|r| r.event != sched::Event::None).count();
    let last = outcome.trace.last();
    let summary = format!(
        "iterations {}  final loss {:.6}  final lr {:.3e}  decays {}  train accuracy {:.4}\n",
        outcome.trace.len(),
        last.map_or(f64::NAN, |r| r.loss),
        last.map_or(f64::NAN, |r| r.lr),
        decays,
        acc
    );
    match &args.trace_out {
        Some(p) => {
            std::fs::write(p, &csv)?;
            Ok(config_line("train-toy", args)? + &summary)
        }
        None => Ok(csv + &summary),
    }
}

/// Dispatches a parsed command line.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Compress(a) => cmd_compress(a),
        Command::TrainToy(a) => cmd_train_toy(a),
    }
}

/// Sizes the global rayon pool from [`THREADS_ENV`] if set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v
        .parse()
        .map_err(|_| Error::Spec(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    // A second initialisation (e.g. in tests) is harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
