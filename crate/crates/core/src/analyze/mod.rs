//! Static analysis of a [`NetworkSpec`]: shape inference, weight and MAC
//! counts aggregated per table row, the RPN / classifier cost split, and
//! receptive-field distributions. Nothing here touches tensor data.
//!
//! Counting conventions:
//! - parameters are convolution, deconvolution and fully-connected weights
//!   only (no biases, batch-norm or scale/shift terms);
//! - a convolution costs `weights x output positions` MACs, a
//!   fully-connected layer costs its weight count per item, everything else
//!   is free;
//! - layers carrying a `block` tag aggregate under that row.

mod rf;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Diagnostic, LayerKind, NetworkSpec};
use crate::tensor::Shape;

pub use rf::{receptive_field_distribution, receptive_fields, RfDistribution};

/// Output shape of every layer. Inputs not listed in `inputs` fall back to
/// their nominal size.
pub fn infer_shapes(net: &NetworkSpec, inputs: &BTreeMap<String, Shape>) -> Result<BTreeMap<String, Shape>> {
    net.ensure_valid()?;
    let mut shapes: BTreeMap<String, Shape> = BTreeMap::new();
    let nominal = net.nominal_input_shapes();
    for i in net.topo_order()? {
        let l = &net.layers[i];
        let shape = match &l.kind {
            LayerKind::Input { channels, .. } => {
                let s = inputs
                    .get(&l.name)
                    .or_else(|| nominal.get(&l.name))
                    .copied()
                    .ok_or_else(|| Error::MissingInput(l.name.clone()))?;
                if s.c != *channels {
                    return Err(Error::Validation(vec![Diagnostic {
                        layer: Some(l.name.clone()),
                        message: format!("input declares {channels} channels, shape has {}", s.c),
                    }]));
                }
                s
            }
            kind => {
                let ins: Vec<Shape> = l.inputs.iter().map(|n| shapes[n]).collect();
                kind.output_shape(&ins).map_err(|m| {
                    Error::Validation(vec![Diagnostic {
                        layer: Some(l.name.clone()),
                        message: m,
                    }])
                })?
            }
        };
        shapes.insert(l.name.clone(), shape);
    }
    Ok(shapes)
}

/// Weight elements a layer contributes to the parameter count.
pub fn layer_params(kind: &LayerKind) -> u64 {
    match kind {
        LayerKind::Conv(c) => c.weight_count() as u64,
        LayerKind::DeconvBilinear(d) => d.weight_count() as u64,
        LayerKind::FullyConnected {
            in_features,
            out_features,
            ..
        } => (*in_features * *out_features) as u64,
        _ => 0,
    }
}

/// MACs of one layer given its output shape (per batch item).
pub fn layer_macs(kind: &LayerKind, output: Shape) -> u64 {
    match kind {
        LayerKind::Conv(_) | LayerKind::DeconvBilinear(_) => layer_params(kind) * output.plane() as u64,
        LayerKind::FullyConnected { .. } => layer_params(kind),
        _ => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: String,
    pub row: String,
    pub output: Shape,
    pub params: u64,
    pub macs: u64,
}

/// One table row: every layer sharing a block tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowCost {
    pub name: String,
    /// Output of the row's final layer (the block output).
    pub output: Shape,
    pub params: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub network: String,
    pub inputs: BTreeMap<String, Shape>,
    pub layers: Vec<LayerCost>,
    pub rows: Vec<RowCost>,
    pub total_params: u64,
    pub total_macs: u64,
}

/// Per-layer and per-row costs.
pub fn cost_report(net: &NetworkSpec, inputs: &BTreeMap<String, Shape>) -> Result<CostReport> {
    let shapes = infer_shapes(net, inputs)?;
    let mut layers = Vec::new();
    let mut rows: Vec<RowCost> = Vec::new();
    let mut row_index: BTreeMap<String, usize> = BTreeMap::new();
    for l in &net.layers {
        if matches!(l.kind, LayerKind::Input { .. }) {
            continue;
        }
        let output = shapes[&l.name];
        let params = layer_params(&l.kind);
        let macs = layer_macs(&l.kind, output);
        let row = l.group().to_string();
        layers.push(LayerCost {
            name: l.name.clone(),
            kind: l.kind.type_name().into(),
            row: row.clone(),
            output,
            params,
            macs,
        });
        let idx = *row_index.entry(row.clone()).or_insert_with(|| {
            rows.push(RowCost {
                name: row.clone(),
                output,
                params: 0,
                macs: 0,
            });
            rows.len() - 1
        });
        let r = &mut rows[idx];
        r.params += params;
        r.macs += macs;
        if l.name == row || shapes.get(&row).is_none() {
            r.output = output;
        }
    }
    let input_shapes = net
        .input_layers()
        .map(|l| (l.name.clone(), shapes[&l.name]))
        .collect();
    Ok(CostReport {
        network: net.name.clone(),
        inputs: input_shapes,
        total_params: rows.iter().map(|r| r.params).sum(),
        total_macs: rows.iter().map(|r| r.macs).sum(),
        layers,
        rows,
    })
}

/// Parameter count per row, in row order.
pub fn count_params(net: &NetworkSpec) -> Result<Vec<(String, u64)>> {
    Ok(cost_report(net, &BTreeMap::new())?
        .rows
        .into_iter()
        .map(|r| (r.name, r.params))
        .collect())
}

/// MAC count per row at the given input shapes, in row order.
pub fn count_macs(net: &NetworkSpec, inputs: &BTreeMap<String, Shape>) -> Result<Vec<(String, u64)>> {
    Ok(cost_report(net, inputs)?
        .rows
        .into_iter()
        .map(|r| (r.name, r.macs))
        .collect())
}

/// Thousands as the cost table prints them: one decimal below 10K, whole
/// numbers above. Rounds half up.
pub fn format_k(v: u64) -> String {
    if v < 9_950 {
        let tenths = (v + 50) / 100;
        format!("{}.{}K", tenths / 10, tenths % 10)
    } else {
        format!("{}K", (v + 500) / 1000)
    }
}

/// Millions, whole numbers, half up.
pub fn format_m(v: u64) -> String {
    format!("{}M", (v + 500_000) / 1_000_000)
}

/// Billions with one decimal, half up.
pub fn format_g(v: u64) -> String {
    let tenths = (v + 50_000_000) / 100_000_000;
    format!("{}.{}G", tenths / 10, tenths % 10)
}

/// A `format_k` / `format_m` string as a number of its units.
fn printed_value(s: &str) -> Option<f64> {
    s.trim_end_matches(['K', 'M', 'G']).parse().ok()
}

/// Totals the way the cost table computes them: the sum of the rounded row
/// values (in K and M), rounded to whole units.
pub fn table_convention_totals(rows: &[RowCost]) -> (String, String) {
    let k: f64 = rows
        .iter()
        .filter(|r| r.params > 0)
        .filter_map(|r| printed_value(&format_k(r.params)))
        .sum();
    let m: f64 = rows
        .iter()
        .filter(|r| r.macs > 0)
        .filter_map(|r| printed_value(&format_m(r.macs)))
        .sum();
    (format!("{}K", k.round() as u64), format!("{}M", m.round() as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub name: String,
    pub output: String,
    pub params: Option<String>,
    pub macs: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTotal {
    pub params: String,
    pub macs: String,
}

/// Reference values transcribed from the published structure table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTable {
    pub source: String,
    pub input: String,
    pub rows: Vec<ReferenceRow>,
    pub total: ReferenceTotal,
}

const TABLE1_JSON: &str = include_str!("../../data/table1_reference.json");

pub fn reference_table() -> ReferenceTable {
    serde_json::from_str(TABLE1_JSON).expect("bundled reference table parses")
}

/// One cell compared against the reference (printed forms and numeric delta).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellComparison {
    pub computed: String,
    pub reference: String,
    pub delta: f64,
}

impl CellComparison {
    fn new(computed: String, reference: &str) -> Self {
        let delta = printed_value(&computed).unwrap_or(f64::NAN) - printed_value(reference).unwrap_or(f64::NAN);
        CellComparison {
            computed,
            reference: reference.to_string(),
            delta: (delta * 10.0).round() / 10.0,
        }
    }

    pub fn matches(&self) -> bool {
        self.computed == self.reference
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowComparison {
    pub name: String,
    pub output: CellComparison,
    pub params: Option<CellComparison>,
    pub macs: Option<CellComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceComparison {
    pub rows: Vec<RowComparison>,
    /// Rows present in the reference but absent from the report.
    pub missing: Vec<String>,
    pub total_params: CellComparison,
    pub total_macs: CellComparison,
}

impl ReferenceComparison {
    pub fn all_match(&self) -> bool {
        self.missing.is_empty()
            && self.total_params.matches()
            && self.total_macs.matches()
            && self.rows.iter().all(|r| {
                r.output.matches() && r.params.as_ref().is_none_or(|c| c.matches()) && r.macs.as_ref().is_none_or(|c| c.matches())
            })
    }
}

pub fn compare_with_reference(report: &CostReport, reference: &ReferenceTable) -> ReferenceComparison {
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for r in &reference.rows {
        let Some(ours) = report.rows.iter().find(|x| x.name == r.name) else {
            missing.push(r.name.clone());
            continue;
        };
        rows.push(RowComparison {
            name: r.name.clone(),
            output: CellComparison {
                computed: ours.output.to_string(),
                reference: r.output.clone(),
                delta: 0.0,
            },
            params: r.params.as_deref().map(|p| CellComparison::new(format_k(ours.params), p)),
            macs: r.macs.as_deref().map(|m| CellComparison::new(format_m(ours.macs), m)),
        });
    }
    let (tk, tm) = table_convention_totals(&report.rows);
    ReferenceComparison {
        rows,
        missing,
        total_params: CellComparison::new(tk, &reference.total.params),
        total_macs: CellComparison::new(tm, &reference.total.macs),
    }
}

/// Classifier cost at one proposal count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierCost {
    pub proposals: usize,
    /// Hidden fully-connected stack only.
    pub hidden_macs: u64,
    /// Hidden stack plus the score/box predictor.
    pub with_predictor_macs: u64,
}

/// Detection-time cost split: shared trunk, RPN and per-proposal classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadBreakdown {
    pub shared_macs: u64,
    pub rpn_macs: u64,
    pub per_roi_hidden_macs: u64,
    pub per_roi_predictor_macs: u64,
    pub classifier: Vec<ClassifierCost>,
    pub notes: Vec<String>,
}

/// Splits a detector graph's cost: fully-connected layers are per-proposal
/// (rows tagged `predictor` are the output layer), layers in row `rpn` are
/// the RPN, everything else is the shared trunk.
pub fn count_rpn_rcnn_macs(
    net: &NetworkSpec,
    inputs: &BTreeMap<String, Shape>,
    proposal_counts: &[usize],
) -> Result<HeadBreakdown> {
    let report = cost_report(net, inputs)?;
    let mut b = HeadBreakdown {
        shared_macs: 0,
        rpn_macs: 0,
        per_roi_hidden_macs: 0,
        per_roi_predictor_macs: 0,
        classifier: Vec::new(),
        notes: Vec::new(),
    };
    for l in &report.layers {
        let fc = l.kind == "fully_connected";
        if fc && l.row == "predictor" {
            b.per_roi_predictor_macs += l.params;
        } else if fc {
            b.per_roi_hidden_macs += l.params;
        } else if l.row == "rpn" {
            b.rpn_macs += l.macs;
        } else {
            b.shared_macs += l.macs;
        }
    }
    for &p in proposal_counts {
        b.classifier.push(ClassifierCost {
            proposals: p,
            hidden_macs: b.per_roi_hidden_macs * p as u64,
            with_predictor_macs: (b.per_roi_hidden_macs + b.per_roi_predictor_macs) * p as u64,
        });
    }
    if proposal_counts.contains(&200) && proposal_counts.contains(&300) {
        b.notes.push(
            "the published classifier cost (27.7G) corresponds to 300 proposals, while the published \
             operating point uses 200 proposals; both are reported"
                .into(),
        );
    }
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Table,
    Json,
}

/// Everything `analyze` prints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutput {
    pub report: CostReport,
    pub table_totals: (String, String),
    pub reference: Option<ReferenceComparison>,
    pub heads: Option<HeadBreakdown>,
}

pub fn emit_report(out: &AnalysisOutput, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(out)? + "\n"),
        ReportFormat::Table => Ok(render_table(out)),
    }
}

fn render_table(out: &AnalysisOutput) -> String {
    let r = &out.report;
    let mut s = String::new();
    let with_ref = out.reference.is_some();
    let _ = write!(s, "{:<12} {:>12} {:>9} {:>8}", "Name", "Output size", "# params", "MAC");
    if with_ref {
        let _ = write!(s, " {:>9} {:>8} {:>8} {:>8}", "ref par", "ref MAC", "d par", "d MAC");
    }
    s.push('\n');
    for row in &r.rows {
        let p = if row.params > 0 { format_k(row.params) } else { String::new() };
        let m = if row.macs > 0 { format_m(row.macs) } else { String::new() };
        let _ = write!(s, "{:<12} {:>12} {:>9} {:>8}", row.name, row.output.to_string(), p, m);
        if let Some(cmp) = &out.reference {
            if let Some(c) = cmp.rows.iter().find(|c| c.name == row.name) {
                let cell = |c: &Option<CellComparison>| -> (String, String) {
                    c.as_ref()
                        .map(|c| (c.reference.clone(), format!("{}", c.delta)))
                        .unwrap_or_default()
                };
                let (rp, dp) = cell(&c.params);
                let (rm, dm) = cell(&c.macs);
                let _ = write!(s, " {rp:>9} {rm:>8} {dp:>8} {dm:>8}");
            }
        }
        s.push('\n');
    }
    let (tk, tm) = &out.table_totals;
    let _ = write!(s, "{:<12} {:>12} {:>9} {:>8}", "Total", "", tk, tm);
    if let Some(cmp) = &out.reference {
        let _ = write!(
            s,
            " {:>9} {:>8} {:>8} {:>8}",
            cmp.total_params.reference, cmp.total_macs.reference, cmp.total_params.delta, cmp.total_macs.delta
        );
    }
    s.push('\n');
    let _ = writeln!(s, "exact total: {} params, {} MAC", r.total_params, r.total_macs);
    if let Some(h) = &out.heads {
        let _ = writeln!(s, "\nshared CNN: {}  RPN: {}", format_g(h.shared_macs), format_g(h.rpn_macs));
        let _ = writeln!(
            s,
            "classifier per proposal: {} MAC (hidden), {} MAC (with predictor)",
            h.per_roi_hidden_macs,
            h.per_roi_hidden_macs + h.per_roi_predictor_macs
        );
        for c in &h.classifier {
            let _ = writeln!(
                s,
                "classifier @ {} proposals: {} (hidden), {} (with predictor)",
                c.proposals,
                format_g(c.hidden_macs),
                format_g(c.with_predictor_macs)
            );
        }
        for n in &h.notes {
            let _ = writeln!(s, "note: {n}");
        }
    }
    if let Some(cmp) = &out.reference {
        for row in &cmp.rows {
            for c in [&row.params, &row.macs].into_iter().flatten() {
                if !c.matches() {
                    let _ = writeln!(s, "mismatch: {} computed {} vs reference {}", row.name, c.computed, c.reference);
                }
            }
        }
    }
    s
}

/// Cost analysis with reference comparison when the network is evaluated at
/// the reference input size.
pub fn analyze(
    net: &NetworkSpec,
    inputs: &BTreeMap<String, Shape>,
    proposal_counts: &[usize],
) -> Result<AnalysisOutput> {
    let report = cost_report(net, inputs)?;
    let table_totals = table_convention_totals(&report.rows);
    let reference_table = reference_table();
    let at_reference_size = report
        .inputs
        .values()
        .next()
        .is_some_and(|s| format!("{}x{}", s.h, s.w) == reference_table.input);
    let has_rows = report.rows.len() == reference_table.rows.len()
        && reference_table.rows.iter().all(|r| report.rows.iter().any(|x| x.name == r.name));
    let reference = (at_reference_size && has_rows).then(|| compare_with_reference(&report, &reference_table));
    let has_heads = report.rows.iter().any(|r| r.name == "rpn" || r.name == "predictor");
    let heads = if has_heads {
        Some(count_rpn_rcnn_macs(net, inputs, proposal_counts)?)
    } else {
        None
    };
    Ok(AnalysisOutput {
        report,
        table_totals,
        reference,
        heads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_pvanet, build_pvanet_detector, LayerSpec};

    fn shape_of(net: &NetworkSpec, h: usize, w: usize) -> BTreeMap<String, Shape> {
        BTreeMap::from([(net.input_layers().next().unwrap().name.clone(), Shape::new(1, 3, h, w))])
    }

    #[test]
    fn rounding() {
        assert_eq!(format_k(2352), "2.4K");
        assert_eq!(format_k(9792), "9.8K");
        assert_eq!(format_k(11_072), "11K");
        assert_eq!(format_k(6144), "6.1K");
        assert_eq!(format_k(9_960), "10K");
        assert_eq!(format_m(397_393_920), "397M");
        assert_eq!(format_m(16_220_160), "16M");
        assert_eq!(format_g(7_938_400_000), "7.9G");
    }

    #[test]
    fn conv1_and_convf_costs() {
        let r = cost_report(&build_pvanet(), &BTreeMap::new()).unwrap();
        let row = |n: &str| r.rows.iter().find(|x| x.name == n).unwrap().clone();
        assert_eq!(row("conv1_1").params, 2352);
        assert_eq!(row("conv1_1").macs, 397_393_920);
        assert_eq!(row("convf").params, 393_216);
        assert_eq!(row("conv5_1").params, 573_440);
        assert_eq!(row("upscale").macs, 16_220_160);
        assert_eq!(row("pool1_1").output.to_string(), "264x160x32");
    }

    #[test]
    fn smaller_input_shapes() {
        let net = build_pvanet();
        let s = infer_shapes(&net, &shape_of(&net, 640, 416)).unwrap();
        assert_eq!((s["convf"].h, s["convf"].w), (40, 26));
    }

    #[test]
    fn identity_and_empty_nets() {
        let mut net = NetworkSpec::new("id");
        net.layers.push(LayerSpec::new(
            "x",
            LayerKind::Input {
                channels: 3,
                height: Some(5),
                width: Some(7),
            },
            &[],
        ));
        net.layers.push(LayerSpec::new("r", LayerKind::Relu, &["x"]));
        let s = infer_shapes(&net, &BTreeMap::new()).unwrap();
        assert_eq!(s["r"], Shape::new(1, 3, 5, 7));
        let r = cost_report(&NetworkSpec::new("empty"), &BTreeMap::new()).unwrap();
        assert!(r.rows.is_empty());
        assert_eq!((r.total_params, r.total_macs), (0, 0));
    }

    #[test]
    fn head_breakdown() {
        let net = build_pvanet_detector();
        let h = count_rpn_rcnn_macs(&net, &BTreeMap::new(), &[200, 300]).unwrap();
        assert_eq!(h.rpn_macs, 499_968 * 66 * 40);
        assert_eq!(h.per_roi_hidden_macs, 18_432 * 4096 + 4096 * 4096);
        assert_eq!(h.per_roi_predictor_macs, 4096 * 105);
        assert_eq!(format_g(h.classifier[1].hidden_macs), "27.7G");
        assert_eq!(format_g(h.shared_macs), "7.9G");
    }

    #[test]
    fn json_round_trip() {
        let net = build_pvanet();
        let out = analyze(&net, &BTreeMap::new(), &[200, 300]).unwrap();
        let text = emit_report(&out, ReportFormat::Json).unwrap();
        let back: AnalysisOutput = serde_json::from_str(&text).unwrap();
        assert_eq!(back, out);
    }
}
