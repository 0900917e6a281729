use std::io::Write;

use super::frame::{block_decompose, rho_from_svals, BlockDecomp, SubspaceFrame};
use crate::error::{Error, Result};
use crate::linalg::{projection_residual, thin_svd, Basis, LinalgError, Matrix, SvdTriplet};

/// Exact header of the per-(epoch, layer) trace CSV.
pub const TRACE_HEADER: &str = "epoch,loss,layer,sv_index,sigma,sin_top,sin_bottom,sin_mid_left,sin_mid_right,blk1,blk2,blk3,blk4,A_t,rho_t,sigma1_G,sigmaK1_G,gradnorm";

/// Number of real-valued columns after `epoch` (all except `epoch`, `layer`
/// and `sv_index`).
pub const TRACE_VALUES: usize = 15;

/// Measurements for one tracked layer at one epoch.
///
/// The `sin_*` fields hold squared sine norms. Block distances are `None`
/// until the weights move.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    pub svals: Vec<f64>,
    pub sin_top: f64,
    pub sin_bottom: f64,
    pub sin_mid_left: f64,
    pub sin_mid_right: f64,
    /// `‖W̃_i(t) − W̃_i(0)‖²_F / Σ_j ‖W̃_j(t) − W̃_j(0)‖²_F`.
    pub blk: Option<[f64; 4]>,
    /// `‖W̃_i(t) − W̃_i(t_prev)‖_F` against the previous record.
    pub step_blocks: Option<[f64; 4]>,
    pub block_norms: [f64; 4],
    pub a_t: f64,
    /// `‖sinΘ(R_{1,1}(t), R_{1,1}(0))‖` of the layer gradient.
    pub sin_grad_right: f64,
    pub rho_t: f64,
    /// Leading `K + 1` singular values of the layer gradient.
    pub grad_svals: Vec<f64>,
    pub gradnorm: f64,
    /// `σ_K − σ_{K+1} ≥ 1e-10·σ_1` for the weight; otherwise the top/bottom
    /// sine values are not well defined.
    pub gap_ok: bool,
}

impl LayerTrace {
    pub fn sigma1_g(&self) -> f64 {
        self.grad_svals.first().copied().unwrap_or(0.0)
    }

    pub fn sigma_k1_g(&self) -> f64 {
        self.grad_svals.last().copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub epoch: usize,
    pub loss: f64,
    pub layers: Vec<LayerTrace>,
    /// Set when any metric is non-finite.
    pub error: bool,
}

/// One CSV row: `epoch`, `layer` (1-based), `sv_index` and the
/// [`TRACE_VALUES`] real columns in header order.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub layer: usize,
    pub sv_index: usize,
    pub values: [Option<f64>; TRACE_VALUES],
}

impl TraceRecord {
    /// Rows for the trace CSV; `sigma` is `σ_{K+1}` of the weight.
    pub fn rows(&self, k: usize) -> Vec<TraceRow> {
        self.layers
            .iter()
            .enumerate()
            .map(|(l, t)| {
                let blk = t.blk.map_or([None; 4], |b| b.map(Some));
                TraceRow {
                    epoch: self.epoch,
                    layer: l + 1,
                    sv_index: k + 1,
                    values: [
                        Some(self.loss),
                        t.svals.get(k).copied(),
                        Some(t.sin_top),
                        Some(t.sin_bottom),
                        Some(t.sin_mid_left),
                        Some(t.sin_mid_right),
                        blk[0],
                        blk[1],
                        blk[2],
                        blk[3],
                        Some(t.a_t),
                        Some(t.rho_t),
                        Some(t.sigma1_g()),
                        Some(t.sigma_k1_g()),
                        Some(t.gradnorm),
                    ],
                }
            })
            .collect()
    }
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

pub fn write_trace_csv<W: Write>(mut w: W, rows: &[TraceRow]) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in rows {
        write!(w, "{},{},{},{},{}", r.epoch, fmt_cell(r.values[0]), r.layer, r.sv_index, fmt_cell(r.values[1]))?;
        for v in &r.values[2..] {
            write!(w, ",{}", fmt_cell(*v))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Wide singular-value table: `epoch,layer,sv1..svM`, short rows padded
/// with empty cells.
pub fn write_svals_csv<W: Write>(mut w: W, rows: &[(usize, usize, Vec<f64>)]) -> std::io::Result<()> {
    let width = rows.iter().map(|r| r.2.len()).max().unwrap_or(0);
    write!(w, "epoch,layer")?;
    for i in 1..=width {
        write!(w, ",sv{i}")?;
    }
    writeln!(w)?;
    for (epoch, layer, s) in rows {
        write!(w, "{epoch},{layer}")?;
        for i in 0..width {
            write!(w, ",{}", fmt_cell(s.get(i).copied()))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// References fixed at the first record for one layer.
#[derive(Clone, Debug)]
struct LayerRef {
    top: Basis,
    bottom: Basis,
    u_small: Basis,
    v_small: Basis,
    grad_left: Basis,
    grad_right: Basis,
    blocks0: BlockDecomp,
    prev: BlockDecomp,
}

/// Records [`TraceRecord`]s for the hidden layers of a network.
#[derive(Clone, Debug)]
pub struct Tracker {
    k: usize,
    frame: SubspaceFrame,
    refs: Vec<LayerRef>,
    records: Vec<TraceRecord>,
}

fn weight_subspaces(svd: &SvdTriplet, k: usize) -> Result<(Basis, Basis, Basis, Basis)> {
    let n = svd.svals.len();
    if 2 * k > n {
        return Err(Error::Range(format!("need 2K <= {n}, got K={k}")));
    }
    Ok((
        Basis::new(svd.left.columns(0..k))?,
        Basis::new(svd.left.columns(n - k..n))?,
        Basis::new(svd.left.columns(k..n - k))?,
        Basis::new(svd.right.columns(k..n - k))?,
    ))
}

/// Squared sine norm, or the projection residual of the smaller basis onto
/// the larger one when their dimensions differ.
fn sin_sq(a: &Basis, b: &Basis) -> Result<f64> {
    if a.dim() <= b.dim() {
        Ok(projection_residual(a, b)?)
    } else {
        Ok(projection_residual(b, a)?)
    }
}

impl Tracker {
    /// Fixes reference subspaces from the initial weights and gradients of
    /// the framed layers.
    pub fn new(frame: SubspaceFrame, k: usize) -> Self {
        Self { k, frame, refs: Vec::new(), records: Vec::new() }
    }

    pub fn frame(&self) -> &SubspaceFrame {
        &self.frame
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TraceRecord> {
        self.records
    }

    /// Measures the framed layers of `layers` with their gradients `grads`.
    /// The first call sets the references.
    pub fn record(&mut self, epoch: usize, loss: f64, layers: &[Matrix], grads: &[Matrix]) -> Result<&TraceRecord> {
        let n = self.frame.layers.len();
        if layers.len() < n || grads.len() < n {
            return Err(Error::Input(format!("tracker needs {n} layers and gradients")));
        }
        let k = self.k;
        let first = self.refs.is_empty();
        let mut out = Vec::with_capacity(n);
        for l in 0..n {
            let w = &layers[l];
            let g = &grads[l];
            if w.shape() != g.shape() {
                return Err(LinalgError::shape_mismatch("tracker", w.shape(), g.shape()).into());
            }
            let frame = &self.frame.layers[l];
            let wsvd = thin_svd(w)?;
            let gsvd = thin_svd(g)?;
            let blocks = block_decompose(w, frame)?;
            let (top, bottom, mid_l, mid_r) = weight_subspaces(&wsvd, k)?;
            let g_left = Basis::new(gsvd.left.columns(0..k))?;
            let g_right = Basis::new(gsvd.right.columns(0..k))?;
            if first {
                self.refs.push(LayerRef {
                    top: top.clone(),
                    bottom: bottom.clone(),
                    u_small: Basis::new(frame.u_small())?,
                    v_small: Basis::new(frame.v_small())?,
                    grad_left: g_left.clone(),
                    grad_right: g_right.clone(),
                    blocks0: blocks.clone(),
                    prev: blocks.clone(),
                });
            }
            let r = &self.refs[l];
            let sin_gl = projection_residual(&g_left, &r.grad_left)?.sqrt();
            let sin_gr = projection_residual(&g_right, &r.grad_right)?.sqrt();
            let a_t = sin_gl.max(sin_gr);
            let moved = blocks.diff_norms(&r.blocks0)?;
            let total: f64 = moved.iter().map(|x| x * x).sum();
            let blk = (total > 1e-14 * (1.0 + blocks.norms().iter().map(|x| x * x).sum::<f64>()))
                .then(|| moved.map(|x| x * x / total));
            let step_blocks = if first { None } else { Some(blocks.diff_norms(&r.prev)?) };
            let s = &wsvd.svals;
            let gap_ok = s.len() <= k || s[k - 1] - s[k] >= 1e-10 * s[0];
            out.push(LayerTrace {
                svals: s.clone(),
                sin_top: projection_residual(&top, &r.top)?,
                sin_bottom: projection_residual(&bottom, &r.bottom)?,
                sin_mid_left: sin_sq(&r.u_small, &mid_l)?,
                sin_mid_right: sin_sq(&r.v_small, &mid_r)?,
                blk,
                step_blocks,
                block_norms: blocks.norms(),
                a_t,
                sin_grad_right: sin_gr,
                rho_t: rho_from_svals(&gsvd.svals, a_t, k, frame.p())?,
                grad_svals: gsvd.svals[..=k].to_vec(),
                gradnorm: g.frobenius_norm(),
                gap_ok,
            });
            self.refs[l].prev = blocks;
        }
        let error = !loss.is_finite()
            || out.iter().any(|t| {
                let mut vals =
                    vec![t.sin_top, t.sin_bottom, t.sin_mid_left, t.sin_mid_right, t.a_t, t.rho_t, t.gradnorm];
                vals.extend(t.blk.into_iter().flatten());
                vals.iter().any(|v| !v.is_finite())
            });
        self.records.push(TraceRecord { epoch, loss, layers: out, error });
        Ok(self.records.last().expect("just pushed"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let row = TraceRow { epoch: 0, layer: 1, sv_index: 5, values: [Some(0.5); TRACE_VALUES] };
        let mut empty = row.clone();
        empty.values[6] = None;
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &[row, empty]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRACE_HEADER);
        assert_eq!(lines[1].split(',').count(), 18);
        assert_eq!(lines[1].split(',').nth(9), Some("0.5"));
        assert_eq!(lines[2].split(',').nth(9), Some(""));
    }

    #[test]
    fn svals_padding() {
        let mut buf = Vec::new();
        write_svals_csv(&mut buf, &[(0, 1, vec![2.0, 1.0]), (0, 2, vec![3.0])]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,layer,sv1,sv2\n0,1,2,1\n0,2,3,\n");
    }
}
