//! Raw embedding export for external projection tools (t-SNE, UMAP).

use std::fmt::Write as _;

use crate::error::Result;
use crate::forward::ProbePoint;
use crate::trace::ActivationTrace;

/// CSV with columns `token_index,tag,excluded,v0..v{d-1}`.
///
/// Every token appears, excluded ones flagged. Values are printed with nine
/// significant digits, enough for an exact f32 round-trip.
pub fn export_embeddings(
    trace: &ActivationTrace,
    layer: usize,
    probe: ProbePoint,
) -> Result<String> {
    let tensor = trace.require(layer, probe)?;
    let d = tensor.cols();
    let mut out = String::from("token_index,tag,excluded");
    for j in 0..d {
        let _ = write!(out, ",v{j}");
    }
    out.push('\n');
    for (i, tok) in trace.sequence.tokens.iter().enumerate() {
        let _ = write!(out, "{i},{},{}", tok.tag, tok.excluded);
        for &v in tensor.row(i) {
            let _ = write!(out, ",{:.8e}", v);
        }
        out.push('\n');
    }
    Ok(out)
}
