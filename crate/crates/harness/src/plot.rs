//! Loss and step-KL curves from several traces, merged into one CSV.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use tangent_core::solver::read_trace;

/// Method name for a trace file: its file stem.
pub fn method_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Writes `iteration,method,loss,step_kl` rows sorted by (method, iteration).
/// Values are copied from the traces unchanged; a missing step KL is an
/// empty field. Returns the number of data rows.
pub fn emit_plot_data<W: Write>(traces: &[PathBuf], out: W) -> Result<usize> {
    let mut rows = Vec::new();
    for path in traces {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let records = read_trace(BufReader::new(file)).with_context(|| format!("in {}", path.display()))?;
        let method = method_of(path);
        rows.extend(records.into_iter().map(|r| (method.clone(), r)));
    }
    rows.sort_by(|(ma, a), (mb, b)| ma.cmp(mb).then(a.index.cmp(&b.index)));

    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "method", "loss", "step_kl"])?;
    for (method, r) in &rows {
        let kl = r.step_kl.map(|k| format!("{k:?}")).unwrap_or_default();
        w.write_record([r.index.to_string(), method.clone(), format!("{:?}", r.loss), kl])?;
    }
    w.flush()?;
    Ok(rows.len())
}
