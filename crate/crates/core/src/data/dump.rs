//! JSON-lines instance dumps.

use std::io::{BufRead, Write};
use std::path::Path;

use super::instance::TrainingInstance;
use crate::error::{Error, Result};

pub fn write_instances<W: Write>(w: &mut W, instances: &[TrainingInstance]) -> Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut *w, inst)?;
        w.write_all(b"\n")
            .map_err(|e| Error::Data(format!("writing instances: {e}")))?;
    }
    Ok(())
}

/// Reads one instance per non-empty line and restores the padding mask.
pub fn read_instances<R: BufRead>(r: R) -> Result<Vec<TrainingInstance>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Data(format!("reading instances: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut inst: TrainingInstance = serde_json::from_str(&line)?;
        let len = inst.token_ids.len();
        let bad = inst.segment_ids.len() != len
            || inst.masked_positions.len() != inst.masked_targets.len()
            || inst.masked_positions.iter().any(|&p| p >= len);
        if bad {
            return Err(Error::Data(format!("instance on line {} is inconsistent", n + 1)));
        }
        inst.padding_mask = vec![true; len];
        out.push(inst);
    }
    Ok(out)
}

pub fn load_instances(path: &Path) -> Result<Vec<TrainingInstance>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_instances(std::io::BufReader::new(file))
}
