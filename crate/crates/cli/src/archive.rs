//! Readers over the field-record archives written by `sample`.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use gradgibbs::io::{read_record, FieldHeader, FieldKind};
use gradgibbs::lattice::ConductanceField;

use crate::{CliError, CliResult};

/// Opens an archive named by the config field `field`; a missing file is a
/// configuration error.
pub fn open(field: &str, path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Config(format!("{field}: cannot open {}: {e}", path.display())))
}

/// Streams every record of an archive through `visit`.
pub fn for_each(
    r: &mut BufReader<File>,
    mut visit: impl FnMut(FieldHeader, Vec<f64>) -> CliResult<()>,
) -> CliResult<()> {
    while let Some((header, values)) = read_record(r)? {
        visit(header, values)?;
    }
    Ok(())
}

/// Collects up to `limit` conductance records (0 = all), ignoring other
/// record kinds interleaved in the stream.
pub fn read_conductances(
    field: &str,
    path: &Path,
    limit: usize,
) -> CliResult<Vec<ConductanceField>> {
    let mut envs = Vec::new();
    let mut r = open(field, path)?;
    for_each(&mut r, |header, values| {
        if header.kind == FieldKind::Conductance && (limit == 0 || envs.len() < limit) {
            envs.push(ConductanceField::new(header.torus()?, values)?);
        }
        Ok(())
    })?;
    if envs.is_empty() {
        return Err(CliError::Config(format!(
            "{field}: {} holds no conductance records",
            path.display()
        )));
    }
    Ok(envs)
}
