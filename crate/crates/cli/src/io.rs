//! Input files (mesh, model, observations) and atomic, headed output files.

use std::fs;
use std::path::{Path, PathBuf};

use bvfield::mesh::{Coord, Mesh};
use bvfield::{CsrMatrix, OperatorSpec};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn read(path: &Path, what: &str) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {what} file {}: {e}", path.display())))
}

pub fn load_mesh(path: Option<&Path>) -> CliResult<Mesh> {
    let path = path.ok_or_else(|| CliError::Config("--mesh is required".into()))?;
    Ok(Mesh::from_json(&read(path, "mesh")?)?)
}

pub fn load_model(path: Option<&Path>) -> CliResult<OperatorSpec> {
    let path = path.ok_or_else(|| CliError::Config("--model is required".into()))?;
    Ok(OperatorSpec::from_json(&read(path, "model")?)?)
}

/// SHA-256 over the canonical JSON of the parsed mesh and model.
pub fn model_hash(mesh: &Mesh, spec: &OperatorSpec) -> String {
    let mut h = Sha256::new();
    h.update(mesh.to_json().as_bytes());
    h.update(b"\n");
    h.update(spec.to_json().as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Parsed observation rows. `coords[k][1]` is 0 for three-column files.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsTable {
    pub columns: usize,
    pub coords: Vec<Coord>,
    pub values: Vec<f64>,
    pub noise_sd: Vec<f64>,
}

impl ObsTable {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Reads `x[,y],value,noise_sd` rows. `#` starts a comment; a leading
/// non-numeric row is taken as a header.
pub fn parse_obs(text: &str) -> CliResult<ObsTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(text.as_bytes());
    let mut table = ObsTable { columns: 0, coords: vec![], values: vec![], noise_sd: vec![] };
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Config(format!("observations: {e}")))?;
        let fields: Vec<&str> = rec.iter().collect();
        let parsed: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let nums = match parsed {
            Ok(v) => v,
            Err(_) if line == 0 => continue,
            Err(_) => return Err(CliError::Config(format!("observations row {}: non-numeric field", line + 1))),
        };
        if !(3..=4).contains(&nums.len()) {
            return Err(CliError::Config(format!(
                "observations need 3 (x,value,noise_sd) or 4 (x,y,value,noise_sd) columns, got {}",
                nums.len()
            )));
        }
        table.columns = nums.len();
        let k = nums.len();
        if nums.iter().any(|v| !v.is_finite()) || nums[k - 1] < 0.0 {
            return Err(CliError::Config(format!("observations row {}: values must be finite, noise_sd ≥ 0", line + 1)));
        }
        table.coords.push(if k == 4 { [nums[0], nums[1]] } else { [nums[0], 0.0] });
        table.values.push(nums[k - 2]);
        table.noise_sd.push(nums[k - 1]);
    }
    Ok(table)
}

pub fn load_obs(path: Option<&Path>) -> CliResult<Option<ObsTable>> {
    path.map(|p| parse_obs(&read(p, "observations")?)).transpose()
}

/// Output directory plus the header every file carries.
#[derive(Debug, Clone)]
pub struct Output {
    dir: PathBuf,
    header: Vec<String>,
}

impl Output {
    pub fn new(dir: &Path, command_line: &str, seed: u64, model_hash: &str) -> CliResult<Self> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            header: vec![
                format!("bvfield {VERSION}"),
                format!("command: {command_line}"),
                format!("seed: {seed}"),
                format!("model-hash: {model_hash}"),
            ],
        })
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    fn write_atomic(&self, name: &str, contents: &str) -> CliResult<PathBuf> {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp{}", std::process::id()));
        fs::write(&tmp, contents)?;
        fs::rename(&tmp, &target)?;
        Ok(target)
    }

    /// CSV with `# `-prefixed header lines (plus `extra`) ahead of `body`.
    pub fn write_csv(&self, name: &str, extra: &[String], body: &str) -> CliResult<PathBuf> {
        let mut text = String::new();
        for line in self.header.iter().chain(extra) {
            text.push_str("# ");
            text.push_str(line);
            text.push('\n');
        }
        text.push_str(body);
        self.write_atomic(name, &text)
    }

    /// Symmetric coordinate-format matrix, lower triangle, 1-based.
    pub fn write_matrix(&self, name: &str, extra: &[String], m: &CsrMatrix) -> CliResult<PathBuf> {
        let mut text = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
        for line in self.header.iter().chain(extra) {
            text.push_str("% ");
            text.push_str(line);
            text.push('\n');
        }
        text.push_str(&matrix_body(m));
        self.write_atomic(name, &text)
    }

    /// JSON object holding `fields` plus a `header` array.
    pub fn write_json(&self, name: &str, fields: serde_json::Map<String, serde_json::Value>) -> CliResult<PathBuf> {
        let mut doc = serde_json::Map::new();
        doc.insert("header".into(), self.header.clone().into());
        doc.extend(fields);
        let mut text = serde_json::to_string_pretty(&serde_json::Value::Object(doc)).expect("json serializes");
        text.push('\n');
        self.write_atomic(name, &text)
    }
}

/// Size line and lower-triangle entries of a coordinate-format file.
pub fn matrix_body(m: &CsrMatrix) -> String {
    let lower: Vec<_> = m.iter().filter(|(i, j, _)| i >= j).collect();
    let mut s = format!("{} {} {}\n", m.nrows(), m.ncols(), lower.len());
    for (i, j, v) in lower {
        s.push_str(&format!("{} {} {}\n", i + 1, j + 1, v));
    }
    s
}

/// Strips `#`/`%` comment lines (and the coordinate-format banner).
pub fn strip_header(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with('%'))
        .map(|l| format!("{l}\n"))
        .collect()
}
