//! Output directory: data files, plot scripts, run manifest.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::job::JobSpec;
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub scenario: String,
    /// SHA-256 of the resolved job, defaults filled in.
    pub job_hash: String,
    pub threads: usize,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub exit_code: i32,
    pub outputs: Vec<OutputFile>,
}

pub struct OutDir {
    root: PathBuf,
    pub format: Format,
    written: Vec<OutputFile>,
}

pub fn job_hash(job: &JobSpec) -> String {
    let bytes = serde_json::to_vec(job).expect("job serializes");
    hex::encode(Sha256::digest(bytes))
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl OutDir {
    pub fn create(root: &Path, format: Format) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Io(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            format,
            written: Vec::new(),
        })
    }

    /// Writes `name` from a closure over a byte buffer and records its hash.
    pub fn write_with<F>(&mut self, name: &str, fill: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = Vec::new();
        fill(&mut buf).map_err(|e| CliError::Io(format!("{name}: {e}")))?;
        let path = self.root.join(name);
        let file = fs::File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        w.write_all(&buf)
            .and_then(|_| w.flush())
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(OutputFile {
            file: name.to_string(),
            bytes: buf.len(),
            sha256: hex::encode(Sha256::digest(&buf)),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        self.write_with(name, |buf| {
            serde_json::to_writer_pretty(&mut *buf, value)?;
            buf.push(b'\n');
            Ok(())
        })
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        self.write_with(name, |buf| buf.write_all(text.as_bytes()))
    }

    pub fn finish(self, mut manifest: RunManifest) -> Result<(), CliError> {
        manifest.outputs = self.written;
        let path = self.root.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

/// Column-oriented JSON for a CSV table: header names to value arrays.
pub fn csv_to_json(csv: &[u8]) -> serde_json::Value {
    let text = String::from_utf8_lossy(csv);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let mut columns: Vec<Vec<serde_json::Value>> = vec![Vec::new(); header.len()];
    for line in lines {
        for (c, cell) in line.split(',').enumerate().take(header.len()) {
            let v = cell
                .parse::<f64>()
                .ok()
                .and_then(serde_json::Number::from_f64)
                .map_or(serde_json::Value::Null, serde_json::Value::Number);
            columns[c].push(v);
        }
    }
    let map = header
        .into_iter()
        .zip(columns)
        .map(|(h, col)| (h.to_string(), serde_json::Value::Array(col)))
        .collect();
    serde_json::Value::Object(map)
}

/// Writes a table as `<stem>.csv` or `<stem>.json` depending on the format.
pub fn write_table<F>(out: &mut OutDir, stem: &str, fill: F) -> Result<String, CliError>
where
    F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
{
    match out.format {
        Format::Csv => {
            let name = format!("{stem}.csv");
            out.write_with(&name, fill)?;
            Ok(name)
        }
        Format::Json => {
            let mut buf = Vec::new();
            fill(&mut buf).map_err(|e| CliError::Io(format!("{stem}: {e}")))?;
            let name = format!("{stem}.json");
            out.write_json(&name, &csv_to_json(&buf))?;
            Ok(name)
        }
    }
}

const STATE_PANELS: [(&str, usize); 5] = [("S", 2), ("L1", 3), ("I", 4), ("L2", 5), ("R", 6)];

/// States and both controls against time, one panel each.
pub fn trajectory_plot(data: &str, title: &str) -> String {
    let mut s = gnuplot_head(title, 2, 4);
    for (name, col) in STATE_PANELS {
        s.push_str(&format!("set title '{name}(t)'\nplot '{data}' using 1:{col} with lines notitle\n"));
    }
    s.push_str(&format!(
        "set title 'controls'\nset yrange [-0.05:1.05]\n\
         plot '{data}' using 1:7 with steps title 'u1', '' using 1:8 with steps title 'u2'\n\
         set autoscale y\n"
    ));
    s.push_str("unset multiplot\n");
    s
}

/// Trajectory panels plus costates and switching functions.
pub fn optimal_plot(data: &str, title: &str) -> String {
    let mut s = gnuplot_head(title, 3, 3);
    for (name, col) in STATE_PANELS {
        s.push_str(&format!("set title '{name}(t)'\nplot '{data}' using 1:{col} with lines notitle\n"));
    }
    s.push_str(&format!(
        "set title 'controls'\nset yrange [-0.05:1.05]\n\
         plot '{data}' using 1:7 with steps title 'u1', '' using 1:8 with steps title 'u2'\n\
         set autoscale y\n\
         set title 'costates'\n\
         plot '{data}' using 1:9 with lines title 'lamS', '' using 1:10 with lines title 'lamL1', \
         '' using 1:11 with lines title 'lamI', '' using 1:12 with lines title 'lamL2'\n\
         set title 'switching functions'\n\
         plot '{data}' using 1:13 with lines title 'phi1', '' using 1:14 with lines title 'phi2', 0 with lines dt 2 notitle\n"
    ));
    s.push_str("unset multiplot\n");
    s
}

/// Six panels against beta: objective, four terminal classes, switch times.
pub fn sweep_plot(data: &str, title: &str, switch_columns: usize) -> String {
    let mut s = gnuplot_head(title, 2, 3);
    s.push_str("set xlabel 'beta'\n");
    for (name, col) in [("J", 2), ("L1(T)", 4), ("I(T)", 5), ("L2(T)", 6), ("R(T)", 7)] {
        s.push_str(&format!("set title '{name}'\nplot '{data}' using 1:{col} with linespoints pt 7 ps 0.4 notitle\n"));
    }
    let series: Vec<String> = (0..switch_columns)
        .map(|k| {
            let file = if k == 0 { format!("'{data}'") } else { "''".to_string() };
            format!("{file} using 1:{} with linespoints pt 7 ps 0.4 title 't{}'", 8 + k, k + 1)
        })
        .collect();
    s.push_str(&format!("set title 'switch times'\nplot {}\n", series.join(", ")));
    s.push_str("unset multiplot\n");
    s
}

fn gnuplot_head(title: &str, rows: usize, cols: usize) -> String {
    format!(
        "# gnuplot script; run from this directory\n\
         set datafile separator ','\n\
         set key autotitle columnhead\n\
         set terminal pngcairo size {}, {}\n\
         set output '{title}.png'\n\
         set multiplot layout {rows},{cols} title '{title}'\n",
        420 * cols,
        320 * rows
    )
}
