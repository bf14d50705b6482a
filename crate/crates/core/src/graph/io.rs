//! Dataset files.
//!
//! * edges: UTF-8 text, one `src dst` pair per line.
//! * features: `FGNF`, u64 rows, u64 dim, then f32 row-major.
//! * labels: `FGNL`, u64 count, then u32 per node.
//! * masks: `FGNM`, u64 count, then u64 node IDs.
//!
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{Graph, PartitionAssignment};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const FEATURE_MAGIC: &[u8; 4] = b"FGNF";
const LABEL_MAGIC: &[u8; 4] = b"FGNL";
const MASK_MAGIC: &[u8; 4] = b"FGNM";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphPaths {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub train_mask: PathBuf,
    pub test_mask: PathBuf,
}

impl GraphPaths {
    /// Conventional file names inside one dataset directory.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        GraphPaths {
            edges: dir.join("edges.txt"),
            features: dir.join("features.bin"),
            labels: dir.join("labels.bin"),
            train_mask: dir.join("train.mask"),
            test_mask: dir.join("test.mask"),
        }
    }
}

pub fn write_graph(graph: &Graph, paths: &GraphPaths) -> Result<()> {
    let mut w = BufWriter::new(File::create(&paths.edges)?);
    for &(s, d) in graph.edges() {
        writeln!(w, "{s} {d}")?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(&paths.features)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&(graph.num_nodes() as u64).to_le_bytes())?;
    w.write_all(&(graph.feature_dim() as u64).to_le_bytes())?;
    for &x in graph.features().data() {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(&paths.labels)?);
    w.write_all(LABEL_MAGIC)?;
    w.write_all(&(graph.num_nodes() as u64).to_le_bytes())?;
    for &l in graph.labels() {
        w.write_all(&l.to_le_bytes())?;
    }
    w.flush()?;

    write_mask(&paths.train_mask, graph.train_mask())?;
    write_mask(&paths.test_mask, graph.test_mask())?;
    Ok(())
}

fn write_mask(path: &Path, nodes: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MASK_MAGIC)?;
    w.write_all(&(nodes.len() as u64).to_le_bytes())?;
    for &n in nodes {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_graph(paths: &GraphPaths) -> Result<Graph> {
    let (features, num_nodes) = read_features(&paths.features)?;
    let labels = read_labels(&paths.labels)?;
    if labels.len() != num_nodes {
        return Err(Error::Validation(format!(
            "{} labels but {num_nodes} feature rows",
            labels.len()
        )));
    }
    let edges = read_edges(&paths.edges)?;
    let train = read_mask(&paths.train_mask)?;
    let test = read_mask(&paths.test_mask)?;
    Graph::new(num_nodes, edges, features, labels, train, test)
}

fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut edges = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let mut field = |name: &str| -> Result<usize> {
            let tok = parts.next().ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("missing {name}"),
            })?;
            tok.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad {name} {tok:?}"),
            })
        };
        let s = field("source")?;
        let d = field("destination")?;
        if parts.next().is_some() {
            return Err(Error::Parse { line: line_no, msg: "trailing fields".into() });
        }
        edges.push((s, d));
    }
    Ok(edges)
}

struct BinReader {
    inner: BufReader<File>,
    name: String,
}

impl BinReader {
    fn open(path: &Path, magic: &[u8; 4]) -> Result<Self> {
        let mut r = BinReader { inner: BufReader::new(File::open(path)?), name: path.display().to_string() };
        let mut m = [0u8; 4];
        r.exact(&mut m)?;
        if &m != magic {
            return Err(Error::Format(format!(
                "{}: expected magic {:?}, found {:?}",
                r.name,
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&m)
            )));
        }
        Ok(r)
    }

    fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|_| Error::Format(format!("{}: truncated file", self.name)))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f32(&mut self) -> Result<f32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }

    fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(()),
            _ => Err(Error::Format(format!("{}: trailing bytes", self.name))),
        }
    }
}

fn read_features(path: &Path) -> Result<(Matrix, usize)> {
    let mut r = BinReader::open(path, FEATURE_MAGIC)?;
    let n = r.u64()? as usize;
    let dim = r.u64()? as usize;
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n * dim {
        data.push(r.f32()? as f64);
    }
    r.expect_eof()?;
    Ok((Matrix::from_vec(n, dim, data)?, n))
}

fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let mut r = BinReader::open(path, LABEL_MAGIC)?;
    let n = r.u64()? as usize;
    let labels = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    r.expect_eof()?;
    Ok(labels)
}

fn read_mask(path: &Path) -> Result<Vec<usize>> {
    let mut r = BinReader::open(path, MASK_MAGIC)?;
    let n = r.u64()? as usize;
    let nodes = (0..n).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    r.expect_eof()?;
    Ok(nodes)
}

/// Text lines `node_id part_id`.
pub fn write_assignment(path: &Path, assignment: &PartitionAssignment) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (n, &p) in assignment.parts().iter().enumerate() {
        writeln!(w, "{n} {p}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_assignment(path: &Path) -> Result<PartitionAssignment> {
    let reader = BufReader::new(File::open(path)?);
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let nums: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse { line: i + 1, msg: format!("bad assignment line {line:?}") })?;
        if nums.len() != 2 {
            return Err(Error::Parse { line: i + 1, msg: "expected `node part`".into() });
        }
        pairs.push((nums[0], nums[1]));
    }
    let n = pairs.len();
    let mut part_of = vec![usize::MAX; n];
    for (node, part) in pairs {
        if node >= n || part_of[node] != usize::MAX {
            return Err(Error::Validation(format!("node {node} missing or assigned twice")));
        }
        part_of[node] = part;
    }
    let k = part_of.iter().max().map_or(0, |&m| m + 1);
    PartitionAssignment::new(part_of, k)
}
